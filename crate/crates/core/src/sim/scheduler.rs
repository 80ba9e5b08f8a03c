//! Fluid model of the class-based scheduler of one overlay link: strict
//! priority for the high classes, weighted fair queueing with shapers for
//! the low classes.

use crate::model::Priority;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerEntry {
    pub priority: Priority,
    pub offered: f64,
    /// Normalized WFQ weight; ignored for high priority.
    pub weight: f64,
    /// Maximum rate; `None` means unshaped.
    pub shaper: Option<f64>,
}

/// Admitted rate per entry on a link of `capacity` Mbps.
///
/// High priority is served first, scaled down proportionally only if it
/// alone exceeds the capacity. The residual is water-filled over the low
/// entries by weight, each capped by its offered rate and shaper; capacity a
/// capped entry leaves unused goes to the others in proportion to their
/// weights. Entries with zero weight only get what positive-weight entries
/// leave.
pub fn scheduler_model(capacity: f64, entries: &[SchedulerEntry]) -> Vec<f64> {
    let mut admitted = vec![0.0; entries.len()];
    let high_offered: f64 = entries
        .iter()
        .filter(|e| e.priority == Priority::High)
        .map(|e| e.offered)
        .sum();
    let high_scale = if high_offered > capacity {
        capacity / high_offered
    } else {
        1.0
    };
    let mut residual = capacity;
    for (a, e) in admitted.iter_mut().zip(entries) {
        if e.priority == Priority::High {
            *a = e.offered * high_scale;
            residual -= *a;
        }
    }
    residual = residual.max(0.0);

    let limit = |e: &SchedulerEntry| e.shaper.map_or(e.offered, |s| e.offered.min(s.max(0.0)));
    let low: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].priority == Priority::Low && limit(&entries[i]) > 0.0)
        .collect();
    let (weighted, unweighted): (Vec<usize>, Vec<usize>) =
        low.into_iter().partition(|&i| entries[i].weight > 0.0);
    for (set, equal) in [(weighted, false), (unweighted, true)] {
        let mut active = set;
        while !active.is_empty() && residual > 0.0 {
            let weight = |i: usize| if equal { 1.0 } else { entries[i].weight };
            let total: f64 = active.iter().map(|&i| weight(i)).sum();
            let (capped, open): (Vec<usize>, Vec<usize>) = active
                .iter()
                .partition(|&&i| limit(&entries[i]) <= residual * weight(i) / total);
            if capped.is_empty() {
                for &i in &open {
                    admitted[i] = residual * weight(i) / total;
                }
                residual = 0.0;
                break;
            }
            for &i in &capped {
                admitted[i] = limit(&entries[i]);
                residual -= admitted[i];
            }
            residual = residual.max(0.0);
            active = open;
        }
    }
    admitted
}
