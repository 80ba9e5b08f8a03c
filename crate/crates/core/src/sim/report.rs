//! SLA accounting per monitoring interval and per class.

use crate::model::{GroupId, TrafficClass};

/// Quality one flow group saw during one monitoring interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRecord {
    pub interval_end: f64,
    pub group: GroupId,
    pub class: TrafficClass,
    /// Mean offered rate over the interval (Mbps).
    pub offered_mbps: f64,
    /// Lost fraction of the offered traffic, scheduler drops included.
    pub loss: f64,
    /// Offered-traffic weighted mean delay (s).
    pub delay: f64,
    pub loss_ok: bool,
    pub delay_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassReport {
    pub class: TrafficClass,
    /// Number of (group, interval) samples with traffic.
    pub samples: usize,
    pub loss_sat_pct: f64,
    pub delay_sat_pct: f64,
    pub mean_loss_pct: f64,
    pub mean_delay_s: f64,
}

/// Per-class satisfaction rates, in [`TrafficClass::ALL`] order. Classes
/// without traffic are omitted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlaReport {
    pub classes: Vec<ClassReport>,
}

impl SlaReport {
    pub fn from_intervals(records: &[IntervalRecord]) -> Self {
        let classes = TrafficClass::ALL
            .iter()
            .filter_map(|&class| {
                let rows: Vec<&IntervalRecord> = records.iter().filter(|r| r.class == class).collect();
                if rows.is_empty() {
                    return None;
                }
                let n = rows.len() as f64;
                let pct = |count: usize| 100.0 * count as f64 / n;
                Some(ClassReport {
                    class,
                    samples: rows.len(),
                    loss_sat_pct: pct(rows.iter().filter(|r| r.loss_ok).count()),
                    delay_sat_pct: pct(rows.iter().filter(|r| r.delay_ok).count()),
                    mean_loss_pct: 100.0 * rows.iter().map(|r| r.loss).sum::<f64>() / n,
                    mean_delay_s: rows.iter().map(|r| r.delay).sum::<f64>() / n,
                })
            })
            .collect();
        Self { classes }
    }

    pub fn class(&self, class: TrafficClass) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == class)
    }
}
