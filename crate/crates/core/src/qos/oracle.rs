//! Exhaustive search over the `δ` grid of low-priority rates, for checking
//! the local search on small instances.

use crate::model::Priority;

use super::{high_priority_pass, qos_objective, qos_objective_term, QosError, QosSnapshot, QosSolution, QosWeights};

/// Size limits of [`brute_force_qos`].
#[derive(Debug, Clone, Copy)]
pub struct OracleBudget;

impl OracleBudget {
    pub const MAX_LINKS: usize = 2;
    pub const MAX_GROUPS: usize = 4;

    pub fn admits(snapshot: &QosSnapshot) -> bool {
        snapshot.links.len() <= Self::MAX_LINKS && snapshot.group_count() <= Self::MAX_GROUPS
    }
}

struct Search<'a> {
    snapshot: &'a QosSnapshot,
    weights: &'a QosWeights,
    shared: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
    remaining: Vec<f64>,
    current: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn visit(&mut self, depth: usize, partial: f64) {
        if depth == self.pairs.len() {
            if self.best.as_ref().map_or(true, |(b, _)| partial < *b) {
                self.best = Some((partial, self.current.clone()));
            }
            return;
        }
        let (i, e) = self.pairs[depth];
        let delta = self.weights.delta;
        let room = self.shared[e]
            .iter()
            .map(|&o| self.remaining[o])
            .fold(f64::INFINITY, f64::min);
        let max_units = if room < 0.0 { 0 } else { (room / delta + 1e-9).floor() as usize };
        let d = &self.snapshot.demands[i];
        for units in 0..=max_units {
            let z = units as f64 * delta;
            let term = qos_objective_term(d, z, self.weights);
            for &o in &self.shared[e] {
                self.remaining[o] -= z;
            }
            self.current[depth] = units;
            self.visit(depth + 1, partial + term);
            for &o in &self.shared[e] {
                self.remaining[o] += z;
            }
        }
    }
}

/// Best grid allocation of the low-priority demands after the same
/// high-priority pass as the local search. Rejects instances beyond
/// [`OracleBudget`].
pub fn brute_force_qos(snapshot: &QosSnapshot, weights: &QosWeights) -> Result<QosSolution, QosError> {
    if !OracleBudget::admits(snapshot) {
        return Err(QosError::OracleBudget {
            links: snapshot.links.len(),
            groups: snapshot.group_count(),
        });
    }
    let topo = snapshot.topology()?;
    let high = high_priority_pass(snapshot, &topo, weights);
    let pairs: Vec<(usize, usize)> = snapshot
        .demands
        .iter()
        .enumerate()
        .filter(|(_, d)| d.priority == Priority::Low && d.demand_mbps > 0.0)
        .map(|(i, _)| (i, topo.demand_link[i]))
        .collect();
    // everything outside the searched pairs is fixed
    let fixed: f64 = snapshot
        .demands
        .iter()
        .enumerate()
        .filter(|(i, _)| !pairs.iter().any(|&(p, _)| p == *i))
        .map(|(i, d)| qos_objective_term(d, high.z[i], weights))
        .sum();
    let mut search = Search {
        snapshot,
        weights,
        shared: topo.shared.clone(),
        pairs,
        remaining: high.remaining.clone(),
        current: Vec::new(),
        best: None,
    };
    search.current = vec![0; search.pairs.len()];
    search.visit(0, fixed);
    let (_, units) = search.best.expect("the all-zero allocation is always feasible");

    let mut z = high.z.clone();
    let mut remaining = high.remaining.clone();
    for (&(i, e), &u) in search.pairs.iter().zip(&units) {
        z[i] = u as f64 * weights.delta;
        for &o in &topo.shared[e] {
            remaining[o] -= z[i];
        }
    }
    let objective = qos_objective(snapshot, &z, weights);
    Ok(QosSolution {
        z,
        remaining,
        objective,
        grants: units.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GroupId, LinkId, Sla};
    use crate::qos::{optimize_qos_centralized, QosDemand, QosLink};

    fn pair(group: usize, link: usize, priority: Priority, d: f64) -> QosDemand {
        QosDemand {
            group: GroupId(group),
            link: LinkId(link),
            priority,
            demand_mbps: d,
            sla: Sla::new(1.0, 1.0),
            delay: 0.0,
            loss: 0.0,
        }
    }

    #[test]
    fn budget_is_enforced() {
        let links = (0..3)
            .map(|i| QosLink { link: LinkId(i), capacity_mbps: 1.0, shares_with: vec![] })
            .collect();
        let s = QosSnapshot { links, demands: vec![pair(0, 0, Priority::Low, 1.0)] };
        assert!(matches!(
            brute_force_qos(&s, &QosWeights::default()),
            Err(QosError::OracleBudget { links: 3, groups: 1 })
        ));
    }

    #[test]
    fn matches_local_search_on_a_symmetric_link() {
        let s = QosSnapshot {
            links: vec![QosLink { link: LinkId(0), capacity_mbps: 3.0, shares_with: vec![] }],
            demands: vec![
                pair(0, 0, Priority::High, 1.0),
                pair(1, 0, Priority::Low, 2.0),
                pair(2, 0, Priority::Low, 2.0),
            ],
        };
        let w = QosWeights::default();
        let oracle = brute_force_qos(&s, &w).unwrap();
        let (ls, _) = optimize_qos_centralized(&s, &w).unwrap();
        assert_eq!(oracle.z, vec![1.0, 1.0, 1.0]);
        assert!((oracle.objective - ls.objective).abs() < 1e-9);
    }
}
