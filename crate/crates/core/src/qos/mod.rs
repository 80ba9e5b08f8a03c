//! Per-link rate allocation for flow groups.
//!
//! High-priority groups get a proportional share of each bottleneck first.
//! Low-priority groups then receive capacity `δ` at a time, always to the
//! (group, link) pair whose objective term is currently largest:
//!
//! `Obj = α h − β d ln z + γ (y + v) z`
//!
//! with `h` the unserved demand and `y`, `v` the delay and loss excess
//! measured for the pair.

mod baseline;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroupId, LinkId, Priority, QosPolicy, Sla, ValidationError};

pub use baseline::{fixed_weight, fixed_weights, fixed_weights_allocation};
pub use oracle::{brute_force_qos, OracleBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QosWeights {
    /// Rejected demand.
    pub alpha: f64,
    /// Proportional-fairness utility.
    pub beta: f64,
    /// Rate granted to pairs violating their SLA.
    pub gamma: f64,
    /// Grant size in Mbps.
    pub delta: f64,
    /// Rates below this are evaluated as this in the log term.
    pub z_floor: f64,
}

impl Default for QosWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 0.25,
            z_floor: 1e-3,
        }
    }
}

impl QosWeights {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ValidationError {
                    field: format!("qos.{name}"),
                    problem: "must be finite and >= 0".into(),
                });
            }
        }
        for (name, v) in [("delta", self.delta), ("z_floor", self.z_floor)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ValidationError {
                    field: format!("qos.{name}"),
                    problem: "must be > 0".into(),
                });
            }
        }
        Ok(())
    }

    /// Same weights multiplied by `factor`; `delta` and `z_floor` unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha: self.alpha * factor,
            beta: self.beta * factor,
            gamma: self.gamma * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QosError {
    #[error("demand {index} refers to link {link}, which is not in the snapshot")]
    UnknownLink { index: usize, link: LinkId },
    #[error("link {0} appears twice in the snapshot")]
    DuplicateLink(LinkId),
    #[error("demand {index}: {problem}")]
    InvalidDemand { index: usize, problem: String },
    #[error(
        "instance with {links} links and {groups} groups exceeds the exhaustive search budget \
         ({} links, {} groups)", OracleBudget::MAX_LINKS, OracleBudget::MAX_GROUPS
    )]
    OracleBudget { links: usize, groups: usize },
}

/// Link with the capacity the allocation may use.
#[derive(Debug, Clone, PartialEq)]
pub struct QosLink {
    pub link: LinkId,
    /// Nominal capacity scaled by the safety fraction, or the estimated safe
    /// available bandwidth.
    pub capacity_mbps: f64,
    /// `F(e)` restricted to links present in the snapshot.
    pub shares_with: Vec<LinkId>,
}

/// Expected traffic of one group on one link, with the quality the pair saw
/// in the last interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QosDemand {
    pub group: GroupId,
    pub link: LinkId,
    pub priority: Priority,
    /// `d = b x`, Mbps.
    pub demand_mbps: f64,
    pub sla: Sla,
    pub delay: f64,
    pub loss: f64,
}

impl QosDemand {
    pub fn delay_excess(&self) -> f64 {
        (self.delay - self.sla.delay).max(0.0)
    }

    pub fn loss_excess(&self) -> f64 {
        (self.loss - self.sla.loss).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QosSnapshot {
    pub links: Vec<QosLink>,
    pub demands: Vec<QosDemand>,
}

/// Index of the snapshot: link positions and `F(e) ∪ {e}` as positions.
#[derive(Debug, Clone)]
pub(crate) struct Topology {
    /// Position in `links` of each demand's link.
    pub demand_link: Vec<usize>,
    /// `F(e) ∪ {e}` per link, as positions in `links`.
    pub shared: Vec<Vec<usize>>,
}

impl QosSnapshot {
    pub(crate) fn topology(&self) -> Result<Topology, QosError> {
        let mut ids: Vec<(LinkId, usize)> =
            self.links.iter().enumerate().map(|(i, l)| (l.link, i)).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(QosError::DuplicateLink(w[0].0));
        }
        let position = |link: LinkId| {
            ids.binary_search_by_key(&link, |&(l, _)| l)
                .ok()
                .map(|i| ids[i].1)
        };
        let shared = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut set: Vec<usize> = l.shares_with.iter().filter_map(|&o| position(o)).collect();
                set.push(i);
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();
        let mut demand_link = Vec::with_capacity(self.demands.len());
        for (index, d) in self.demands.iter().enumerate() {
            let pos = position(d.link).ok_or(QosError::UnknownLink { index, link: d.link })?;
            if !(d.demand_mbps.is_finite() && d.demand_mbps >= 0.0) {
                return Err(QosError::InvalidDemand {
                    index,
                    problem: format!("demand must be finite and >= 0, got {}", d.demand_mbps),
                });
            }
            demand_link.push(pos);
        }
        Ok(Topology { demand_link, shared })
    }

    /// Number of distinct flow groups.
    pub fn group_count(&self) -> usize {
        let mut groups: Vec<GroupId> = self.demands.iter().map(|d| d.group).collect();
        groups.sort_unstable();
        groups.dedup();
        groups.len()
    }
}

/// Rates per demand plus the bookkeeping of the allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct QosSolution {
    /// Rate per demand, aligned with [`QosSnapshot::demands`].
    pub z: Vec<f64>,
    /// Remaining capacity per link, aligned with [`QosSnapshot::links`].
    pub remaining: Vec<f64>,
    pub objective: f64,
    /// Number of low-priority grants.
    pub grants: usize,
}

impl QosSolution {
    /// Unserved demand `h = max(0, d − z)` per demand.
    pub fn shortfall(&self, snapshot: &QosSnapshot) -> Vec<f64> {
        snapshot
            .demands
            .iter()
            .zip(&self.z)
            .map(|(d, &z)| (d.demand_mbps - z).max(0.0))
            .collect()
    }

    /// Data-plane encoding: normalized low-priority rates become WFQ
    /// weights and raw rates become shapers. High priority is never shaped.
    pub fn policy(&self, snapshot: &QosSnapshot) -> QosPolicy {
        QosPolicy::from_rates(
            snapshot
                .demands
                .iter()
                .zip(&self.z)
                .map(|(d, &z)| (d.group, d.link, d.priority, z)),
        )
    }
}

/// `Obj` of one pair at rate `z`.
pub fn qos_objective_term(d: &QosDemand, z: f64, w: &QosWeights) -> f64 {
    let h = (d.demand_mbps - z).max(0.0);
    let slack = d.delay_excess() + d.loss_excess();
    let utility = if d.demand_mbps > 0.0 {
        d.demand_mbps * z.max(w.z_floor).ln()
    } else {
        0.0
    };
    w.alpha * h - w.beta * utility + w.gamma * slack * z
}

/// Sum of [`qos_objective_term`] over all demands.
pub fn qos_objective(snapshot: &QosSnapshot, z: &[f64], w: &QosWeights) -> f64 {
    snapshot
        .demands
        .iter()
        .zip(z)
        .map(|(d, &z)| qos_objective_term(d, z, w))
        .sum()
}

/// High-priority pass: each pair gets `min(d, c · d / Σ d)` where the sum
/// runs over the high-priority demand of the link's bottleneck, and the
/// rate is charged to every link of that bottleneck.
pub fn allocate_high_priority(
    snapshot: &QosSnapshot,
    weights: &QosWeights,
) -> Result<QosSolution, QosError> {
    let topo = snapshot.topology()?;
    Ok(high_priority_pass(snapshot, &topo, weights))
}

pub(crate) fn high_priority_pass(
    snapshot: &QosSnapshot,
    topo: &Topology,
    weights: &QosWeights,
) -> QosSolution {
    let mut high_demand = vec![0.0; snapshot.links.len()];
    for (i, d) in snapshot.demands.iter().enumerate() {
        if d.priority == Priority::High {
            high_demand[topo.demand_link[i]] += d.demand_mbps;
        }
    }
    let mut remaining: Vec<f64> = snapshot.links.iter().map(|l| l.capacity_mbps.max(0.0)).collect();
    let mut z = vec![0.0; snapshot.demands.len()];
    for (i, d) in snapshot.demands.iter().enumerate() {
        if d.priority != Priority::High || d.demand_mbps <= 0.0 {
            continue;
        }
        let e = topo.demand_link[i];
        let group_demand: f64 = topo.shared[e].iter().map(|&o| high_demand[o]).sum();
        let capacity = snapshot.links[e].capacity_mbps.max(0.0);
        let rate = d.demand_mbps.min(capacity * d.demand_mbps / group_demand);
        z[i] = rate;
        for &o in &topo.shared[e] {
            remaining[o] -= rate;
        }
    }
    let objective = qos_objective(snapshot, &z, weights);
    QosSolution {
        z,
        remaining,
        objective,
        grants: 0,
    }
}

/// One accepted low-priority grant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grant {
    /// Index into [`QosSnapshot::demands`].
    pub demand: usize,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Low-priority phase as an explicit iterator, so callers can inspect the
/// solution between grants.
#[derive(Debug, Clone)]
pub struct LowPriorityLocalSearch<'a> {
    snapshot: &'a QosSnapshot,
    weights: &'a QosWeights,
    topo: Topology,
    solution: QosSolution,
    /// Low-priority demands with positive demand.
    candidates: Vec<usize>,
    done: bool,
}

/// Slack kept when comparing remaining capacity against `δ`.
const CAPACITY_EPS: f64 = 1e-9;

impl<'a> LowPriorityLocalSearch<'a> {
    /// Start from the high-priority allocation of `snapshot`.
    pub fn new(snapshot: &'a QosSnapshot, weights: &'a QosWeights) -> Result<Self, QosError> {
        let topo = snapshot.topology()?;
        let solution = high_priority_pass(snapshot, &topo, weights);
        Ok(Self::from_parts(snapshot, weights, topo, solution))
    }

    pub(crate) fn from_parts(
        snapshot: &'a QosSnapshot,
        weights: &'a QosWeights,
        topo: Topology,
        solution: QosSolution,
    ) -> Self {
        let candidates = snapshot
            .demands
            .iter()
            .enumerate()
            .filter(|(_, d)| d.priority == Priority::Low && d.demand_mbps > 0.0)
            .map(|(i, _)| i)
            .collect();
        Self {
            snapshot,
            weights,
            topo,
            solution,
            candidates,
            done: false,
        }
    }

    pub fn solution(&self) -> &QosSolution {
        &self.solution
    }

    /// `F(e) ∪ {e}` of the link at `position` in the snapshot.
    pub fn shared_links(&self, position: usize) -> &[usize] {
        &self.topo.shared[position]
    }

    fn eligible(&self, e: usize) -> bool {
        let delta = self.weights.delta;
        self.topo.shared[e]
            .iter()
            .all(|&o| self.solution.remaining[o] >= delta - CAPACITY_EPS)
    }

    /// Perform one grant, or return `None` once no spare capacity is left or
    /// the best pair would not lower the objective.
    pub fn step(&mut self) -> Option<Grant> {
        if self.done {
            return None;
        }
        let eligible: Vec<bool> = (0..self.snapshot.links.len()).map(|e| self.eligible(e)).collect();
        // Ties go to the lowest (group, link); strict comparison keeps the
        // first one seen in that order.
        let mut best: Option<(f64, GroupId, LinkId, usize)> = None;
        for &i in &self.candidates {
            if !eligible[self.topo.demand_link[i]] {
                continue;
            }
            let d = &self.snapshot.demands[i];
            let term = qos_objective_term(d, self.solution.z[i], self.weights);
            let better = match best {
                None => true,
                Some((b, g, l, _)) => term > b || (term == b && (d.group, d.link) < (g, l)),
            };
            if better {
                best = Some((term, d.group, d.link, i));
            }
        }
        let Some((term, _, _, i)) = best else {
            self.done = true;
            return None;
        };
        let d = &self.snapshot.demands[i];
        let z_new = self.solution.z[i] + self.weights.delta;
        let after = self.solution.objective - term + qos_objective_term(d, z_new, self.weights);
        if after >= self.solution.objective {
            self.done = true;
            return None;
        }
        let before = self.solution.objective;
        self.solution.z[i] = z_new;
        for &o in &self.topo.shared[self.topo.demand_link[i]] {
            self.solution.remaining[o] -= self.weights.delta;
        }
        self.solution.objective = after;
        self.solution.grants += 1;
        Some(Grant {
            demand: i,
            objective_before: before,
            objective_after: after,
        })
    }

    /// Run to completion.
    pub fn finish(mut self) -> QosSolution {
        while self.step().is_some() {}
        // drop accumulated rounding of the incremental objective
        self.solution.objective = qos_objective(self.snapshot, &self.solution.z, self.weights);
        self.solution
    }
}

/// High-priority pass followed by the low-priority local search.
pub fn optimize_qos_centralized(
    snapshot: &QosSnapshot,
    weights: &QosWeights,
) -> Result<(QosSolution, QosPolicy), QosError> {
    let solution = LowPriorityLocalSearch::new(snapshot, weights)?.finish();
    let policy = solution.policy(snapshot);
    Ok((solution, policy))
}

/// Independent runs on each access router's own snapshot. Agents share
/// nothing; results are returned in input order.
pub fn optimize_qos_distributed(
    snapshots: &[QosSnapshot],
    weights: &QosWeights,
) -> Result<Vec<(QosSolution, QosPolicy)>, QosError> {
    snapshots
        .iter()
        .map(|s| optimize_qos_centralized(s, weights))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn demand(group: usize, link: usize, priority: Priority, d: f64) -> QosDemand {
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

    fn single_link(capacity: f64, demands: Vec<QosDemand>) -> QosSnapshot {
        QosSnapshot {
            links: vec![QosLink {
                link: LinkId(0),
                capacity_mbps: capacity,
                shares_with: vec![],
            }],
            demands,
        }
    }

    #[test]
    fn objective_term_examples() {
        let w = QosWeights::default();
        let d = demand(0, 0, Priority::Low, 4.0);
        assert!((qos_objective_term(&d, 4.0, &w) + w.beta * 4.0 * 4f64.ln()).abs() < 1e-12);
        let full_rejection = w.alpha * 4.0 - w.beta * 4.0 * w.z_floor.ln();
        assert!((qos_objective_term(&d, 0.0, &w) - full_rejection).abs() < 1e-12);

        let mut late = d.clone();
        late.delay = 1.5;
        let at_d = qos_objective_term(&late, 4.0, &w);
        let at_2d = qos_objective_term(&late, 8.0, &w);
        let gamma_part = |z: f64| w.gamma * 0.5 * z;
        let utility_part = |z: f64| -w.beta * 4.0 * f64::ln(z);
        assert!((at_d - gamma_part(4.0) - utility_part(4.0)).abs() < 1e-12);
        assert!((at_2d - gamma_part(8.0) - utility_part(8.0)).abs() < 1e-12);
        assert!((gamma_part(8.0) - 2.0 * gamma_part(4.0)).abs() < 1e-12);
    }

    #[test]
    fn high_priority_fully_served_under_capacity() {
        let s = single_link(10.0, vec![demand(0, 0, Priority::High, 3.0), demand(1, 0, Priority::High, 4.0)]);
        let sol = allocate_high_priority(&s, &QosWeights::default()).unwrap();
        assert_eq!(sol.z, vec![3.0, 4.0]);
        assert!((sol.remaining[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn high_priority_shares_a_bottleneck_proportionally() {
        let s = QosSnapshot {
            links: vec![
                QosLink { link: LinkId(0), capacity_mbps: 10.0, shares_with: vec![LinkId(1)] },
                QosLink { link: LinkId(1), capacity_mbps: 10.0, shares_with: vec![LinkId(0)] },
            ],
            demands: vec![demand(0, 0, Priority::High, 8.0), demand(1, 1, Priority::High, 8.0)],
        };
        let sol = allocate_high_priority(&s, &QosWeights::default()).unwrap();
        assert_eq!(sol.z, vec![5.0, 5.0]);
        assert!(sol.remaining.iter().all(|r| r.abs() < 1e-12));
        let policy = sol.policy(&s);
        assert!(policy.rules.iter().all(|r| r.shaper_mbps.is_none()));
    }

    #[test]
    fn violating_group_stops_at_its_demand() {
        let mut d = demand(0, 0, Priority::Low, 6.0);
        d.delay = d.sla.delay + 1.0;
        let s = single_link(10.0, vec![d]);
        let w = QosWeights { alpha: 10.0, beta: 1.0, gamma: 1.0, delta: 0.5, z_floor: 1e-3 };
        let (sol, _) = optimize_qos_centralized(&s, &w).unwrap();
        assert_eq!(sol.z, vec![6.0]);
        assert_eq!(sol.grants, 12);
    }

    #[test]
    fn identical_groups_split_evenly() {
        let s = single_link(8.0, vec![demand(0, 0, Priority::Low, 10.0), demand(1, 0, Priority::Low, 10.0)]);
        let (sol, policy) = optimize_qos_centralized(&s, &QosWeights::default()).unwrap();
        assert_eq!(sol.z, vec![4.0, 4.0]);
        let w = |g| policy.rule(GroupId(g), LinkId(0)).unwrap().wfq_weight;
        assert_eq!(w(0), Some(0.5));
        assert_eq!(w(1), Some(0.5));
        assert_eq!(policy.rule(GroupId(0), LinkId(0)).unwrap().shaper_mbps, Some(4.0));
    }

    #[test]
    fn no_spare_capacity_means_no_grants() {
        let s = single_link(
            5.1,
            vec![demand(0, 0, Priority::High, 5.0), demand(1, 0, Priority::Low, 3.0)],
        );
        let (sol, _) = optimize_qos_centralized(&s, &QosWeights::default()).unwrap();
        assert_eq!(sol.z, vec![5.0, 0.0]);
        assert_eq!(sol.grants, 0);
    }

    #[test]
    fn unknown_link_is_an_error() {
        let s = single_link(5.0, vec![demand(0, 3, Priority::Low, 1.0)]);
        assert!(matches!(
            optimize_qos_centralized(&s, &QosWeights::default()),
            Err(QosError::UnknownLink { index: 0, .. })
        ));
    }
}
