//! Fixed-weights baseline: WFQ weights from the latency-rate bound
//! `d ≥ z / (w C)`, i.e. `w = z / (D C)` with `z` the peak traffic.

use crate::model::{Priority, QosPolicy};

use super::{high_priority_pass, qos_objective, QosError, QosSnapshot, QosSolution, QosWeights};

/// Raw (unnormalized) weight for `peak_mbps` of traffic with delay bound
/// `sla_delay` on a link of `capacity_mbps`.
pub fn fixed_weight(peak_mbps: f64, sla_delay: f64, capacity_mbps: f64) -> f64 {
    peak_mbps / (sla_delay * capacity_mbps)
}

/// Weights for the low-priority demands of `snapshot`, whose demands are
/// read as peak traffic and whose link capacities as nominal capacities.
/// No shapers are installed.
pub fn fixed_weights(snapshot: &QosSnapshot) -> Result<QosPolicy, QosError> {
    let topo = snapshot.topology()?;
    Ok(QosPolicy::from_weights(
        snapshot
            .demands
            .iter()
            .enumerate()
            .filter(|(_, d)| d.priority == Priority::Low)
            .map(|(i, d)| {
                let capacity = snapshot.links[topo.demand_link[i]].capacity_mbps;
                (d.group, d.link, fixed_weight(d.demand_mbps, d.sla.delay, capacity))
            }),
    ))
}

/// Rates a fixed-weights scheduler would hand out on the snapshot: the
/// high-priority pass, then each bottleneck's remaining capacity
/// water-filled over its low-priority demands by fixed weight, capped at
/// demand and rounded down to the `δ` grid.
pub fn fixed_weights_allocation(
    snapshot: &QosSnapshot,
    weights: &QosWeights,
) -> Result<QosSolution, QosError> {
    let topo = snapshot.topology()?;
    let mut solution = high_priority_pass(snapshot, &topo, weights);
    let n = snapshot.links.len();

    // connected components of the sharing relation
    let mut component = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = count;
        while let Some(e) = stack.pop() {
            for &o in &topo.shared[e] {
                if component[o] == usize::MAX {
                    component[o] = count;
                    stack.push(o);
                }
            }
        }
        count += 1;
    }

    for c in 0..count {
        let residual = (0..n)
            .filter(|&e| component[e] == c)
            .map(|e| solution.remaining[e])
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let members: Vec<(usize, f64, f64)> = snapshot
            .demands
            .iter()
            .enumerate()
            .filter(|(i, d)| {
                d.priority == Priority::Low && d.demand_mbps > 0.0 && component[topo.demand_link[*i]] == c
            })
            .map(|(i, d)| {
                let capacity = snapshot.links[topo.demand_link[i]].capacity_mbps;
                (i, fixed_weight(d.demand_mbps, d.sla.delay, capacity), d.demand_mbps)
            })
            .collect();
        let shares = water_fill(residual, &members);
        for (&(i, _, _), share) in members.iter().zip(shares) {
            let z = (share / weights.delta + 1e-9).floor() * weights.delta;
            solution.z[i] = z;
            for &o in &topo.shared[topo.demand_link[i]] {
                solution.remaining[o] -= z;
            }
        }
    }
    solution.objective = qos_objective(snapshot, &solution.z, weights);
    Ok(solution)
}

/// Weighted max-min split of `capacity` over `(id, weight, cap)` entries.
fn water_fill(capacity: f64, entries: &[(usize, f64, f64)]) -> Vec<f64> {
    let mut share = vec![0.0; entries.len()];
    let mut active: Vec<usize> = (0..entries.len()).collect();
    let mut left = capacity;
    while !active.is_empty() && left > 0.0 {
        let total: f64 = active.iter().map(|&j| entries[j].1).sum();
        if total <= 0.0 {
            break;
        }
        let saturated: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&j| entries[j].2 <= left * entries[j].1 / total)
            .collect();
        if saturated.is_empty() {
            for &j in &active {
                share[j] = left * entries[j].1 / total;
            }
            break;
        }
        for &j in &saturated {
            share[j] = entries[j].2;
            left -= entries[j].2;
        }
        active.retain(|j| !saturated.contains(j));
    }
    share
}
