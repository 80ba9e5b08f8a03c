//! Instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdwan_core::model::{GroupId, LinkId, Priority, Sla};
use sdwan_core::qos::{QosDemand, QosLink, QosSnapshot};
use sdwan_core::Scenario;

/// Shape of a random rate-allocation snapshot.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotShape {
    pub max_links: usize,
    pub max_groups: usize,
    pub max_capacity: f64,
    pub max_demand: f64,
}

/// Random snapshot: links optionally share one bottleneck (then with equal
/// capacity), each group sits on a nonempty subset of the links.
pub fn random_snapshot(seed: u64, shape: SnapshotShape) -> QosSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_links = rng.random_range(1..=shape.max_links);
    let n_groups = rng.random_range(1..=shape.max_groups);
    let shared = n_links > 1 && rng.random_bool(0.5);
    let common = rng.random_range(0.5..shape.max_capacity);
    let links = (0..n_links)
        .map(|e| QosLink {
            link: LinkId(e),
            capacity_mbps: if shared {
                common
            } else {
                rng.random_range(0.5..shape.max_capacity)
            },
            shares_with: if shared {
                (0..n_links).filter(|&o| o != e).map(LinkId).collect()
            } else {
                Vec::new()
            },
        })
        .collect();
    let mut demands = Vec::new();
    for k in 0..n_groups {
        let priority = if rng.random_bool(0.3) { Priority::High } else { Priority::Low };
        let sla = Sla::new(rng.random_range(0.04..0.8), rng.random_range(0.0..0.1));
        let first = rng.random_range(0..n_links);
        for e in 0..n_links {
            if e != first && !rng.random_bool(0.5) {
                continue;
            }
            let delay = if rng.random_bool(0.3) {
                sla.delay * rng.random_range(1.0..3.0)
            } else {
                sla.delay * rng.random_range(0.1..1.0)
            };
            let loss = if rng.random_bool(0.3) {
                sla.loss + rng.random_range(0.0..0.1)
            } else {
                sla.loss * rng.random_range(0.0..1.0)
            };
            demands.push(QosDemand {
                group: GroupId(k),
                link: LinkId(e),
                priority,
                demand_mbps: rng.random_range(0.0..shape.max_demand),
                sla,
                delay,
                loss,
            });
        }
    }
    QosSnapshot { links, demands }
}

/// Σ z over `F(e) ∪ {e}` for every link of the snapshot.
pub fn bottleneck_load(snapshot: &QosSnapshot, z: &[f64]) -> Vec<f64> {
    snapshot
        .links
        .iter()
        .map(|l| {
            snapshot
                .demands
                .iter()
                .zip(z)
                .filter(|(d, _)| d.link == l.link || l.shares_with.contains(&d.link))
                .map(|(_, z)| z)
                .sum()
        })
        .collect()
}

/// One hub and one spoke joined by a single MPLS link whose bottleneck is
/// the spoke port. `groups` lists (class, constant Mbps); the spoke port
/// carries `cross_mbps` of constant cross-traffic.
pub fn single_link_toml(duration_s: f64, spoke_capacity: f64, cross_mbps: f64, groups: &[(&str, f64)]) -> String {
    let mut out = format!(
        r#"seed = 7

[sim]
duration_s = {duration_s:.1}
spr_period_s = 50.0

[[networks]]
id = "mpls"
kind = "mpls"
prop_delay_ms = 10.0

[[nodes]]
id = "hub"
role = "hub"

[[nodes]]
id = "spoke"
role = "spoke"

[[ports]]
node = "hub"
network = "mpls"
capacity_mbps = 100.0

[[ports]]
node = "spoke"
network = "mpls"
capacity_mbps = {spoke_capacity:.3}

[ports.cross_traffic]
base_mbps = {cross_mbps:.3}

[[overlay_links]]
id = "hub-spoke"
src = "hub"
dst = "spoke"
network = "mpls"
"#
    );
    for (i, (class, mbps)) in groups.iter().enumerate() {
        out.push_str(&format!(
            r#"
[[flow_groups]]
id = "g{i}"
src = "hub"
dst = "spoke"
class = "{class}"

[flow_groups.traffic]
base_mbps = {mbps:.3}
"#
        ));
    }
    out
}

pub fn single_link(duration_s: f64, spoke_capacity: f64, cross_mbps: f64, groups: &[(&str, f64)]) -> Scenario {
    Scenario::parse(&single_link_toml(duration_s, spoke_capacity, cross_mbps, groups)).unwrap()
}

/// The reference scenario shortened to `duration_s`.
pub fn short_reference(duration_s: f64) -> Scenario {
    let mut file = Scenario::reference().source().clone();
    file.sim.duration_s = duration_s;
    sdwan_core::model::validate_scenario(&file).unwrap()
}
