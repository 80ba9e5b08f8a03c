//! Domain types shared by the estimator, the optimizers and the simulator.

mod scenario;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use scenario::{
    validate_scenario, FlowGroupConfig, LinkConfig, NetworkConfig, NodeConfig, PortConfig,
    Scenario, ScenarioError, ScenarioFile, Settings, ValidationError,
};

macro_rules! index_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_id!(
    /// Position of a transport network in its scenario.
    NetworkId
);
index_id!(NodeId);
index_id!(PortId);
index_id!(
    /// Overlay link `e`.
    LinkId
);
index_id!(
    /// Flow group instance `k`.
    GroupId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Mpls,
    Internet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportNetwork {
    pub id: NetworkId,
    pub name: String,
    pub kind: NetworkKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Hub,
    Spoke,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub role: NodeRole,
}

/// Access link of one node into one transport network.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderlayPort {
    pub id: PortId,
    pub node: NodeId,
    pub network: NetworkId,
    pub capacity_mbps: f64,
}

/// Edge-to-edge tunnel over one transport network.
///
/// The tunnel is limited by the smaller of its two access ports (the
/// destination port on ties). `bottleneck_group` holds the *other* links
/// whose bottleneck is the same port, so membership is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayLink {
    pub id: LinkId,
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub network: NetworkId,
    pub nominal_capacity_mbps: f64,
    /// One-way propagation delay in seconds.
    pub prop_delay: f64,
    pub bottleneck_port: PortId,
    pub bottleneck_group: Vec<LinkId>,
}

impl OverlayLink {
    /// `F(e) ∪ {e}` in ascending id order.
    pub fn shared_with_self(&self) -> Vec<LinkId> {
        let mut all = self.bottleneck_group.clone();
        all.push(self.id);
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Critical,
    Voip,
    Office,
    Bulk,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 4] = [
        TrafficClass::Critical,
        TrafficClass::Voip,
        TrafficClass::Office,
        TrafficClass::Bulk,
    ];

    pub fn priority(self) -> Priority {
        match self {
            TrafficClass::Critical | TrafficClass::Voip => Priority::High,
            TrafficClass::Office | TrafficClass::Bulk => Priority::Low,
        }
    }

    /// Default delay and loss bounds per class.
    pub fn default_sla(self) -> Sla {
        match self {
            TrafficClass::Critical => Sla::new(0.040, 0.0),
            TrafficClass::Voip => Sla::new(0.060, 0.02),
            TrafficClass::Office => Sla::new(0.250, 0.05),
            TrafficClass::Bulk => Sla::new(0.800, 0.10),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Critical => "critical",
            TrafficClass::Voip => "voip",
            TrafficClass::Office => "office",
            TrafficClass::Bulk => "bulk",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrafficClass::Critical => "Critical",
            TrafficClass::Voip => "VoIP",
            TrafficClass::Office => "Office",
            TrafficClass::Bulk => "Bulk",
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Priority {
    High,
    Low,
}

/// Maximum tolerated delay (s) and loss (fraction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sla {
    pub delay: f64,
    pub loss: f64,
}

impl Sla {
    pub const fn new(delay: f64, loss: f64) -> Self {
        Self { delay, loss }
    }
}

/// One (origin-destination, class) demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGroup {
    pub id: GroupId,
    pub name: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub class: TrafficClass,
    pub sla: Sla,
    /// `E_k`, ascending.
    pub allowed_links: Vec<LinkId>,
    pub traffic: crate::sim::TrafficProfile,
}

impl FlowGroup {
    pub fn priority(&self) -> Priority {
        self.class.priority()
    }
}

/// Link quality observed over one monitoring interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMeasurement {
    pub link: LinkId,
    pub interval_end: f64,
    pub delay: f64,
    pub loss: f64,
    pub jitter: f64,
    /// Traffic injected by the access routers on this link (Mbps).
    pub throughput: f64,
}

/// Split ratios of one flow group over its allowed links.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSplit {
    pub links: Vec<LinkId>,
    pub ratios: Vec<f64>,
}

impl GroupSplit {
    pub fn ratio(&self, link: LinkId) -> f64 {
        self.links
            .iter()
            .position(|&l| l == link)
            .map_or(0.0, |i| self.ratios[i])
    }

    pub fn total(&self) -> f64 {
        self.ratios.iter().sum()
    }

    /// Ratios proportional to `weights`, uniform when every weight is zero.
    pub fn proportional(links: Vec<LinkId>, weights: &[f64]) -> Self {
        let sum: f64 = weights.iter().sum();
        let ratios = if sum > 0.0 {
            weights.iter().map(|w| w / sum).collect()
        } else {
            vec![1.0 / links.len() as f64; links.len()]
        };
        Self { links, ratios }
    }
}

/// Split ratios for every flow group, indexed by [`GroupId`].
#[derive(Debug, Clone, PartialEq)]
pub struct SprPolicy {
    pub groups: Vec<GroupSplit>,
}

impl SprPolicy {
    pub fn split(&self, group: GroupId) -> &GroupSplit {
        &self.groups[group.0]
    }

    pub fn ratio(&self, group: GroupId, link: LinkId) -> f64 {
        self.groups[group.0].ratio(link)
    }

    /// Checks the simplex constraint of every row within `tolerance`.
    pub fn is_feasible(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| {
            g.ratios.iter().all(|&r| r >= -tolerance) && (g.total() - 1.0).abs() <= tolerance
        })
    }
}

/// Rate allocation of one flow group on one overlay link and its data-plane
/// encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosRule {
    pub group: GroupId,
    pub link: LinkId,
    pub priority: Priority,
    pub rate_mbps: f64,
    /// Normalized WFQ weight among the low-priority groups of the link.
    pub wfq_weight: Option<f64>,
    /// Maximum rate. High-priority groups are never shaped.
    pub shaper_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QosPolicy {
    /// Sorted by (link, group).
    pub rules: Vec<QosRule>,
}

impl QosPolicy {
    /// Build a policy from per-(group, link) rates: normalized rates become
    /// WFQ weights, raw rates become shaper rates for low-priority groups.
    pub fn from_rates(rates: impl IntoIterator<Item = (GroupId, LinkId, Priority, f64)>) -> Self {
        let mut rules: Vec<QosRule> = rates
            .into_iter()
            .map(|(group, link, priority, rate)| QosRule {
                group,
                link,
                priority,
                rate_mbps: rate,
                wfq_weight: None,
                shaper_mbps: (priority == Priority::Low).then_some(rate),
            })
            .collect();
        rules.sort_by_key(|r| (r.link, r.group));
        let raw: Vec<f64> = rules.iter().map(|r| r.rate_mbps).collect();
        normalize_weights(&mut rules, &raw);
        Self { rules }
    }

    /// Policy with the given raw low-priority weights and no shapers.
    pub fn from_weights(weights: impl IntoIterator<Item = (GroupId, LinkId, f64)>) -> Self {
        let mut raw: Vec<(QosRule, f64)> = weights
            .into_iter()
            .map(|(group, link, w)| {
                (
                    QosRule {
                        group,
                        link,
                        priority: Priority::Low,
                        rate_mbps: 0.0,
                        wfq_weight: None,
                        shaper_mbps: None,
                    },
                    w,
                )
            })
            .collect();
        raw.sort_by_key(|(r, _)| (r.link, r.group));
        let weights: Vec<f64> = raw.iter().map(|(_, w)| *w).collect();
        let mut rules: Vec<QosRule> = raw.into_iter().map(|(r, _)| r).collect();
        normalize_weights(&mut rules, &weights);
        Self { rules }
    }

    pub fn rule(&self, group: GroupId, link: LinkId) -> Option<&QosRule> {
        self.rules
            .binary_search_by_key(&(link, group), |r| (r.link, r.group))
            .ok()
            .map(|i| &self.rules[i])
    }

    pub fn rules_on(&self, link: LinkId) -> impl Iterator<Item = &QosRule> {
        self.rules.iter().filter(move |r| r.link == link)
    }

    pub fn merge(policies: impl IntoIterator<Item = QosPolicy>) -> Self {
        let mut rules: Vec<QosRule> = policies.into_iter().flat_map(|p| p.rules).collect();
        rules.sort_by_key(|r| (r.link, r.group));
        Self { rules }
    }
}

/// Assigns `wfq_weight` to the low-priority rules of each link, proportional
/// to `raw_values`; uniform when a link's raw weights are all zero. `rules`
/// must be sorted by link.
fn normalize_weights(rules: &mut [QosRule], raw_values: &[f64]) {
    let mut start = 0;
    while start < rules.len() {
        let link = rules[start].link;
        let end = start + rules[start..].iter().take_while(|r| r.link == link).count();
        let low: Vec<usize> = (start..end)
            .filter(|&i| rules[i].priority == Priority::Low)
            .collect();
        let sum: f64 = low.iter().map(|&i| raw_values[i].max(0.0)).sum();
        for &i in &low {
            rules[i].wfq_weight = Some(if sum > 0.0 {
                raw_values[i].max(0.0) / sum
            } else {
                1.0 / low.len() as f64
            });
        }
        start = end;
    }
}

/// Estimator flags attached to an [`AbwEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AbwFlags {
    /// Load inversion hit the edge of its grid.
    pub saturated: bool,
    /// The estimated total traffic was below the injected traffic.
    pub inconsistent: bool,
    /// No measurement was available for this interval.
    pub stale: bool,
}

impl fmt::Display for AbwFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.saturated, "saturated"),
            (self.inconsistent, "inconsistent"),
            (self.stale, "stale"),
        ]
        .into_iter()
        .filter_map(|(set, name)| set.then_some(name))
        .collect();
        f.write_str(&names.join("|"))
    }
}

/// Available-bandwidth estimate of one overlay link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbwEstimate {
    pub link: LinkId,
    pub rho: f64,
    pub cross_traffic_mbps: f64,
    pub safe_abw_mbps: f64,
    pub theta: f64,
    pub flags: AbwFlags,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_priorities() {
        assert_eq!(TrafficClass::Critical.priority(), Priority::High);
        assert_eq!(TrafficClass::Voip.priority(), Priority::High);
        assert_eq!(TrafficClass::Office.priority(), Priority::Low);
        assert_eq!(TrafficClass::Bulk.priority(), Priority::Low);
        assert_eq!(TrafficClass::Voip.default_sla(), Sla::new(0.060, 0.02));
        assert_eq!(TrafficClass::Bulk.default_sla(), Sla::new(0.800, 0.10));
    }

    #[test]
    fn weights_are_normalized_per_link() {
        let policy = QosPolicy::from_rates([
            (GroupId(0), LinkId(1), Priority::Low, 3.0),
            (GroupId(1), LinkId(1), Priority::Low, 1.0),
            (GroupId(2), LinkId(1), Priority::High, 7.0),
            (GroupId(0), LinkId(0), Priority::Low, 0.0),
            (GroupId(1), LinkId(0), Priority::Low, 0.0),
        ]);
        let w = |g, l| policy.rule(GroupId(g), LinkId(l)).unwrap().wfq_weight;
        assert_eq!(w(0, 1), Some(0.75));
        assert_eq!(w(1, 1), Some(0.25));
        assert_eq!(w(2, 1), None);
        assert_eq!(w(0, 0), Some(0.5));
        let high = policy.rule(GroupId(2), LinkId(1)).unwrap();
        assert_eq!(high.shaper_mbps, None);
        assert_eq!(policy.rule(GroupId(0), LinkId(1)).unwrap().shaper_mbps, Some(3.0));
    }

    #[test]
    fn flags_render_pipe_separated() {
        let flags = AbwFlags {
            saturated: true,
            stale: true,
            ..Default::default()
        };
        assert_eq!(flags.to_string(), "saturated|stale");
        assert_eq!(AbwFlags::default().to_string(), "");
    }
}
