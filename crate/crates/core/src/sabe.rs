//! Silent available-bandwidth estimation.
//!
//! Each overlay link is treated as a single M/M/1/K server of its nominal
//! capacity. The load that best explains the measured queueing delay (or
//! loss, once loss is observed) is converted to a total arrival rate, and
//! whatever the access routers did not inject themselves is cross-traffic.

use serde::{Deserialize, Serialize};

use crate::model::{AbwEstimate, AbwFlags, LinkId, LinkMeasurement, OverlayLink, Scenario, ValidationError};
use crate::queueing::{
    calibrate_theta, invert_load, LoadEstimate, LoadGrid, Mm1kParams, DEFAULT_PACKET_SIZE_BITS,
    DEFAULT_QUEUE_CAPACITY,
};

/// Estimator settings as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SabeSettings {
    /// Safety fraction of the nominal capacity. Calibrated from
    /// `loss_target` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub loss_target: f64,
    pub smoothing_window: u32,
    pub packet_size_bits: f64,
    pub queue_capacity: u32,
}

impl Default for SabeSettings {
    fn default() -> Self {
        Self {
            theta: None,
            loss_target: 1e-5,
            smoothing_window: 3,
            packet_size_bits: DEFAULT_PACKET_SIZE_BITS,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SabeConfig {
    pub theta: f64,
    pub packet_size_bits: f64,
    pub queue_capacity: u32,
    pub smoothing_window: u32,
    pub grid: LoadGrid,
}

impl Default for SabeConfig {
    fn default() -> Self {
        Self::from_settings(&SabeSettings::default()).expect("default settings are valid")
    }
}

impl SabeConfig {
    pub fn from_settings(s: &SabeSettings) -> Result<Self, ValidationError> {
        let bad = |field: &str, problem: &str| Err(ValidationError {
            field: format!("sabe.{field}"),
            problem: problem.to_string(),
        });
        if !(s.packet_size_bits.is_finite() && s.packet_size_bits > 0.0) {
            return bad("packet_size_bits", "must be > 0");
        }
        if s.queue_capacity == 0 {
            return bad("queue_capacity", "must be at least 1");
        }
        if s.smoothing_window == 0 {
            return bad("smoothing_window", "must be at least 1");
        }
        let grid = LoadGrid::default();
        let theta = match s.theta {
            Some(theta) => theta,
            None => {
                if !(s.loss_target > 0.0 && s.loss_target < 1.0) {
                    return bad("loss_target", "must lie in (0, 1)");
                }
                calibrate_theta(s.queue_capacity, s.loss_target, &grid)
            }
        };
        if !(theta > 0.0 && theta <= 1.0) {
            return bad("theta", "must lie in (0, 1]");
        }
        Ok(Self {
            theta,
            packet_size_bits: s.packet_size_bits,
            queue_capacity: s.queue_capacity,
            smoothing_window: s.smoothing_window,
            grid,
        })
    }

    /// EWMA weight of the newest load sample, `2 / (window + 1)`.
    pub fn smoothing_weight(&self) -> f64 {
        2.0 / (f64::from(self.smoothing_window) + 1.0)
    }

    pub fn link_params(&self, link: &OverlayLink) -> Mm1kParams {
        Mm1kParams::for_link(
            link.nominal_capacity_mbps,
            self.packet_size_bits,
            self.queue_capacity,
        )
        .expect("validated link capacity and packet size")
    }
}

/// Load implied by one measurement. Propagation delay is removed first since
/// the queueing model only covers waiting and service time.
pub fn infer_load(m: &LinkMeasurement, link: &OverlayLink, cfg: &SabeConfig) -> LoadEstimate {
    let queueing = (m.delay - link.prop_delay).max(0.0);
    invert_load(queueing, m.loss, &cfg.link_params(link), &cfg.grid)
}

/// Cross-traffic and safe available bandwidth of a link carrying total load
/// `rho`, of which `controlled_mbps` was injected by the access routers.
pub fn abw_from_load(
    link: &OverlayLink,
    rho: f64,
    controlled_mbps: f64,
    theta: f64,
    saturated: bool,
) -> AbwEstimate {
    let capacity = link.nominal_capacity_mbps;
    let total = rho * capacity;
    let inconsistent = controlled_mbps > total;
    let cross = (total - controlled_mbps).max(0.0);
    AbwEstimate {
        link: link.id,
        rho,
        cross_traffic_mbps: cross,
        safe_abw_mbps: (theta * capacity - cross).max(0.0),
        theta,
        flags: AbwFlags {
            saturated,
            inconsistent,
            stale: false,
        },
    }
}

/// Single-measurement estimate, taking the link's own throughput as the
/// controlled traffic.
pub fn estimate_link(m: &LinkMeasurement, link: &OverlayLink, cfg: &SabeConfig) -> AbwEstimate {
    let load = infer_load(m, link, cfg);
    abw_from_load(link, load.rho, m.throughput, cfg.theta, load.saturated)
}

/// Which injected traffic is subtracted from the estimated total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlledScope {
    /// Only the link's own throughput; what a single access router knows.
    Link,
    /// Throughput of every link sharing the bottleneck; what a central
    /// controller knows.
    Bottleneck,
}

/// Stateful estimator keeping one smoothed load per link.
#[derive(Debug, Clone)]
pub struct SabeEstimator {
    cfg: SabeConfig,
    scope: ControlledScope,
    links: Vec<LinkId>,
    smoothed: Vec<Option<f64>>,
}

impl SabeEstimator {
    /// Estimator for every link of `scenario`.
    pub fn new(scenario: &Scenario, cfg: SabeConfig, scope: ControlledScope) -> Self {
        let links = scenario.links.iter().map(|l| l.id).collect();
        Self::for_links(scenario, links, cfg, scope)
    }

    /// Estimator restricted to `links`, e.g. the links of one access router.
    pub fn for_links(
        scenario: &Scenario,
        links: Vec<LinkId>,
        cfg: SabeConfig,
        scope: ControlledScope,
    ) -> Self {
        Self {
            cfg,
            scope,
            links,
            smoothed: vec![None; scenario.links.len()],
        }
    }

    pub fn config(&self) -> &SabeConfig {
        &self.cfg
    }

    /// Fold in the latest interval and return one estimate per tracked link,
    /// in tracked order. `measurements` may be partial and in any order.
    pub fn estimate_all(
        &mut self,
        scenario: &Scenario,
        measurements: &[LinkMeasurement],
    ) -> Vec<AbwEstimate> {
        let mut latest: Vec<Option<&LinkMeasurement>> = vec![None; scenario.links.len()];
        for m in measurements {
            latest[m.link.0] = Some(m);
        }
        let weight = self.cfg.smoothing_weight();
        let theta = self.cfg.theta;
        let mut out = Vec::with_capacity(self.links.len());
        for &id in &self.links {
            let link = scenario.link(id);
            let Some(m) = latest[id.0] else {
                out.push(AbwEstimate {
                    link: id,
                    rho: self.smoothed[id.0].unwrap_or(0.0),
                    cross_traffic_mbps: 0.0,
                    safe_abw_mbps: theta * link.nominal_capacity_mbps,
                    theta,
                    flags: AbwFlags {
                        stale: true,
                        ..AbwFlags::default()
                    },
                });
                continue;
            };
            let load = infer_load(m, link, &self.cfg);
            let rho = match self.smoothed[id.0] {
                Some(prev) => weight * load.rho + (1.0 - weight) * prev,
                None => load.rho,
            };
            self.smoothed[id.0] = Some(rho);
            let controlled = match self.scope {
                ControlledScope::Link => m.throughput,
                ControlledScope::Bottleneck => link
                    .shared_with_self()
                    .iter()
                    .filter_map(|other| latest[other.0].map(|o| o.throughput))
                    .sum(),
            };
            out.push(abw_from_load(link, rho, controlled, theta, load.saturated));
        }
        out
    }
}

/// An estimate stamped with the end of the interval it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub interval_end: f64,
    pub estimate: AbwEstimate,
}

/// Replays a measurement trace through a fresh bottleneck-scope estimator.
/// Rows sharing an `interval_end` form one interval; intervals are taken in
/// order of first appearance. Only links measured in an interval get an
/// estimate for it.
pub fn estimate_trace(
    scenario: &Scenario,
    cfg: &SabeConfig,
    trace: &[LinkMeasurement],
) -> Vec<EstimateRecord> {
    let mut estimator = SabeEstimator::new(scenario, cfg.clone(), ControlledScope::Bottleneck);
    let mut ends: Vec<f64> = Vec::new();
    for m in trace {
        if !ends.contains(&m.interval_end) {
            ends.push(m.interval_end);
        }
    }
    let mut out = Vec::new();
    for end in ends {
        let batch: Vec<LinkMeasurement> =
            trace.iter().filter(|m| m.interval_end == end).copied().collect();
        let estimates = estimator.estimate_all(scenario, &batch);
        out.extend(
            estimates
                .into_iter()
                .filter(|e| !e.flags.stale)
                .map(|estimate| EstimateRecord { interval_end: end, estimate }),
        );
    }
    out
}

/// Relative cross-traffic error over the samples whose true cross-traffic is
/// at least `min_truth_mbps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossTrafficError {
    pub samples: usize,
    pub mean: f64,
    pub max: f64,
}

pub fn cross_traffic_error(
    pairs: impl IntoIterator<Item = (f64, f64)>,
    min_truth_mbps: f64,
) -> Option<CrossTrafficError> {
    let errors: Vec<f64> = pairs
        .into_iter()
        .filter(|&(_, truth)| truth >= min_truth_mbps && truth > 0.0)
        .map(|(est, truth)| (est - truth).abs() / truth)
        .collect();
    if errors.is_empty() {
        return None;
    }
    Some(CrossTrafficError {
        samples: errors.len(),
        mean: errors.iter().sum::<f64>() / errors.len() as f64,
        max: errors.iter().copied().fold(0.0, f64::max),
    })
}
