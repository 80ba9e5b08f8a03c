//! Fluid, tick-based simulation of the overlay with the control loop in the
//! middle: measurements feed the estimator, the estimator feeds the split
//! and rate optimizers, and their policies drive the schedulers.

mod engine;
mod report;
mod scheduler;
mod traffic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ValidationError;
use crate::qos::QosError;

pub use crate::sabe::EstimateRecord;
pub use engine::{
    LinkTick, MeasurementRecord, PairTick, PortTick, RunOutput, Simulator,
    TickSummary,
};
pub use report::{ClassReport, IntervalRecord, SlaReport};
pub use scheduler::{scheduler_model, SchedulerEntry};
pub use traffic::{CrossTrafficProfile, CrossTrafficStep, TrafficProfile};

/// Simulator timing and data-plane constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration_s: f64,
    pub tick_s: f64,
    /// Measurement interval; the estimator and the device rules run at this
    /// pace.
    pub monitor_period_s: f64,
    pub qos_period_s: f64,
    /// Period of the centralized split optimization.
    pub spr_period_s: f64,
    /// Buffer of every queue, packets.
    pub queue_capacity: u32,
    pub packet_size_bits: f64,
    /// Added to loss bounds when checking SLAs and link eligibility.
    pub loss_tolerance: f64,
    /// Growth of a TCP-like sender's rate while its cap binds.
    pub headroom: f64,
    /// Rate over the delivered rate a TCP-like sender probes with after
    /// losses.
    pub probe_headroom: f64,
    pub min_rate_mbps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration_s: 1200.0,
            tick_s: 1.0,
            monitor_period_s: 10.0,
            qos_period_s: 10.0,
            spr_period_s: 100.0,
            queue_capacity: 100,
            packet_size_bits: 12_000.0,
            loss_tolerance: 1e-4,
            headroom: 1.25,
            probe_headroom: 1.02,
            min_rate_mbps: 0.01,
        }
    }
}

/// `period / unit` when it is a positive whole number.
fn whole_multiple(period: f64, unit: f64) -> Option<usize> {
    let n = period / unit;
    let rounded = n.round();
    (rounded >= 1.0 && (n - rounded).abs() < 1e-9 * n.max(1.0)).then_some(rounded as usize)
}

impl SimConfig {
    pub fn validated(&self) -> Result<Self, ValidationError> {
        let bad = |field: &str, problem: &str| {
            Err(ValidationError {
                field: format!("sim.{field}"),
                problem: problem.to_string(),
            })
        };
        let positive = [
            ("duration_s", self.duration_s),
            ("tick_s", self.tick_s),
            ("packet_size_bits", self.packet_size_bits),
            ("min_rate_mbps", self.min_rate_mbps),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(field, "must be finite and > 0");
            }
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity", "must be at least 1");
        }
        if !(self.loss_tolerance.is_finite() && self.loss_tolerance >= 0.0) {
            return bad("loss_tolerance", "must be finite and >= 0");
        }
        if !(self.headroom.is_finite() && self.headroom > 1.0) {
            return bad("headroom", "must be > 1");
        }
        if !(self.probe_headroom.is_finite() && self.probe_headroom >= 1.0) {
            return bad("probe_headroom", "must be >= 1");
        }
        if whole_multiple(self.duration_s, self.tick_s).is_none() {
            return bad("duration_s", "must be a whole number of ticks");
        }
        if whole_multiple(self.monitor_period_s, self.tick_s).is_none() {
            return bad("monitor_period_s", "must be a whole number of ticks");
        }
        if whole_multiple(self.qos_period_s, self.monitor_period_s).is_none() {
            return bad("qos_period_s", "must be a whole number of monitor periods");
        }
        if whole_multiple(self.spr_period_s, self.monitor_period_s).is_none() {
            return bad("spr_period_s", "must be a whole number of monitor periods");
        }
        Ok(self.clone())
    }

    pub fn total_ticks(&self) -> usize {
        whole_multiple(self.duration_s, self.tick_s).unwrap_or(0)
    }

    pub fn monitor_ticks(&self) -> usize {
        whole_multiple(self.monitor_period_s, self.tick_s).unwrap_or(1)
    }

    pub fn qos_ticks(&self) -> usize {
        self.monitor_ticks() * whole_multiple(self.qos_period_s, self.monitor_period_s).unwrap_or(1)
    }

    pub fn spr_ticks(&self) -> usize {
        self.monitor_ticks() * whole_multiple(self.spr_period_s, self.monitor_period_s).unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} mode `{value}` (expected {expected})")]
pub struct ParseModeError {
    kind: &'static str,
    value: String,
    expected: &'static str,
}

/// Who computes the split ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SprMode {
    /// Access routers steer away from links violating the group's SLA.
    Atns,
    /// Central local search on the split objective.
    Mlu,
}

impl SprMode {
    pub const ALL: [SprMode; 2] = [SprMode::Atns, SprMode::Mlu];

    pub fn as_str(self) -> &'static str {
        match self {
            SprMode::Atns => "atns",
            SprMode::Mlu => "mlu",
        }
    }
}

impl fmt::Display for SprMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SprMode {
    type Err = ParseModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "atns" => Ok(SprMode::Atns),
            "mlu" => Ok(SprMode::Mlu),
            _ => Err(ParseModeError {
                kind: "spr",
                value: s.to_string(),
                expected: "atns or mlu",
            }),
        }
    }
}

/// Who computes the per-class rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QosMode {
    /// Static WFQ weights from peak traffic and delay bounds.
    FixedWeights,
    /// Central local search over every link.
    LocalSearch,
    /// One local search per access router on its own links.
    Distributed,
    /// Exhaustive search; small scenarios only.
    Oracle,
}

impl QosMode {
    pub const ALL: [QosMode; 4] = [
        QosMode::FixedWeights,
        QosMode::LocalSearch,
        QosMode::Distributed,
        QosMode::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QosMode::FixedWeights => "fw",
            QosMode::LocalSearch => "ls",
            QosMode::Distributed => "dist",
            QosMode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for QosMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QosMode {
    type Err = ParseModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fw" => Ok(QosMode::FixedWeights),
            "ls" => Ok(QosMode::LocalSearch),
            "dist" => Ok(QosMode::Distributed),
            "oracle" => Ok(QosMode::Oracle),
            _ => Err(ParseModeError {
                kind: "qos",
                value: s.to_string(),
                expected: "fw, ls, dist or oracle",
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub spr: SprMode,
    pub qos: QosMode,
    /// Feed estimated cross-traffic and safe capacity to the optimizers.
    pub sabe: bool,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn new(spr: SprMode, qos: QosMode, sabe: bool) -> Self {
        Self {
            spr,
            qos,
            sabe,
            seed: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite {what} at t = {time} s")]
    NonFinite { what: &'static str, time: f64 },
    #[error("rate allocation failed: {0}")]
    Qos(#[from] QosError),
}
