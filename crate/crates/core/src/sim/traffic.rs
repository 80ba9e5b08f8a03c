//! Rate processes for flow-group demand and per-port cross-traffic.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::ValidationError;

fn default_period() -> f64 {
    1200.0
}

fn invalid(field: &str, name: &str, problem: &str) -> ValidationError {
    ValidationError {
        field: format!("{field}.{name}"),
        problem: problem.to_string(),
    }
}

fn non_negative(field: &str, name: &str, v: f64) -> Result<(), ValidationError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, name, "must be finite and >= 0"))
    }
}

/// Diurnal demand of one flow group:
/// `base · (1 + A sin(2π (t / period + phase))) · (1 + noise · N(0,1))`,
/// clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    pub base_mbps: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period_s: f64,
    /// Fraction of a period.
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Overrides the scenario seed for this group's noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TrafficProfile {
    pub fn constant(mbps: f64) -> Self {
        Self {
            base_mbps: mbps,
            amplitude: 0.0,
            period_s: default_period(),
            phase: 0.0,
            noise_std: 0.0,
            seed: None,
        }
    }

    pub fn validate(&self, field: &str) -> Result<(), ValidationError> {
        non_negative(field, "base_mbps", self.base_mbps)?;
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(invalid(field, "amplitude", "must lie in [0, 1]"));
        }
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return Err(invalid(field, "period_s", "must be > 0"));
        }
        if !self.phase.is_finite() {
            return Err(invalid(field, "phase", "must be finite"));
        }
        non_negative(field, "noise_std", self.noise_std)
    }

    /// Noise-free rate at time `t`.
    pub fn mean_rate(&self, t: f64) -> f64 {
        self.base_mbps * (1.0 + self.amplitude * (TAU * (t / self.period_s + self.phase)).sin())
    }

    /// Rate at `t` given a standard normal sample.
    pub fn rate(&self, t: f64, normal: f64) -> f64 {
        (self.mean_rate(t) * (1.0 + self.noise_std * normal)).max(0.0)
    }

    /// Highest noise-free rate.
    pub fn peak(&self) -> f64 {
        self.base_mbps * (1.0 + self.amplitude)
    }
}

/// Level change of a cross-traffic schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossTrafficStep {
    pub at_s: f64,
    pub mbps: f64,
}

/// Uncontrolled traffic entering one underlay port: a piecewise-constant
/// level plus a sinusoid, with multiplicative noise, clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossTrafficProfile {
    #[serde(default)]
    pub base_mbps: f64,
    #[serde(default)]
    pub sine_amplitude_mbps: f64,
    #[serde(default = "default_period")]
    pub sine_period_s: f64,
    #[serde(default)]
    pub sine_phase: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Level from `at_s` on, in increasing time order.
    #[serde(default)]
    pub steps: Vec<CrossTrafficStep>,
}

impl CrossTrafficProfile {
    pub fn constant(mbps: f64) -> Self {
        Self {
            base_mbps: mbps,
            sine_amplitude_mbps: 0.0,
            sine_period_s: default_period(),
            sine_phase: 0.0,
            noise_std: 0.0,
            seed: None,
            steps: Vec::new(),
        }
    }

    pub fn validate(&self, field: &str) -> Result<(), ValidationError> {
        non_negative(field, "base_mbps", self.base_mbps)?;
        non_negative(field, "sine_amplitude_mbps", self.sine_amplitude_mbps)?;
        non_negative(field, "noise_std", self.noise_std)?;
        if !(self.sine_period_s.is_finite() && self.sine_period_s > 0.0) {
            return Err(invalid(field, "sine_period_s", "must be > 0"));
        }
        if !self.sine_phase.is_finite() {
            return Err(invalid(field, "sine_phase", "must be finite"));
        }
        let mut last = f64::NEG_INFINITY;
        for (i, s) in self.steps.iter().enumerate() {
            non_negative(field, &format!("steps[{i}].mbps"), s.mbps)?;
            if !(s.at_s.is_finite() && s.at_s > last) {
                return Err(invalid(field, &format!("steps[{i}].at_s"), "must be finite and increasing"));
            }
            last = s.at_s;
        }
        Ok(())
    }

    fn level(&self, t: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s.at_s <= t)
            .last()
            .map_or(self.base_mbps, |s| s.mbps)
    }

    pub fn mean_rate(&self, t: f64) -> f64 {
        self.level(t)
            + self.sine_amplitude_mbps * (TAU * (t / self.sine_period_s + self.sine_phase)).sin()
    }

    pub fn rate(&self, t: f64, normal: f64) -> f64 {
        (self.mean_rate(t) * (1.0 + self.noise_std * normal)).max(0.0)
    }
}

/// Independent noise stream `stream` under `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Next standard normal sample, or zero without drawing when there is no
/// noise.
pub(crate) fn normal_sample(rng: &mut ChaCha8Rng, noise_std: f64) -> f64 {
    if noise_std > 0.0 {
        rng.sample(StandardNormal)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diurnal_profile_shape() {
        let p = TrafficProfile {
            base_mbps: 10.0,
            amplitude: 0.5,
            period_s: 100.0,
            phase: 0.0,
            noise_std: 0.0,
            seed: None,
        };
        assert!((p.mean_rate(25.0) - 15.0).abs() < 1e-12);
        assert!((p.mean_rate(75.0) - 5.0).abs() < 1e-12);
        assert_eq!(p.peak(), 15.0);
        assert_eq!(p.rate(0.0, -100.0), 10.0);
        let noisy = TrafficProfile { noise_std: 0.5, ..p };
        assert_eq!(noisy.rate(0.0, -3.0), 0.0);
        assert!((noisy.rate(0.0, 1.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn cross_traffic_steps() {
        let mut p = CrossTrafficProfile::constant(2.0);
        p.steps = vec![
            CrossTrafficStep { at_s: 100.0, mbps: 10.0 },
            CrossTrafficStep { at_s: 200.0, mbps: 0.0 },
        ];
        assert_eq!(p.mean_rate(99.0), 2.0);
        assert_eq!(p.mean_rate(100.0), 10.0);
        assert_eq!(p.mean_rate(500.0), 0.0);
        p.steps.swap(0, 1);
        assert!(p.validate("x").is_err());
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<f64> = {
            let mut r = stream_rng(7, 1);
            (0..4).map(|_| normal_sample(&mut r, 1.0)).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream_rng(7, 1);
            (0..4).map(|_| normal_sample(&mut r, 1.0)).collect()
        };
        let c: Vec<f64> = {
            let mut r = stream_rng(7, 2);
            (0..4).map(|_| normal_sample(&mut r, 1.0)).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
