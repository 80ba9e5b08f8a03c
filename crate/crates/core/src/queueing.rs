//! M/M/1/K finite-buffer queue: blocking probability, mean occupancy, mean
//! sojourn time, and the grid inversion from an observed delay or loss back
//! to the offered load.
//!
//! The closed forms are evaluated with `ρ^K` in log space. Close to `ρ = 1`
//! they suffer from `1 - ρ^(K+1)` cancellation, so inside [`NEAR_ONE_WINDOW`]
//! the same quantities are computed from the stationary distribution
//! `π_i ∝ ρ^i, i = 0..=K` directly, which is exact at `ρ = 1` and smooth
//! across the window edge.

use thiserror::Error;

/// Buffer size used when none is configured.
pub const DEFAULT_QUEUE_CAPACITY: u32 = 100;

/// 1500-byte packets.
pub const DEFAULT_PACKET_SIZE_BITS: f64 = 12_000.0;

/// Losses at or below this fraction count as "no loss observed", and the
/// inversion falls back to the delay branch.
pub const LOSS_OBSERVED_THRESHOLD: f64 = 1e-6;

/// Half-width of the interval around `ρ = 1` evaluated by direct summation.
pub const NEAR_ONE_WINDOW: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueingError {
    #[error("load must be non-negative, got {0}")]
    NegativeLoad(f64),
    #[error("delay is undefined without arrivals (load {0})")]
    NonPositiveLoad(f64),
    #[error("queue capacity must be at least one packet")]
    ZeroCapacity,
    #[error("service rate must be positive and finite, got {0}")]
    InvalidServiceRate(f64),
    #[error("invalid load grid [{min}, {max}] step {step}")]
    InvalidGrid { min: f64, max: f64, step: f64 },
}

/// Queue capacity `K` (packets) and service rate `μ` (packets/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mm1kParams {
    capacity: u32,
    service_rate: f64,
}

impl Mm1kParams {
    pub fn new(capacity: u32, service_rate: f64) -> Result<Self, QueueingError> {
        if capacity == 0 {
            return Err(QueueingError::ZeroCapacity);
        }
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(QueueingError::InvalidServiceRate(service_rate));
        }
        Ok(Self {
            capacity,
            service_rate,
        })
    }

    /// Service rate of a link of `capacity_mbps` sending `packet_size_bits`
    /// packets: `μ = C·10⁶ / ps`.
    pub fn for_link(
        capacity_mbps: f64,
        packet_size_bits: f64,
        queue_capacity: u32,
    ) -> Result<Self, QueueingError> {
        Self::new(queue_capacity, capacity_mbps * 1e6 / packet_size_bits)
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    /// Mean service time `1/μ`, the delay floor of an almost empty queue.
    pub fn service_time(&self) -> f64 {
        1.0 / self.service_rate
    }
}

/// Discretized load axis searched by [`invert_load`] and [`calibrate_theta`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadGrid {
    rho_min: f64,
    rho_max: f64,
    step: f64,
    len: usize,
}

impl LoadGrid {
    pub fn new(rho_min: f64, rho_max: f64, step: f64) -> Result<Self, QueueingError> {
        let valid = rho_min.is_finite()
            && rho_max.is_finite()
            && step.is_finite()
            && rho_min > 0.0
            && rho_min < rho_max
            && step > 0.0;
        if !valid {
            return Err(QueueingError::InvalidGrid {
                min: rho_min,
                max: rho_max,
                step,
            });
        }
        let len = ((rho_max - rho_min) / step + 1e-9).floor() as usize + 1;
        Ok(Self {
            rho_min,
            rho_max,
            step,
            len,
        })
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn point(&self, index: usize) -> f64 {
        self.rho_min + index as f64 * self.step
    }

    pub fn points(&self) -> impl DoubleEndedIterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.point(i))
    }
}

impl Default for LoadGrid {
    fn default() -> Self {
        Self::new(0.01, 2.0, 0.001).expect("default grid is valid")
    }
}

fn check_load(rho: f64) -> Result<(), QueueingError> {
    if rho.is_nan() || rho < 0.0 {
        Err(QueueingError::NegativeLoad(rho))
    } else {
        Ok(())
    }
}

/// Blocking probability with the stationary distribution summed directly.
fn loss_by_summation(rho: f64, k: u32) -> f64 {
    // P = ρ^K / Σ ρ^i = 1 / Σ_{i=0..K} ρ^{-i}
    let inv = 1.0 / rho;
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..=k {
        sum += term;
        term *= inv;
    }
    1.0 / sum
}

fn occupancy_by_summation(rho: f64, k: u32) -> f64 {
    let mut term = 1.0;
    let mut weight = 0.0;
    let mut weighted = 0.0;
    for i in 0..=k {
        weight += term;
        weighted += i as f64 * term;
        term *= rho;
    }
    weighted / weight
}

/// Packet loss probability of an M/M/1/K queue at load `rho`.
pub fn loss_probability(rho: f64, k: u32) -> Result<f64, QueueingError> {
    check_load(rho)?;
    if k == 0 {
        return Err(QueueingError::ZeroCapacity);
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    if rho.is_infinite() {
        return Ok(1.0);
    }
    if (rho - 1.0).abs() < NEAR_ONE_WINDOW {
        return Ok(loss_by_summation(rho, k));
    }
    let kf = k as f64;
    let ln_rho = rho.ln();
    let p = if rho < 1.0 {
        (1.0 - rho) * (kf * ln_rho).exp() / -((kf + 1.0) * ln_rho).exp_m1()
    } else {
        // divide numerator and denominator by ρ^(K+1)
        (1.0 - 1.0 / rho) / -(-(kf + 1.0) * ln_rho).exp_m1()
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Mean number of packets in the system.
pub fn mean_occupancy(rho: f64, k: u32) -> Result<f64, QueueingError> {
    check_load(rho)?;
    if k == 0 {
        return Err(QueueingError::ZeroCapacity);
    }
    let kf = k as f64;
    if rho == 0.0 {
        return Ok(0.0);
    }
    if rho.is_infinite() {
        return Ok(kf);
    }
    if (rho - 1.0).abs() < NEAR_ONE_WINDOW {
        return Ok(occupancy_by_summation(rho, k));
    }
    let ln_rho = rho.ln();
    let l = if rho < 1.0 {
        let tail = (kf + 1.0) * ((kf + 1.0) * ln_rho).exp() / -((kf + 1.0) * ln_rho).exp_m1();
        rho / (1.0 - rho) - tail
    } else {
        // L(ρ) = K - L(1/ρ) by symmetry of the truncated geometric law
        let r = 1.0 / rho;
        let ln_r = -ln_rho;
        let tail = (kf + 1.0) * ((kf + 1.0) * ln_r).exp() / -((kf + 1.0) * ln_r).exp_m1();
        kf - (r / (1.0 - r) - tail)
    };
    Ok(l.clamp(0.0, kf))
}

/// Mean sojourn time (queueing plus service) by Little's law on the
/// admitted arrivals: `D = L / (λ (1 - P))` with `λ = ρ μ`.
pub fn mean_delay(rho: f64, params: &Mm1kParams) -> Result<f64, QueueingError> {
    check_load(rho)?;
    if rho == 0.0 {
        return Err(QueueingError::NonPositiveLoad(rho));
    }
    let k = params.capacity;
    let occupancy = mean_occupancy(rho, k)?;
    let loss = loss_probability(rho, k)?;
    let effective_arrivals = rho * params.service_rate * (1.0 - loss);
    let d = occupancy / effective_arrivals;
    // L ≈ ρ for tiny loads; guard the 0/0 limit
    if !d.is_finite() {
        return Ok(params.service_time());
    }
    Ok(d.max(params.service_time()))
}

/// Delay a packet sees at a queue that may be idle: one service time
/// without traffic (the limit of [`mean_delay`] as the load vanishes),
/// [`mean_delay`] otherwise.
pub fn queueing_delay(rho: f64, params: &Mm1kParams) -> f64 {
    if rho <= 0.0 || rho.is_nan() {
        params.service_time()
    } else {
        mean_delay(rho, params).unwrap_or(params.service_time())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionBranch {
    /// No loss observed; load recovered from the delay curve.
    Delay,
    /// Loss observed; load recovered from the blocking curve.
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadEstimate {
    pub rho: f64,
    pub branch: InversionBranch,
    /// The best grid point sits on the grid boundary, so the true load may
    /// lie outside the searched range.
    pub saturated: bool,
}

/// Closest grid point to `target` on a nondecreasing curve, ties going to
/// the larger load.
fn closest_on_monotone<F>(grid: &LoadGrid, target: f64, f: F) -> usize
where
    F: Fn(f64) -> f64,
{
    // first index with f >= target
    let (mut lo, mut hi) = (0usize, grid.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if f(grid.point(mid)) < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == grid.len() {
        return grid.len() - 1;
    }
    if lo == 0 {
        return 0;
    }
    let below = (f(grid.point(lo - 1)) - target).abs();
    let above = (f(grid.point(lo)) - target).abs();
    if below < above {
        lo - 1
    } else {
        lo
    }
}

/// Recover the load of a link from its measured queueing delay (propagation
/// already removed) or loss rate.
///
/// With no loss observed the delay curve is searched, otherwise the blocking
/// curve. Both curves are nondecreasing in `ρ`, so the grid argmin is found
/// by bisection.
pub fn invert_load(
    measured_delay: f64,
    measured_loss: f64,
    params: &Mm1kParams,
    grid: &LoadGrid,
) -> LoadEstimate {
    let k = params.capacity;
    let (index, branch) = if measured_loss > LOSS_OBSERVED_THRESHOLD {
        let i = closest_on_monotone(grid, measured_loss, |rho| {
            loss_probability(rho, k).unwrap_or(1.0)
        });
        (i, InversionBranch::Loss)
    } else {
        let target = measured_delay.max(0.0);
        let i = closest_on_monotone(grid, target, |rho| {
            mean_delay(rho, params).unwrap_or(f64::INFINITY)
        });
        (i, InversionBranch::Delay)
    };
    LoadEstimate {
        rho: grid.point(index),
        branch,
        saturated: index == 0 || index + 1 == grid.len(),
    }
}

/// Largest grid load whose blocking probability stays at or below
/// `loss_target`. Falls back to the grid minimum when no point qualifies.
pub fn calibrate_theta(k: u32, loss_target: f64, grid: &LoadGrid) -> f64 {
    grid.points()
        .rev()
        .find(|&rho| loss_probability(rho, k).map_or(false, |p| p <= loss_target))
        .unwrap_or(grid.rho_min())
}
