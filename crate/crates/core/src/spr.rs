//! Split-ratio optimization.
//!
//! The objective trades SLA violations, maximum link utilization and the
//! summed delay and loss of the links:
//!
//! `α Σ_k (u_k + v_k) + β LU + γ Σ_k Σ_{e∈E_k} (d_e + l_e)`
//!
//! where `u_k`, `v_k` are the worst delay and loss excess of group `k` over
//! the links it actually uses. Link utilization is computed per shared
//! bottleneck. Delay and loss come from a [`LinkResponse`].

use serde::{Deserialize, Serialize};

use crate::model::{
    GroupId, GroupSplit, LinkId, LinkMeasurement, Scenario, Sla, SprPolicy, ValidationError,
};
use crate::queueing::{loss_probability, queueing_delay, Mm1kParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprWeights {
    /// SLA violations.
    pub alpha: f64,
    /// Maximum link utilization.
    pub beta: f64,
    /// Summed link delay and loss.
    pub gamma: f64,
}

impl Default for SprWeights {
    fn default() -> Self {
        Self {
            alpha: 1000.0,
            beta: 10.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseModel {
    /// Last measured delay and loss, independent of the split.
    Measured,
    /// M/M/1/K prediction at the load implied by the split.
    Queueing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprSettings {
    pub weights: SprWeights,
    /// Fraction of a group's traffic moved by one local-search step.
    pub step: f64,
    pub response: ResponseModel,
    pub max_iterations: usize,
}

impl Default for SprSettings {
    fn default() -> Self {
        Self {
            weights: SprWeights::default(),
            step: 0.05,
            response: ResponseModel::Queueing,
            max_iterations: 100_000,
        }
    }
}

impl SprSettings {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let w = &self.weights;
        for (name, v) in [("alpha", w.alpha), ("beta", w.beta), ("gamma", w.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ValidationError {
                    field: format!("spr.weights.{name}"),
                    problem: "must be finite and >= 0".into(),
                });
            }
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(ValidationError {
                field: "spr.step".into(),
                problem: "must lie in (0, 1]".into(),
            });
        }
        if self.max_iterations == 0 {
            return Err(ValidationError {
                field: "spr.max_iterations".into(),
                problem: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// One overlay link as seen by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SprLink {
    /// Nominal capacity; sets the service rate of the queueing response.
    pub capacity_mbps: f64,
    /// Capacity used for utilization: nominal, or the safe available
    /// bandwidth when estimates are used.
    pub utilization_capacity_mbps: f64,
    /// Estimated traffic on the bottleneck that the split does not control.
    pub cross_traffic_mbps: f64,
    pub prop_delay: f64,
    pub measured_delay: f64,
    pub measured_loss: f64,
    /// Links with equal `bottleneck` share one queue.
    pub bottleneck: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprGroup {
    pub demand_mbps: f64,
    pub sla: Sla,
    /// `E_k` as indices into [`SprInstance::links`].
    pub links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprInstance {
    pub links: Vec<SprLink>,
    pub groups: Vec<SprGroup>,
}

/// Inputs for building an instance from a scenario.
#[derive(Debug, Clone, Copy)]
pub struct SprInputs<'a> {
    /// `b_k`, indexed by group.
    pub demands: &'a [f64],
    /// Latest measurement per link, indexed by link; `None` means
    /// propagation delay and no loss everywhere.
    pub measurements: Option<&'a [LinkMeasurement]>,
    /// Cross-traffic and safe capacity per link, indexed by link.
    pub estimates: Option<&'a [crate::model::AbwEstimate]>,
}

impl SprInstance {
    pub fn from_scenario(scenario: &Scenario, inputs: SprInputs<'_>) -> Self {
        let links = scenario
            .links
            .iter()
            .map(|l| {
                let m = inputs.measurements.map(|ms| ms[l.id.0]);
                let est = inputs.estimates.map(|es| es[l.id.0]);
                SprLink {
                    capacity_mbps: l.nominal_capacity_mbps,
                    utilization_capacity_mbps: est
                        .map_or(l.nominal_capacity_mbps, |e| e.safe_abw_mbps),
                    cross_traffic_mbps: est.map_or(0.0, |e| e.cross_traffic_mbps),
                    prop_delay: l.prop_delay,
                    measured_delay: m.map_or(l.prop_delay, |m| m.delay),
                    measured_loss: m.map_or(0.0, |m| m.loss),
                    bottleneck: l.bottleneck_port.0,
                }
            })
            .collect();
        let groups = scenario
            .groups
            .iter()
            .map(|g| SprGroup {
                demand_mbps: inputs.demands[g.id.0],
                sla: g.sla,
                links: g.allowed_links.iter().map(|l| l.0).collect(),
            })
            .collect();
        Self { links, groups }
    }

    /// Split proportional to nominal capacity.
    pub fn proportional_split(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| {
                let caps: Vec<f64> = g.links.iter().map(|&e| self.links[e].capacity_mbps).collect();
                GroupSplit::proportional(vec![LinkId(0); caps.len()], &caps).ratios
            })
            .collect()
    }

    /// Policy for a scenario whose link and group indices match this
    /// instance.
    pub fn to_policy(&self, scenario: &Scenario, x: &[Vec<f64>]) -> SprPolicy {
        SprPolicy {
            groups: scenario
                .groups
                .iter()
                .map(|g| GroupSplit {
                    links: g.allowed_links.clone(),
                    ratios: x[g.id.0].clone(),
                })
                .collect(),
        }
    }
}

/// Delay (s) and loss of a link whose bottleneck carries `controlled_mbps`
/// of split-controlled traffic.
pub trait LinkResponse {
    fn response(&self, link: &SprLink, controlled_mbps: f64) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeasuredResponse;

impl LinkResponse for MeasuredResponse {
    fn response(&self, link: &SprLink, _controlled_mbps: f64) -> (f64, f64) {
        (link.measured_delay, link.measured_loss)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QueueingResponse {
    pub packet_size_bits: f64,
    pub queue_capacity: u32,
}

impl LinkResponse for QueueingResponse {
    fn response(&self, link: &SprLink, controlled_mbps: f64) -> (f64, f64) {
        let params = Mm1kParams::for_link(link.capacity_mbps, self.packet_size_bits, self.queue_capacity)
            .expect("positive link capacity");
        let rho = ((controlled_mbps + link.cross_traffic_mbps) / link.capacity_mbps).max(0.0);
        let delay = link.prop_delay + queueing_delay(rho, &params);
        let loss = loss_probability(rho, self.queue_capacity).unwrap_or(1.0);
        (delay, loss)
    }
}

/// Response model chosen at run time.
#[derive(Debug, Clone, Copy)]
pub enum AnyResponse {
    Measured(MeasuredResponse),
    Queueing(QueueingResponse),
}

impl AnyResponse {
    pub fn new(model: ResponseModel, packet_size_bits: f64, queue_capacity: u32) -> Self {
        match model {
            ResponseModel::Measured => AnyResponse::Measured(MeasuredResponse),
            ResponseModel::Queueing => AnyResponse::Queueing(QueueingResponse {
                packet_size_bits,
                queue_capacity,
            }),
        }
    }
}

impl LinkResponse for AnyResponse {
    fn response(&self, link: &SprLink, controlled_mbps: f64) -> (f64, f64) {
        match self {
            AnyResponse::Measured(r) => r.response(link, controlled_mbps),
            AnyResponse::Queueing(r) => r.response(link, controlled_mbps),
        }
    }
}

/// Objective value and its parts for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SprEvaluation {
    pub objective: f64,
    pub lu: f64,
    /// `u_k`, per group.
    pub delay_slack: Vec<f64>,
    /// `v_k`, per group.
    pub loss_slack: Vec<f64>,
    /// `Σ_k Σ_{e∈E_k} (d_e + l_e)`.
    pub link_quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprSolution {
    pub split: Vec<Vec<f64>>,
    pub evaluation: SprEvaluation,
    pub iterations: usize,
}

const SUPPORT_EPS: f64 = 1e-12;
const UTILIZATION_FLOOR: f64 = 1e-6;

/// Precomputed index structure shared by full and incremental evaluation.
struct Layout {
    n_bottlenecks: usize,
    bottleneck_links: Vec<Vec<usize>>,
    bottleneck_capacity: Vec<f64>,
    /// Groups allowed on each link.
    link_groups: Vec<Vec<usize>>,
}

impl Layout {
    fn new(inst: &SprInstance) -> Self {
        let n_bottlenecks = inst.links.iter().map(|l| l.bottleneck + 1).max().unwrap_or(0);
        let mut bottleneck_links = vec![Vec::new(); n_bottlenecks];
        let mut bottleneck_capacity = vec![f64::INFINITY; n_bottlenecks];
        for (e, l) in inst.links.iter().enumerate() {
            bottleneck_links[l.bottleneck].push(e);
            let cap = &mut bottleneck_capacity[l.bottleneck];
            *cap = cap.min(l.utilization_capacity_mbps.max(UTILIZATION_FLOOR));
        }
        let mut link_groups = vec![Vec::new(); inst.links.len()];
        for (k, g) in inst.groups.iter().enumerate() {
            for &e in &g.links {
                link_groups[e].push(k);
            }
        }
        Self {
            n_bottlenecks,
            bottleneck_links,
            bottleneck_capacity,
            link_groups,
        }
    }
}

/// Cached per-link responses and per-group slacks for the current split.
struct State {
    x: Vec<Vec<f64>>,
    load: Vec<f64>,
    response: Vec<(f64, f64)>,
    delay_slack: Vec<f64>,
    loss_slack: Vec<f64>,
    violations: f64,
    link_quality: f64,
    lu: f64,
    objective: f64,
}

fn group_slack(g: &SprGroup, x: &[f64], response: impl Fn(usize) -> (f64, f64)) -> (f64, f64) {
    let mut u: f64 = 0.0;
    let mut v: f64 = 0.0;
    for (i, &e) in g.links.iter().enumerate() {
        if x[i] > SUPPORT_EPS {
            let (d, l) = response(e);
            u = u.max(d - g.sla.delay);
            v = v.max(l - g.sla.loss);
        }
    }
    (u, v)
}

struct Evaluator<'a, R: LinkResponse> {
    inst: &'a SprInstance,
    response: &'a R,
    weights: &'a SprWeights,
    layout: Layout,
}

impl<'a, R: LinkResponse> Evaluator<'a, R> {
    fn new(inst: &'a SprInstance, response: &'a R, weights: &'a SprWeights) -> Self {
        Self {
            inst,
            response,
            weights,
            layout: Layout::new(inst),
        }
    }

    fn combine(&self, violations: f64, lu: f64, link_quality: f64) -> f64 {
        self.weights.alpha * violations + self.weights.beta * lu + self.weights.gamma * link_quality
    }

    fn lu(&self, load: impl Fn(usize) -> f64) -> f64 {
        (0..self.layout.n_bottlenecks)
            .filter(|&b| !self.layout.bottleneck_links[b].is_empty())
            .map(|b| load(b) / self.layout.bottleneck_capacity[b])
            .fold(0.0, f64::max)
    }

    fn state(&self, x: Vec<Vec<f64>>) -> State {
        let inst = self.inst;
        let mut load = vec![0.0; self.layout.n_bottlenecks];
        for (k, g) in inst.groups.iter().enumerate() {
            for (i, &e) in g.links.iter().enumerate() {
                load[inst.links[e].bottleneck] += g.demand_mbps * x[k][i];
            }
        }
        let response: Vec<(f64, f64)> = inst
            .links
            .iter()
            .map(|l| self.response.response(l, load[l.bottleneck]))
            .collect();
        let mut delay_slack = Vec::with_capacity(inst.groups.len());
        let mut loss_slack = Vec::with_capacity(inst.groups.len());
        for (k, g) in inst.groups.iter().enumerate() {
            let (u, v) = group_slack(g, &x[k], |e| response[e]);
            delay_slack.push(u);
            loss_slack.push(v);
        }
        let violations = delay_slack.iter().sum::<f64>() + loss_slack.iter().sum::<f64>();
        let link_quality = (0..inst.links.len())
            .map(|e| self.layout.link_groups[e].len() as f64 * (response[e].0 + response[e].1))
            .sum();
        let lu = self.lu(|b| load[b]);
        let objective = self.combine(violations, lu, link_quality);
        State {
            x,
            load,
            response,
            delay_slack,
            loss_slack,
            violations,
            link_quality,
            lu,
            objective,
        }
    }

    /// Objective after moving `amount` of group `k` from its `from`-th to its
    /// `to`-th link, touching only the affected bottlenecks and groups.
    fn moved_objective(&self, s: &State, k: usize, from: usize, to: usize, amount: f64) -> f64 {
        let inst = self.inst;
        let g = &inst.groups[k];
        let (e_from, e_to) = (g.links[from], g.links[to]);
        let (b_from, b_to) = (inst.links[e_from].bottleneck, inst.links[e_to].bottleneck);
        let shift = amount * g.demand_mbps;
        let new_load = |b: usize| {
            let mut l = s.load[b];
            if b == b_from {
                l -= shift;
            }
            if b == b_to {
                l += shift;
            }
            l
        };

        let mut touched: Vec<(usize, (f64, f64))> = Vec::new();
        let bottlenecks: &[usize] = if b_from == b_to { &[b_from][..] } else { &[b_from, b_to][..] };
        let mut link_quality = s.link_quality;
        for &b in bottlenecks {
            let load = new_load(b);
            for &e in &self.layout.bottleneck_links[b] {
                let r = self.response.response(&inst.links[e], load);
                let users = self.layout.link_groups[e].len() as f64;
                link_quality += users * ((r.0 + r.1) - (s.response[e].0 + s.response[e].1));
                touched.push((e, r));
            }
        }
        let resp = |e: usize| {
            touched
                .iter()
                .find(|(t, _)| *t == e)
                .map_or(s.response[e], |(_, r)| *r)
        };

        let mut groups: Vec<usize> = touched
            .iter()
            .flat_map(|(e, _)| self.layout.link_groups[*e].iter().copied())
            .collect();
        groups.push(k);
        groups.sort_unstable();
        groups.dedup();
        let mut violations = s.violations;
        let mut moved_x = s.x[k].clone();
        moved_x[from] -= amount;
        moved_x[to] += amount;
        for q in groups {
            let xq = if q == k { &moved_x[..] } else { &s.x[q][..] };
            let (u, v) = group_slack(&inst.groups[q], xq, resp);
            violations += (u + v) - (s.delay_slack[q] + s.loss_slack[q]);
        }
        let lu = self.lu(new_load);
        self.combine(violations, lu, link_quality)
    }
}

fn evaluation(s: State) -> (Vec<Vec<f64>>, SprEvaluation) {
    (
        s.x,
        SprEvaluation {
            objective: s.objective,
            lu: s.lu,
            delay_slack: s.delay_slack,
            loss_slack: s.loss_slack,
            link_quality: s.link_quality,
        },
    )
}

/// Full evaluation of a split given as ratios aligned with each group's
/// allowed links.
pub fn spr_objective<R: LinkResponse>(
    inst: &SprInstance,
    x: &[Vec<f64>],
    response: &R,
    weights: &SprWeights,
) -> SprEvaluation {
    let eval = Evaluator::new(inst, response, weights);
    evaluation(eval.state(x.to_vec())).1
}

/// Move of `amount` of one group's traffic between two of its links, both
/// given as positions in the group's allowed-link list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprMove {
    pub group: usize,
    pub from: usize,
    pub to: usize,
    pub amount: f64,
}

/// Objective after one move, computed incrementally. Exposed so the
/// incremental path can be checked against [`spr_objective`].
pub fn spr_move_objective<R: LinkResponse>(
    inst: &SprInstance,
    x: &[Vec<f64>],
    response: &R,
    weights: &SprWeights,
    mv: SprMove,
) -> f64 {
    let eval = Evaluator::new(inst, response, weights);
    let s = eval.state(x.to_vec());
    eval.moved_objective(&s, mv.group, mv.from, mv.to, mv.amount)
}

/// Best-improvement local search over single moves of `settings.step` of one
/// group's traffic between two of its links. Starts from `initial`, or the
/// capacity-proportional split.
pub fn optimize_spr_local_search<R: LinkResponse>(
    inst: &SprInstance,
    initial: Option<Vec<Vec<f64>>>,
    response: &R,
    settings: &SprSettings,
) -> SprSolution {
    let eval = Evaluator::new(inst, response, &settings.weights);
    let mut state = eval.state(initial.unwrap_or_else(|| inst.proportional_split()));
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let threshold = 1e-12 * state.objective.abs().max(1.0);
        let mut best: Option<(f64, usize, usize, usize, f64)> = None;
        for (k, g) in inst.groups.iter().enumerate() {
            if g.links.len() < 2 {
                continue;
            }
            for from in 0..g.links.len() {
                let amount = settings.step.min(state.x[k][from]);
                if amount <= SUPPORT_EPS {
                    continue;
                }
                for to in 0..g.links.len() {
                    if to == from {
                        continue;
                    }
                    let obj = eval.moved_objective(&state, k, from, to, amount);
                    if obj < state.objective - threshold
                        && best.map_or(true, |(b, ..)| obj < b)
                    {
                        best = Some((obj, k, from, to, amount));
                    }
                }
            }
        }
        let Some((_, k, from, to, amount)) = best else {
            break;
        };
        let mut x = state.x.clone();
        if amount >= x[k][from] {
            x[k][to] += x[k][from];
            x[k][from] = 0.0;
        } else {
            x[k][from] -= amount;
            x[k][to] += amount;
        }
        let next = eval.state(x);
        // the incremental value can drift from the full one by rounding
        if next.objective >= state.objective - threshold {
            break;
        }
        state = next;
        iterations += 1;
    }
    let (split, evaluation) = evaluation(state);
    SprSolution {
        split,
        evaluation,
        iterations,
    }
}

/// Data-plane rule of an access router: split proportionally to nominal
/// capacity over the allowed links currently meeting the group's SLA, or
/// over all allowed links when none does. `loss_tolerance` is added to the
/// loss bound.
pub fn device_spr_split(
    scenario: &Scenario,
    group: GroupId,
    measurements: &[LinkMeasurement],
    loss_tolerance: f64,
) -> GroupSplit {
    let g = scenario.group(group);
    let latest = |link: LinkId| measurements.iter().find(|m| m.link == link);
    let eligible: Vec<bool> = g
        .allowed_links
        .iter()
        .map(|&l| {
            latest(l).map_or(true, |m| {
                m.delay <= g.sla.delay && m.loss <= g.sla.loss + loss_tolerance
            })
        })
        .collect();
    let any = eligible.iter().any(|&b| b);
    let weights: Vec<f64> = g
        .allowed_links
        .iter()
        .zip(&eligible)
        .map(|(&l, &ok)| {
            if ok || !any {
                scenario.link(l).nominal_capacity_mbps
            } else {
                0.0
            }
        })
        .collect();
    GroupSplit::proportional(g.allowed_links.clone(), &weights)
}

/// Every group split proportionally to nominal capacity over its allowed
/// links.
pub fn proportional_policy(scenario: &Scenario) -> SprPolicy {
    SprPolicy {
        groups: scenario
            .groups
            .iter()
            .map(|g| {
                let caps: Vec<f64> = g
                    .allowed_links
                    .iter()
                    .map(|&l| scenario.link(l).nominal_capacity_mbps)
                    .collect();
                GroupSplit::proportional(g.allowed_links.clone(), &caps)
            })
            .collect(),
    }
}
