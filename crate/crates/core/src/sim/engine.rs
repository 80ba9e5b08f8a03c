//! The tick loop and the control plane it drives.

use std::collections::BTreeSet;
use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use crate::model::{
    AbwEstimate, GroupId, LinkId, LinkMeasurement, NodeId, PortId, Priority, QosPolicy, Scenario,
    SprPolicy,
};
use crate::qos::{
    brute_force_qos, fixed_weights, optimize_qos_centralized, QosDemand, QosLink, QosSnapshot,
};
use crate::queueing::{loss_probability, queueing_delay, Mm1kParams};
use crate::sabe::{ControlledScope, EstimateRecord, SabeEstimator};
use crate::spr::{
    device_spr_split, optimize_spr_local_search, proportional_policy, AnyResponse, SprInputs,
    SprInstance,
};

use super::report::{IntervalRecord, SlaReport};
use super::scheduler::{scheduler_model, SchedulerEntry};
use super::traffic::{normal_sample, stream_rng};
use super::{QosMode, RunOptions, SimConfig, SimError, SprMode};

/// Port noise streams start here so they never collide with group streams.
const PORT_STREAM_BASE: u64 = 1 << 32;

/// One group on one of its allowed links during one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTick {
    pub group: GroupId,
    pub link: LinkId,
    /// Rate the sender put on the link (Mbps).
    pub sent_mbps: f64,
    /// Rate the link scheduler let through.
    pub admitted_mbps: f64,
    pub delay: f64,
    /// Lost fraction of the sent traffic.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTick {
    pub link: LinkId,
    pub admitted_mbps: f64,
    /// Waiting plus service time at the bottleneck port.
    pub wan_delay: f64,
    pub wan_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortTick {
    pub port: PortId,
    pub controlled_mbps: f64,
    pub cross_mbps: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickSummary {
    pub time: f64,
    pub pairs: Vec<PairTick>,
    pub links: Vec<LinkTick>,
    pub ports: Vec<PortTick>,
    /// A monitoring interval ended with this tick.
    pub interval_closed: bool,
}

/// A link measurement together with the cross-traffic that actually hit the
/// link's bottleneck, for scoring the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub measurement: LinkMeasurement,
    pub truth_cross_traffic_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub options: RunOptions,
    pub report: SlaReport,
    pub intervals: Vec<IntervalRecord>,
    pub measurements: Vec<MeasurementRecord>,
    /// Estimates of the central estimator; empty without it.
    pub estimates: Vec<EstimateRecord>,
    /// Policies in force at the end of the run.
    pub spr_policy: SprPolicy,
    pub qos_policy: QosPolicy,
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    group: GroupId,
    link: LinkId,
    /// Position of `link` in the group's allowed links.
    position: usize,
    priority: Priority,
}

#[derive(Debug, Clone, Copy, Default)]
struct FlowAcc {
    sent: f64,
    lost: f64,
    delay_weighted: f64,
}

impl FlowAcc {
    fn add(&mut self, sent: f64, lost: f64, delay: f64) {
        self.sent += sent;
        self.lost += lost;
        self.delay_weighted += delay * sent;
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LinkAcc {
    delay: f64,
    delay_sq: f64,
    loss: f64,
    throughput: f64,
}

/// Reference-scenario simulator. Borrows the scenario for its lifetime.
pub struct Simulator<'a> {
    scenario: &'a Scenario,
    options: RunOptions,
    cfg: SimConfig,
    tick: usize,

    pairs: Vec<Pair>,
    group_pairs: Vec<Range<usize>>,
    link_pairs: Vec<Vec<usize>>,
    port_links: Vec<Vec<usize>>,
    link_params: Vec<Mm1kParams>,
    port_params: Vec<Mm1kParams>,
    group_rng: Vec<ChaCha8Rng>,
    port_rng: Vec<ChaCha8Rng>,

    split: SprPolicy,
    qos_policy: QosPolicy,
    tcp_cap: Vec<Option<f64>>,

    pair_acc: Vec<FlowAcc>,
    group_acc: Vec<FlowAcc>,
    link_acc: Vec<LinkAcc>,
    cross_acc: Vec<f64>,
    demand_acc: Vec<f64>,
    spr_demand_acc: Vec<f64>,
    spr_acc_ticks: usize,
    interval_ticks: usize,

    latest: Vec<LinkMeasurement>,
    pair_quality: Vec<(f64, f64)>,
    last_demand: Vec<f64>,
    central: Option<SabeEstimator>,
    agents: Vec<(NodeId, SabeEstimator)>,
    estimates: Option<Vec<AbwEstimate>>,
    agent_estimates: Option<Vec<AbwEstimate>>,
    spr_started: bool,

    intervals: Vec<IntervalRecord>,
    measurements: Vec<MeasurementRecord>,
    estimate_log: Vec<EstimateRecord>,
}

fn params(capacity_mbps: f64, cfg: &SimConfig) -> Mm1kParams {
    Mm1kParams::for_link(capacity_mbps, cfg.packet_size_bits, cfg.queue_capacity)
        .expect("validated capacity and packet size")
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario, options: RunOptions) -> Result<Self, SimError> {
        let cfg = scenario.settings.sim.clone();
        let seed = options.seed.unwrap_or(scenario.seed);

        let mut pairs = Vec::new();
        let mut group_pairs = Vec::with_capacity(scenario.groups.len());
        let mut link_pairs = vec![Vec::new(); scenario.links.len()];
        for g in &scenario.groups {
            let start = pairs.len();
            for (position, &link) in g.allowed_links.iter().enumerate() {
                link_pairs[link.0].push(pairs.len());
                pairs.push(Pair {
                    group: g.id,
                    link,
                    position,
                    priority: g.priority(),
                });
            }
            group_pairs.push(start..pairs.len());
        }
        let mut port_links = vec![Vec::new(); scenario.ports.len()];
        for l in &scenario.links {
            port_links[l.bottleneck_port.0].push(l.id.0);
        }

        let group_rng = scenario
            .groups
            .iter()
            .map(|g| stream_rng(g.traffic.seed.unwrap_or(seed), g.id.0 as u64))
            .collect();
        let port_rng = scenario
            .ports
            .iter()
            .map(|p| {
                let s = scenario.cross_traffic[p.id.0]
                    .as_ref()
                    .and_then(|c| c.seed)
                    .unwrap_or(seed);
                stream_rng(s, PORT_STREAM_BASE + p.id.0 as u64)
            })
            .collect();

        let split = proportional_policy(scenario);
        let qos_policy = match options.qos {
            QosMode::FixedWeights => fixed_weights(&peak_snapshot(scenario, &split))?,
            _ => QosPolicy::default(),
        };

        let sabe_cfg = scenario.settings.sabe.clone();
        let central = options
            .sabe
            .then(|| SabeEstimator::new(scenario, sabe_cfg.clone(), ControlledScope::Bottleneck));
        let agents = if options.sabe && options.qos == QosMode::Distributed {
            scenario
                .sending_nodes()
                .into_iter()
                .map(|n| {
                    let links = scenario.links_from(n).map(|l| l.id).collect();
                    let est =
                        SabeEstimator::for_links(scenario, links, sabe_cfg.clone(), ControlledScope::Link);
                    (n, est)
                })
                .collect()
        } else {
            Vec::new()
        };

        let n_links = scenario.links.len();
        let n_groups = scenario.groups.len();
        let latest = scenario
            .links
            .iter()
            .map(|l| LinkMeasurement {
                link: l.id,
                interval_end: 0.0,
                delay: l.prop_delay,
                loss: 0.0,
                jitter: 0.0,
                throughput: 0.0,
            })
            .collect();
        Ok(Self {
            scenario,
            options,
            link_params: scenario.links.iter().map(|l| params(l.nominal_capacity_mbps, &cfg)).collect(),
            port_params: scenario.ports.iter().map(|p| params(p.capacity_mbps, &cfg)).collect(),
            cfg,
            tick: 0,
            tcp_cap: vec![None; pairs.len()],
            pair_acc: vec![FlowAcc::default(); pairs.len()],
            pair_quality: vec![(0.0, 0.0); pairs.len()],
            pairs,
            group_pairs,
            link_pairs,
            port_links,
            group_rng,
            port_rng,
            split,
            qos_policy,
            group_acc: vec![FlowAcc::default(); n_groups],
            link_acc: vec![LinkAcc::default(); n_links],
            cross_acc: vec![0.0; scenario.ports.len()],
            demand_acc: vec![0.0; n_groups],
            spr_demand_acc: vec![0.0; n_groups],
            spr_acc_ticks: 0,
            interval_ticks: 0,
            latest,
            last_demand: vec![0.0; n_groups],
            central,
            agents,
            estimates: None,
            agent_estimates: None,
            spr_started: false,
            intervals: Vec::new(),
            measurements: Vec::new(),
            estimate_log: Vec::new(),
        })
    }

    pub fn options(&self) -> RunOptions {
        self.options
    }

    /// Start time of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.tick_s
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.cfg.total_ticks()
    }

    pub fn spr_policy(&self) -> &SprPolicy {
        &self.split
    }

    pub fn qos_policy(&self) -> &QosPolicy {
        &self.qos_policy
    }

    /// Advance one tick; closes the monitoring interval and runs the control
    /// plane when the tick ends one.
    pub fn step(&mut self) -> Result<TickSummary, SimError> {
        let scenario = self.scenario;
        let t = self.time();
        let non_finite = |what| SimError::NonFinite { what, time: t };

        let demand: Vec<f64> = scenario
            .groups
            .iter()
            .map(|g| {
                let n = normal_sample(&mut self.group_rng[g.id.0], g.traffic.noise_std);
                g.traffic.rate(t, n)
            })
            .collect();
        if demand.iter().any(|d| !d.is_finite()) {
            return Err(non_finite("demand"));
        }

        // senders: high priority sends its share, low priority is capped by
        // its TCP-like window
        let mut sent = vec![0.0; self.pairs.len()];
        let mut cap_bound = vec![false; self.pairs.len()];
        for (i, p) in self.pairs.iter().enumerate() {
            let share = demand[p.group.0] * self.split.groups[p.group.0].ratios[p.position];
            sent[i] = match self.tcp_cap[i] {
                Some(c) if p.priority == Priority::Low && share > c => {
                    cap_bound[i] = true;
                    c
                }
                _ => share,
            };
        }

        // per-link class scheduler
        let mut admitted = vec![0.0; self.pairs.len()];
        let mut link_admitted = vec![0.0; scenario.links.len()];
        let mut link_high = vec![0.0; scenario.links.len()];
        for l in &scenario.links {
            let members = &self.link_pairs[l.id.0];
            let entries: Vec<SchedulerEntry> = members
                .iter()
                .map(|&i| {
                    let p = &self.pairs[i];
                    let rule = self.qos_policy.rule(p.group, p.link);
                    SchedulerEntry {
                        priority: p.priority,
                        offered: sent[i],
                        weight: rule.and_then(|r| r.wfq_weight).unwrap_or(0.0),
                        shaper: rule.and_then(|r| r.shaper_mbps),
                    }
                })
                .collect();
            let rates = scheduler_model(l.nominal_capacity_mbps, &entries);
            for (&i, r) in members.iter().zip(rates) {
                admitted[i] = r;
                link_admitted[l.id.0] += r;
                if self.pairs[i].priority == Priority::High {
                    link_high[l.id.0] += r;
                }
            }
        }

        // WAN queue at every bottleneck port
        let k = self.cfg.queue_capacity;
        let mut ports = Vec::with_capacity(scenario.ports.len());
        let mut port_delay = vec![0.0; scenario.ports.len()];
        let mut port_loss = vec![0.0; scenario.ports.len()];
        for p in &scenario.ports {
            let controlled: f64 = self.port_links[p.id.0].iter().map(|&e| link_admitted[e]).sum();
            let cross = match &scenario.cross_traffic[p.id.0] {
                Some(c) => {
                    let n = normal_sample(&mut self.port_rng[p.id.0], c.noise_std);
                    c.rate(t, n)
                }
                None => 0.0,
            };
            let rho = (controlled + cross) / p.capacity_mbps;
            if !rho.is_finite() {
                return Err(non_finite("port load"));
            }
            port_loss[p.id.0] = loss_probability(rho, k).map_err(|_| non_finite("port load"))?;
            port_delay[p.id.0] = queueing_delay(rho, &self.port_params[p.id.0]);
            self.cross_acc[p.id.0] += cross;
            ports.push(PortTick {
                port: p.id,
                controlled_mbps: controlled,
                cross_mbps: cross,
                rho,
            });
        }

        let mut links = Vec::with_capacity(scenario.links.len());
        for l in &scenario.links {
            let port = l.bottleneck_port.0;
            let acc = &mut self.link_acc[l.id.0];
            let d = l.prop_delay + port_delay[port];
            acc.delay += d;
            acc.delay_sq += d * d;
            acc.loss += port_loss[port];
            acc.throughput += link_admitted[l.id.0];
            links.push(LinkTick {
                link: l.id,
                admitted_mbps: link_admitted[l.id.0],
                wan_delay: port_delay[port],
                wan_loss: port_loss[port],
            });
        }

        let mut pair_ticks = Vec::with_capacity(self.pairs.len());
        for (i, p) in self.pairs.iter().enumerate() {
            let l = scenario.link(p.link);
            let e = l.id.0;
            let port = l.bottleneck_port.0;
            let lp = &self.link_params[e];
            let sched_rho = match p.priority {
                Priority::High => link_high[e],
                Priority::Low => link_admitted[e],
            } / l.nominal_capacity_mbps;
            let wait = (queueing_delay(sched_rho, lp) - lp.service_time()).max(0.0);
            let delay = l.prop_delay + wait + port_delay[port];
            let drops = (sent[i] - admitted[i]).max(0.0);
            let lost = drops + admitted[i] * port_loss[port];
            self.pair_acc[i].add(sent[i], lost, delay);
            self.group_acc[p.group.0].add(sent[i], lost, delay);

            if p.priority == Priority::Low {
                let delivered = admitted[i] - admitted[i] * port_loss[port];
                self.tcp_cap[i] = if lost > 1e-9 {
                    Some((delivered * self.cfg.probe_headroom).max(self.cfg.min_rate_mbps))
                } else if cap_bound[i] {
                    Some((sent[i] * self.cfg.headroom).max(self.cfg.min_rate_mbps))
                } else {
                    None
                };
            }
            pair_ticks.push(PairTick {
                group: p.group,
                link: p.link,
                sent_mbps: sent[i],
                admitted_mbps: admitted[i],
                delay,
                loss: if sent[i] > 0.0 { lost / sent[i] } else { 0.0 },
            });
        }

        for (k, d) in demand.iter().enumerate() {
            self.demand_acc[k] += d;
            self.spr_demand_acc[k] += d;
        }
        self.spr_acc_ticks += 1;
        self.interval_ticks += 1;
        self.tick += 1;

        let interval_closed = self.tick % self.cfg.monitor_ticks() == 0;
        if interval_closed {
            self.close_interval();
            self.control()?;
        }
        Ok(TickSummary {
            time: t,
            pairs: pair_ticks,
            links,
            ports,
            interval_closed,
        })
    }

    /// Run to the end of the configured duration.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(RunOutput {
            options: self.options,
            report: SlaReport::from_intervals(&self.intervals),
            intervals: self.intervals,
            measurements: self.measurements,
            estimates: self.estimate_log,
            spr_policy: self.split,
            qos_policy: self.qos_policy,
        })
    }

    fn close_interval(&mut self) {
        let scenario = self.scenario;
        let end = self.time();
        let n = self.interval_ticks as f64;
        let tol = self.cfg.loss_tolerance;

        for l in &scenario.links {
            let acc = std::mem::take(&mut self.link_acc[l.id.0]);
            let mean = acc.delay / n;
            let var = (acc.delay_sq / n - mean * mean).max(0.0);
            let m = LinkMeasurement {
                link: l.id,
                interval_end: end,
                delay: mean,
                loss: acc.loss / n,
                jitter: var.sqrt(),
                throughput: acc.throughput / n,
            };
            self.latest[l.id.0] = m;
            self.measurements.push(MeasurementRecord {
                measurement: m,
                truth_cross_traffic_mbps: self.cross_acc[l.bottleneck_port.0] / n,
            });
        }
        self.cross_acc.iter_mut().for_each(|c| *c = 0.0);

        for (i, p) in self.pairs.iter().enumerate() {
            let acc = std::mem::take(&mut self.pair_acc[i]);
            self.pair_quality[i] = if acc.sent > 0.0 {
                (acc.delay_weighted / acc.sent, acc.lost / acc.sent)
            } else {
                let m = &self.latest[p.link.0];
                (m.delay, m.loss)
            };
        }

        for g in &scenario.groups {
            let acc = std::mem::take(&mut self.group_acc[g.id.0]);
            self.last_demand[g.id.0] = self.demand_acc[g.id.0] / n;
            self.demand_acc[g.id.0] = 0.0;
            if acc.sent <= 0.0 {
                continue;
            }
            let loss = acc.lost / acc.sent;
            let delay = acc.delay_weighted / acc.sent;
            self.intervals.push(IntervalRecord {
                interval_end: end,
                group: g.id,
                class: g.class,
                offered_mbps: acc.sent / n,
                loss,
                delay,
                loss_ok: loss <= g.sla.loss + tol,
                delay_ok: delay <= g.sla.delay,
            });
        }
        self.interval_ticks = 0;
    }

    fn control(&mut self) -> Result<(), SimError> {
        let scenario = self.scenario;
        let end = self.time();

        if let Some(est) = self.central.as_mut() {
            let e = est.estimate_all(scenario, &self.latest);
            self.estimate_log
                .extend(e.iter().map(|&estimate| EstimateRecord { interval_end: end, estimate }));
            self.estimates = Some(e);
        }
        if !self.agents.is_empty() {
            let mut by_link: Vec<Option<AbwEstimate>> = vec![None; scenario.links.len()];
            for (_, agent) in &mut self.agents {
                for e in agent.estimate_all(scenario, &self.latest) {
                    by_link[e.link.0] = Some(e);
                }
            }
            self.agent_estimates = by_link.into_iter().collect();
        }

        match self.options.spr {
            SprMode::Atns => {
                for g in &scenario.groups {
                    self.split.groups[g.id.0] =
                        device_spr_split(scenario, g.id, &self.latest, self.cfg.loss_tolerance);
                }
            }
            SprMode::Mlu => {
                if !self.spr_started || self.tick % self.cfg.spr_ticks() == 0 {
                    self.optimize_split();
                }
            }
        }

        if self.tick % self.cfg.qos_ticks() == 0 {
            self.allocate_rates()?;
        }
        Ok(())
    }

    fn optimize_split(&mut self) {
        let scenario = self.scenario;
        let ticks = self.spr_acc_ticks.max(1) as f64;
        let demands: Vec<f64> = self.spr_demand_acc.iter().map(|d| d / ticks).collect();
        let inst = SprInstance::from_scenario(
            scenario,
            SprInputs {
                demands: &demands,
                measurements: Some(&self.latest),
                estimates: self.estimates.as_deref(),
            },
        );
        let response = AnyResponse::new(
            scenario.settings.spr.response,
            self.cfg.packet_size_bits,
            self.cfg.queue_capacity,
        );
        let current: Vec<Vec<f64>> = self.split.groups.iter().map(|g| g.ratios.clone()).collect();
        let solution =
            optimize_spr_local_search(&inst, Some(current), &response, &scenario.settings.spr);
        self.split = inst.to_policy(scenario, &solution.split);
        self.spr_demand_acc.iter_mut().for_each(|d| *d = 0.0);
        self.spr_acc_ticks = 0;
        self.spr_started = true;
    }

    fn allocate_rates(&mut self) -> Result<(), SimError> {
        let scenario = self.scenario;
        let weights = &scenario.settings.qos;
        let all: Vec<LinkId> = scenario.links.iter().map(|l| l.id).collect();
        self.qos_policy = match self.options.qos {
            QosMode::FixedWeights => return Ok(()),
            QosMode::LocalSearch => {
                let snap = self.snapshot(&all, self.estimates.as_deref());
                optimize_qos_centralized(&snap, weights)?.1
            }
            QosMode::Oracle => {
                let snap = self.snapshot(&all, self.estimates.as_deref());
                brute_force_qos(&snap, weights)?.policy(&snap)
            }
            QosMode::Distributed => {
                let mut policies = Vec::new();
                for node in scenario.sending_nodes() {
                    let links: Vec<LinkId> = scenario.links_from(node).map(|l| l.id).collect();
                    let snap = self.snapshot(&links, self.agent_estimates.as_deref());
                    policies.push(optimize_qos_centralized(&snap, weights)?.1);
                }
                QosPolicy::merge(policies)
            }
        };
        Ok(())
    }

    /// Allocation input over `links`: safe capacity from `estimates` when
    /// given, the safety fraction of nominal capacity otherwise, and last
    /// interval's demand times the current split.
    fn snapshot(&self, links: &[LinkId], estimates: Option<&[AbwEstimate]>) -> QosSnapshot {
        let scenario = self.scenario;
        let theta = scenario.settings.sabe.theta;
        let members: BTreeSet<LinkId> = links.iter().copied().collect();
        let qos_links = links
            .iter()
            .map(|&id| {
                let l = scenario.link(id);
                QosLink {
                    link: id,
                    capacity_mbps: estimates
                        .map_or(theta * l.nominal_capacity_mbps, |e| e[id.0].safe_abw_mbps),
                    shares_with: l
                        .bottleneck_group
                        .iter()
                        .copied()
                        .filter(|o| members.contains(o))
                        .collect(),
                }
            })
            .collect();
        let mut demands = Vec::new();
        for g in &scenario.groups {
            for i in self.group_pairs[g.id.0].clone() {
                let p = &self.pairs[i];
                if !members.contains(&p.link) {
                    continue;
                }
                let d = self.last_demand[g.id.0] * self.split.groups[g.id.0].ratios[p.position];
                if d <= 0.0 {
                    continue;
                }
                let (delay, loss) = self.pair_quality[i];
                demands.push(QosDemand {
                    group: g.id,
                    link: p.link,
                    priority: p.priority,
                    demand_mbps: d,
                    sla: g.sla,
                    delay,
                    loss,
                });
            }
        }
        QosSnapshot {
            links: qos_links,
            demands,
        }
    }
}

/// Peak traffic of every group times its split over nominal capacities;
/// the input the fixed-weights baseline is configured from.
fn peak_snapshot(scenario: &Scenario, split: &SprPolicy) -> QosSnapshot {
    let links = scenario
        .links
        .iter()
        .map(|l| QosLink {
            link: l.id,
            capacity_mbps: l.nominal_capacity_mbps,
            shares_with: l.bottleneck_group.clone(),
        })
        .collect();
    let demands = scenario
        .groups
        .iter()
        .flat_map(|g| {
            let s = split.split(g.id);
            s.links.iter().zip(&s.ratios).map(move |(&link, &x)| QosDemand {
                group: g.id,
                link,
                priority: g.priority(),
                demand_mbps: g.traffic.peak() * x,
                sla: g.sla,
                delay: 0.0,
                loss: 0.0,
            })
        })
        .collect();
    QosSnapshot { links, demands }
}
