//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the test harness so the lines always show.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{bottleneck_load, random_snapshot, single_link_toml, SnapshotShape};
use sdwan_core::io::{write_intervals, write_report, write_trace};
use sdwan_core::model::{GroupId, LinkId, Priority, Sla, TrafficClass};
use sdwan_core::qos::{
    allocate_high_priority, brute_force_qos, fixed_weights_allocation, optimize_qos_centralized,
    LowPriorityLocalSearch, QosDemand, QosLink, QosSnapshot, QosWeights,
};
use sdwan_core::queueing::{
    calibrate_theta, invert_load, loss_probability, mean_delay, mean_occupancy, InversionBranch,
    LoadGrid, Mm1kParams, LOSS_OBSERVED_THRESHOLD,
};
use sdwan_core::sabe::{cross_traffic_error, estimate_trace};
use sdwan_core::sim::{QosMode, RunOptions, RunOutput, Simulator, SlaReport, SprMode};
use sdwan_core::Scenario;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if elapsed > budget {
        out.pass = false;
        out.detail = format!("{}; took {:.1?}, budget {:.0?}", out.detail, elapsed, budget);
    }
    (out, elapsed)
}

fn queueing_identities() -> Outcome {
    let mut problems = Vec::new();
    for k in [1u32, 10, 50, 100, 250] {
        let p = loss_probability(1.0, k).unwrap();
        let want = 1.0 / f64::from(k + 1);
        if (p - want).abs() > 4.0 * f64::EPSILON * want {
            problems.push(format!("P(1, {k}) = {p:e}"));
        }
        let l = mean_occupancy(1.0, k).unwrap();
        if (l - f64::from(k) / 2.0).abs() > 4.0 * f64::EPSILON * f64::from(k) {
            problems.push(format!("L(1, {k}) = {l}"));
        }
        // dL/drho at 1 is the variance of a uniform law on {0..K}
        let slope = f64::from(k) * f64::from(k + 2) / 12.0;
        for eps in [1e-8, -1e-8] {
            let dp = (loss_probability(1.0 + eps, k).unwrap() - p).abs();
            let dl = (mean_occupancy(1.0 + eps, k).unwrap() - l - slope * eps).abs();
            if dp >= 1e-6 || dl >= 1e-6 {
                problems.push(format!("jump at 1{eps:+e}, K {k}: {dp:e} {dl:e}"));
            }
        }
        for eps in [1e-10, -1e-10] {
            let dl = (mean_occupancy(1.0 + eps, k).unwrap() - l).abs();
            if dl >= 1e-6 {
                problems.push(format!("L jump at 1{eps:+e}, K {k}: {dl:e}"));
            }
        }
        let mut last = 0.0;
        for i in 0..=2000 {
            let rho = f64::from(i) * 0.001;
            let p = loss_probability(rho, k).unwrap();
            if p < last {
                problems.push(format!("P decreases at rho {rho}, K {k}"));
                break;
            }
            last = p;
        }
    }
    Outcome::new(problems.is_empty(), if problems.is_empty() { "P(1,K) = 1/(K+1), L(1,K) = K/2, continuous at 1, monotone on [0, 2]".into() } else { problems.join("; ") })
}

fn theta_calibration() -> Outcome {
    let theta = calibrate_theta(100, 1e-5, &LoadGrid::default());
    Outcome::new((0.909..=0.919).contains(&theta), format!("theta = {theta:.3}"))
}

fn inversion_round_trip() -> Outcome {
    let grid = LoadGrid::default();
    let params = Mm1kParams::for_link(25.0, 12_000.0, 100).unwrap();
    let mut worst: f64 = 0.0;
    let mut wrong_branch = 0;
    for i in 0..50 {
        let rho = 0.05 + (1.5 - 0.05) * f64::from(i) / 49.0;
        let delay = mean_delay(rho, &params).unwrap();
        let loss = loss_probability(rho, 100).unwrap();
        let est = invert_load(delay, loss, &params, &grid);
        let expected = if loss > LOSS_OBSERVED_THRESHOLD { InversionBranch::Loss } else { InversionBranch::Delay };
        if est.branch != expected {
            wrong_branch += 1;
        }
        worst = worst.max((est.rho - rho).abs());
    }
    let pass = wrong_branch == 0 && worst <= 2.0 * grid.step() + 1e-12;
    Outcome::new(pass, format!("max |rho_hat - rho| = {worst:.2e} (limit {:.0e}), wrong branch {wrong_branch}/50", 2.0 * grid.step()))
}

fn sabe_self_consistency() -> Outcome {
    // 6 Mbps of unshaped critical traffic next to stationary cross-traffic on
    // a 25 Mbps port, at four load levels
    let mut pairs = Vec::new();
    for cross in [4.0, 8.0, 12.0, 16.0] {
        let base = Scenario::parse(&single_link_toml(600.0, 25.0, cross, &[("critical", 6.0)])).unwrap();
        let mut file = base.source().clone();
        file.seed = (cross as u64) * 31;
        if let Some(ct) = file.ports[1].cross_traffic.as_mut() {
            ct.noise_std = 0.05;
        }
        file.flow_groups[0].traffic.noise_std = 0.05;
        let scenario = sdwan_core::model::validate_scenario(&file).unwrap();
        let out = Simulator::new(&scenario, RunOptions::new(SprMode::Atns, QosMode::LocalSearch, false))
            .unwrap()
            .run()
            .unwrap();
        let trace: Vec<_> = out.measurements.iter().map(|r| r.measurement).collect();
        let estimates = estimate_trace(&scenario, &scenario.settings.sabe, &trace);
        for (e, r) in estimates.iter().zip(&out.measurements) {
            assert_eq!(e.estimate.link, r.measurement.link);
            pairs.push((e.estimate.cross_traffic_mbps, r.truth_cross_traffic_mbps));
        }
    }
    match cross_traffic_error(pairs, 0.5) {
        Some(err) => Outcome::new(
            err.mean <= 0.10,
            format!("mean relative error {:.2}%, max {:.2}% over {} intervals", 100.0 * err.mean, 100.0 * err.max, err.samples),
        ),
        None => Outcome::new(false, "no intervals with cross-traffic"),
    }
}

fn oracle_equivalence() -> Outcome {
    let shape = SnapshotShape { max_links: 2, max_groups: 4, max_capacity: 4.0, max_demand: 4.0 };
    let w = QosWeights::default();
    let (mut over_gap, mut worse_than_fw, mut worst_gap) = (Vec::new(), Vec::new(), 0.0f64);
    for seed in 0..20u64 {
        let s = random_snapshot(seed, shape);
        let (ls, _) = optimize_qos_centralized(&s, &w).unwrap();
        let opt = brute_force_qos(&s, &w).unwrap();
        let fw = fixed_weights_allocation(&s, &w).unwrap();
        let gap = (ls.objective - opt.objective) / opt.objective.abs().max(1.0);
        worst_gap = worst_gap.max(gap);
        if gap > 0.05 {
            over_gap.push(seed);
        }
        if ls.objective > fw.objective + 1e-9 * fw.objective.abs().max(1.0) {
            worse_than_fw.push(seed);
        }
    }
    Outcome::new(
        over_gap.is_empty() && worse_than_fw.is_empty(),
        format!(
            "worst gap to optimum {:.2}%; over 5% on seeds {over_gap:?}; worse than fixed weights on seeds {worse_than_fw:?}",
            100.0 * worst_gap
        ),
    )
}

fn local_search_invariants() -> Outcome {
    let shape = SnapshotShape { max_links: 3, max_groups: 5, max_capacity: 12.0, max_demand: 8.0 };
    let w = QosWeights::default();
    let mut problems = Vec::new();
    let mut grants = 0;
    for seed in 0..100u64 {
        let s = random_snapshot(seed, shape);
        let high = allocate_high_priority(&s, &w).unwrap();
        let high_demand: Vec<f64> = s
            .demands
            .iter()
            .map(|d| if d.priority == Priority::High { d.demand_mbps } else { 0.0 })
            .collect();
        let fits = bottleneck_load(&s, &high_demand).iter().zip(&s.links).all(|(l, c)| *l <= c.capacity_mbps);
        if fits
            && s.demands.iter().zip(&high.z).any(|(d, z)| d.priority == Priority::High && (z - d.demand_mbps).abs() > 1e-9)
        {
            problems.push(format!("seed {seed}: high priority not fully served"));
        }
        let mut ls = LowPriorityLocalSearch::new(&s, &w).unwrap();
        while let Some(g) = ls.step() {
            grants += 1;
            if g.objective_after >= g.objective_before {
                problems.push(format!("seed {seed}: grant did not lower the objective"));
            }
            let load = bottleneck_load(&s, &ls.solution().z);
            if load.iter().zip(&s.links).any(|(l, c)| *l > c.capacity_mbps + 1e-9) {
                problems.push(format!("seed {seed}: capacity exceeded after a grant"));
            }
        }
    }
    problems.dedup();
    let detail = if problems.is_empty() {
        format!("100 snapshots, {grants} grants checked")
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

fn fairness_symmetry() -> Outcome {
    let w = QosWeights::default();
    let mut problems = Vec::new();
    // capacities hold a whole number of grants per group
    for (n, capacity, demand, violating) in [
        (2, 8.0, 10.0, false),
        (3, 6.0, 5.0, false),
        (4, 10.0, 1.0, false),
        (3, 9.0, 2.0, true),
        (4, 7.0, 20.0, true),
    ] {
        let sla = Sla::new(0.1, 0.01);
        let snapshot = QosSnapshot {
            links: vec![QosLink { link: LinkId(0), capacity_mbps: capacity, shares_with: vec![] }],
            demands: (0..n)
                .map(|k| QosDemand {
                    group: GroupId(k),
                    link: LinkId(0),
                    priority: Priority::Low,
                    demand_mbps: demand,
                    sla,
                    delay: if violating { 0.2 } else { 0.05 },
                    loss: 0.0,
                })
                .collect(),
        };
        let (sol, _) = optimize_qos_centralized(&snapshot, &w).unwrap();
        if sol.z.iter().any(|&z| z != sol.z[0]) {
            problems.push(format!("{n} groups on {capacity} Mbps: {:?}", sol.z));
        }
    }
    let detail = if problems.is_empty() { "identical groups get identical rates".to_string() } else { problems.join("; ") };
    Outcome::new(problems.is_empty(), detail)
}

type Matrix = Vec<(RunOptions, RunOutput)>;

fn run_matrix(scenario: &Scenario) -> Matrix {
    let mut out = Vec::new();
    for spr in SprMode::ALL {
        for qos in [QosMode::FixedWeights, QosMode::LocalSearch, QosMode::Distributed] {
            for sabe in [false, true] {
                let opts = RunOptions::new(spr, qos, sabe);
                out.push((opts, Simulator::new(scenario, opts).unwrap().run().unwrap()));
            }
        }
    }
    out
}

fn report(m: &Matrix, spr: SprMode, qos: QosMode, sabe: bool) -> &SlaReport {
    &m.iter()
        .find(|(o, _)| o.spr == spr && o.qos == qos && o.sabe == sabe)
        .unwrap()
        .1
        .report
}

/// (loss, delay) satisfaction of one class.
fn sat(r: &SlaReport, class: TrafficClass) -> (f64, f64) {
    let c = r.class(class).unwrap();
    (c.loss_sat_pct, c.delay_sat_pct)
}

const HIGH: [TrafficClass; 2] = [TrafficClass::Critical, TrafficClass::Voip];
const LOW: [TrafficClass; 2] = [TrafficClass::Office, TrafficClass::Bulk];

fn closed_loop(m: &Matrix) -> Outcome {
    let mut failed = Vec::new();
    let mut notes = Vec::new();

    let fw = report(m, SprMode::Atns, QosMode::FixedWeights, false);
    let low_mean = |pick: fn((f64, f64)) -> f64| LOW.iter().map(|&c| pick(sat(fw, c))).sum::<f64>() / LOW.len() as f64;
    let (low_loss, low_delay) = (low_mean(|s| s.0), low_mean(|s| s.1));
    for c in HIGH {
        let (l, d) = sat(fw, c);
        if !(l < low_loss && d < low_delay) {
            failed.push("a");
        }
        notes.push(format!("ATNS-FW {} {l:.1}/{d:.1} vs low {low_loss:.1}/{low_delay:.1}", c.as_str()));
    }

    let best = sat(report(m, SprMode::Mlu, QosMode::LocalSearch, true), TrafficClass::Critical).0;
    let base = sat(fw, TrafficClass::Critical).0;
    if best < base + 20.0 {
        failed.push("b");
    }
    notes.push(format!("critical loss {base:.1} -> {best:.1}"));

    for spr in SprMode::ALL {
        let off = report(m, spr, QosMode::LocalSearch, false);
        let on = report(m, spr, QosMode::LocalSearch, true);
        for c in HIGH {
            let (a, b) = (sat(off, c), sat(on, c));
            if b.0 < a.0 || b.1 < a.1 {
                failed.push("c");
                notes.push(format!("{spr}-ls {}: {a:?} -> {b:?}", c.as_str()));
            }
        }
    }

    let mut worst_dist: f64 = 0.0;
    for spr in SprMode::ALL {
        let ls = report(m, spr, QosMode::LocalSearch, true);
        let dist = report(m, spr, QosMode::Distributed, true);
        for c in TrafficClass::ALL {
            let (a, b) = (sat(ls, c), sat(dist, c));
            worst_dist = worst_dist.max(a.0 - b.0).max(a.1 - b.1);
        }
    }
    if worst_dist > 25.0 {
        failed.push("d");
    }
    notes.push(format!("dist+sabe at most {worst_dist:.1} points below ls+sabe"));
    failed.dedup();
    let head = if failed.is_empty() { "(a)-(d) hold".to_string() } else { format!("failed parts {failed:?}") };
    Outcome::new(failed.is_empty(), format!("{head}; {}", notes.join("; ")))
}

fn output_bytes(scenario: &Scenario, out: &RunOutput) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_report(&mut bytes, &out.report).unwrap();
    write_intervals(&mut bytes, scenario, &out.intervals).unwrap();
    write_trace(&mut bytes, scenario, &out.measurements).unwrap();
    bytes
}

fn determinism(scenario: &Scenario, m: &Matrix) -> Outcome {
    let mut differing = Vec::new();
    for (opts, first) in m.iter().filter(|(o, _)| o.sabe && o.qos != QosMode::FixedWeights) {
        let again = Simulator::new(scenario, *opts).unwrap().run().unwrap();
        if output_bytes(scenario, first) != output_bytes(scenario, &again) {
            differing.push(format!("{}-{}", opts.spr, opts.qos));
        }
    }
    let detail = if differing.is_empty() { "repeated runs are byte-identical".to_string() } else { format!("differs: {}", differing.join(", ")) };
    Outcome::new(differing.is_empty(), detail)
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut print = |n: u32, name: &str, (out, elapsed): (Outcome, Duration)| {
        all_pass &= out.pass;
        println!(
            "criterion {n} {name}: {} - {} [{:.2?}]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed
        );
    };
    let secs = Duration::from_secs;
    print(1, "queueing identities", timed(secs(1), queueing_identities));
    print(2, "theta calibration", timed(secs(1), theta_calibration));
    print(3, "inversion round trip", timed(secs(5), inversion_round_trip));
    print(4, "estimator self-consistency", timed(secs(30), sabe_self_consistency));
    print(5, "rate allocation vs oracle", timed(secs(60), oracle_equivalence));
    print(6, "local search invariants", timed(secs(30), local_search_invariants));
    print(7, "fairness symmetry", timed(secs(1), fairness_symmetry));

    let scenario = Scenario::reference();
    let start = Instant::now();
    let matrix = run_matrix(&scenario);
    let mut outcome = closed_loop(&matrix);
    let elapsed = start.elapsed();
    if elapsed > secs(300) {
        outcome.pass = false;
        outcome.detail = format!("{}; matrix took {elapsed:.1?}, budget 300s", outcome.detail);
    }
    print(8, "closed-loop reproduction", (outcome, elapsed));
    print(9, "determinism", timed(secs(300), || determinism(&scenario, &matrix)));

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
