mod render;
mod sweep;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use sdwan_core::io as csvio;
use sdwan_core::model::{LinkId, LinkMeasurement};
use sdwan_core::qos::{
    brute_force_qos, fixed_weights, fixed_weights_allocation, optimize_qos_centralized, QosLink,
    QosSnapshot,
};
use sdwan_core::sabe::{cross_traffic_error, estimate_trace};
use sdwan_core::sim::{QosMode, RunOptions, Simulator, SprMode};
use sdwan_core::spr::{optimize_spr_local_search, AnyResponse, SprInputs, SprInstance};
use sdwan_core::Scenario;

/// Exit code for unreadable or invalid input.
const EXIT_INPUT: u8 = 2;
/// Exit code for failures while running.
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sdwan", version, about = "SD-WAN split and QoS policy optimization and simulation")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "sdwan-out")]
    out: PathBuf,
    /// How results are printed on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AllocMode {
    Centralized,
    Distributed,
    FixedWeights,
    Oracle,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file and print a summary.
    Validate {
        /// Scenario TOML; the built-in reference scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run the closed loop once.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "mlu")]
        spr: SprMode,
        #[arg(long, default_value = "ls")]
        qos: QosMode,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        sabe: Switch,
    },
    /// Run a matrix of configurations and compare them with and without
    /// estimation.
    Sweep {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [SprMode::Atns, SprMode::Mlu])]
        spr: Vec<SprMode>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [QosMode::FixedWeights, QosMode::LocalSearch, QosMode::Distributed])]
        qos: Vec<QosMode>,
        #[arg(long, value_enum, value_delimiter = ',', num_args = 1.., default_values_t = [Switch::Off, Switch::On])]
        sabe: Vec<Switch>,
        /// Seeds to average over; the scenario seed (or --seed) when omitted.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
    },
    /// Replay a measurement trace through the estimator.
    Estimate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Measurement trace CSV.
        #[arg(long)]
        trace: PathBuf,
        /// Smallest true cross-traffic (Mbps) counted in the error summary.
        #[arg(long, default_value_t = 0.5)]
        min_truth: f64,
    },
    /// Optimize split ratios for given demands.
    OptimizeSpr {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// `group,demand_mbps` CSV.
        #[arg(long)]
        demands: PathBuf,
        /// Measurement trace; its last interval gives link quality.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Use estimated cross-traffic and safe capacity from the trace.
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        sabe: Switch,
    },
    /// Allocate per-pair rates for given demands.
    OptimizeQos {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// `group,link,demand_mbps[,delay_s,loss]` CSV.
        #[arg(long)]
        demands: PathBuf,
        #[arg(long, value_enum, default_value_t = AllocMode::Centralized)]
        mode: AllocMode,
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        sabe: Switch,
        /// Measurement trace for the estimator.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INPUT,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", error_chain(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// The error and its causes joined by `: `. Core errors already quote their
/// source, so a cause whose text is already there is skipped.
fn error_chain(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if out.is_empty() {
            out = text;
        } else if !out.contains(&text) {
            out = format!("{out}: {text}");
        }
    }
    out
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { scenario } => {
            let s = load_scenario(scenario.as_deref())?;
            let mut out = io::stdout().lock();
            render::scenario_summary(&mut out, &s).runtime()
        }
        Command::Simulate { scenario, spr, qos, sabe } => {
            let s = load_scenario(scenario.as_deref())?;
            simulate(cli, &s, RunOptions {
                spr: *spr,
                qos: *qos,
                sabe: sabe.on(),
                seed: cli.seed,
            })
        }
        Command::Sweep { scenario, spr, qos, sabe, seeds } => {
            let s = load_scenario(scenario.as_deref())?;
            let seeds = if seeds.is_empty() {
                vec![cli.seed.unwrap_or(s.seed)]
            } else {
                seeds.clone()
            };
            let sabe: Vec<bool> = sabe.iter().map(|s| s.on()).collect();
            let plan = sweep::SweepPlan::new(&s, spr.clone(), qos.clone(), sabe, seeds).input()?;
            sweep::run(cli, &s, &plan)
        }
        Command::Estimate { scenario, trace, min_truth } => {
            let s = load_scenario(scenario.as_deref())?;
            estimate(cli, &s, trace, *min_truth)
        }
        Command::OptimizeSpr { scenario, demands, trace, sabe } => {
            let s = load_scenario(scenario.as_deref())?;
            optimize_spr(cli, &s, demands, trace.as_deref(), sabe.on())
        }
        Command::OptimizeQos { scenario, demands, mode, sabe, trace } => {
            let s = load_scenario(scenario.as_deref())?;
            optimize_qos(cli, &s, demands, *mode, sabe.on(), trace.as_deref())
        }
    }
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => Scenario::load(p).input(),
        None => Ok(Scenario::reference()),
    }
}

fn open_input(path: &Path) -> Result<File, Failure> {
    File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .input()
}

/// Creates `name` under the output directory.
fn create_output(cli: &Cli, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create {}", cli.out.display()))
        .runtime()?;
    let path = cli.out.join(name);
    let file = File::create(&path)
        .with_context(|| format!("cannot create {}", path.display()))
        .runtime()?;
    Ok(BufWriter::new(file))
}

fn simulate(cli: &Cli, s: &Scenario, options: RunOptions) -> Result<(), Failure> {
    let output = Simulator::new(s, options).runtime()?.run().runtime()?;
    csvio::write_report(create_output(cli, "report.csv")?, &output.report).runtime()?;
    csvio::write_intervals(create_output(cli, "intervals.csv")?, s, &output.intervals).runtime()?;
    csvio::write_trace(create_output(cli, "trace.csv")?, s, &output.measurements).runtime()?;
    if options.sabe {
        csvio::write_estimates(create_output(cli, "estimates.csv")?, s, &output.estimates).runtime()?;
    }
    csvio::write_spr_policy(create_output(cli, "spr_policy.csv")?, s, &output.spr_policy).runtime()?;
    csvio::write_qos_policy(create_output(cli, "qos_policy.csv")?, s, &output.qos_policy).runtime()?;

    let mut out = io::stdout().lock();
    match cli.format {
        Format::Csv => csvio::write_report(&mut out, &output.report).runtime(),
        Format::Table => render::report_table(&mut out, &options, &output.report).runtime(),
    }
}

fn estimate(cli: &Cli, s: &Scenario, trace: &Path, min_truth: f64) -> Result<(), Failure> {
    let rows = csvio::read_trace(open_input(trace)?, s)
        .with_context(|| format!("reading {}", trace.display()))
        .input()?;
    let measurements: Vec<LinkMeasurement> = rows.iter().map(|r| r.measurement).collect();
    let estimates = estimate_trace(s, &s.settings.sabe, &measurements);
    csvio::write_estimates(create_output(cli, "estimates.csv")?, s, &estimates).runtime()?;

    let truth = |link: LinkId, end: f64| {
        rows.iter()
            .find(|r| r.measurement.link == link && r.measurement.interval_end == end)
            .and_then(|r| r.truth_cross_traffic_mbps)
    };
    let error = cross_traffic_error(
        estimates.iter().filter_map(|e| {
            truth(e.estimate.link, e.interval_end).map(|t| (e.estimate.cross_traffic_mbps, t))
        }),
        min_truth,
    );
    let mut out = io::stdout().lock();
    match cli.format {
        Format::Csv => csvio::write_estimates(&mut out, s, &estimates).runtime(),
        Format::Table => {
            writeln!(out, "estimates: {}", estimates.len()).runtime()?;
            match error {
                Some(e) => writeln!(
                    out,
                    "cross-traffic relative error over {} samples: mean {:.2}%, max {:.2}%",
                    e.samples,
                    100.0 * e.mean,
                    100.0 * e.max
                ),
                None => writeln!(out, "no ground truth above {min_truth} Mbps in the trace"),
            }
            .runtime()
        }
    }
}

/// Last measurement of every link in the trace; links never measured are
/// reported idle.
fn latest_measurements(s: &Scenario, trace: &[LinkMeasurement]) -> Vec<LinkMeasurement> {
    s.links
        .iter()
        .map(|l| {
            trace
                .iter()
                .filter(|m| m.link == l.id)
                .max_by(|a, b| a.interval_end.total_cmp(&b.interval_end))
                .copied()
                .unwrap_or(LinkMeasurement {
                    link: l.id,
                    interval_end: 0.0,
                    delay: l.prop_delay,
                    loss: 0.0,
                    jitter: 0.0,
                    throughput: 0.0,
                })
        })
        .collect()
}

/// Trace plus, when asked for, the estimator's view of its last interval.
fn trace_inputs(
    s: &Scenario,
    trace: Option<&Path>,
    sabe: bool,
) -> Result<(Option<Vec<LinkMeasurement>>, Option<Vec<sdwan_core::model::AbwEstimate>>), Failure> {
    let Some(path) = trace else {
        if sabe {
            return Err(anyhow!("--sabe on needs --trace")).input();
        }
        return Ok((None, None));
    };
    let rows = csvio::read_trace(open_input(path)?, s)
        .with_context(|| format!("reading {}", path.display()))
        .input()?;
    let trace: Vec<LinkMeasurement> = rows.iter().map(|r| r.measurement).collect();
    let latest = latest_measurements(s, &trace);
    let estimates = sabe.then(|| {
        let records = estimate_trace(s, &s.settings.sabe, &trace);
        let theta = s.settings.sabe.theta;
        s.links
            .iter()
            .map(|l| {
                records
                    .iter()
                    .rev()
                    .find(|r| r.estimate.link == l.id)
                    .map(|r| r.estimate)
                    .unwrap_or(sdwan_core::model::AbwEstimate {
                        link: l.id,
                        rho: 0.0,
                        cross_traffic_mbps: 0.0,
                        safe_abw_mbps: theta * l.nominal_capacity_mbps,
                        theta,
                        flags: sdwan_core::model::AbwFlags {
                            stale: true,
                            ..Default::default()
                        },
                    })
            })
            .collect()
    });
    Ok((Some(latest), estimates))
}

fn optimize_spr(
    cli: &Cli,
    s: &Scenario,
    demands: &Path,
    trace: Option<&Path>,
    sabe: bool,
) -> Result<(), Failure> {
    let demands = csvio::read_demands(open_input(demands)?, s)
        .with_context(|| format!("reading {}", demands.display()))
        .input()?;
    let (measurements, estimates) = trace_inputs(s, trace, sabe)?;
    let inst = SprInstance::from_scenario(
        s,
        SprInputs {
            demands: &demands,
            measurements: measurements.as_deref(),
            estimates: estimates.as_deref(),
        },
    );
    let settings = &s.settings.spr;
    let response = AnyResponse::new(
        settings.response,
        s.settings.sim.packet_size_bits,
        s.settings.sim.queue_capacity,
    );
    let solution = optimize_spr_local_search(&inst, None, &response, settings);
    let policy = inst.to_policy(s, &solution.split);
    csvio::write_spr_policy(create_output(cli, "spr_policy.csv")?, s, &policy).runtime()?;

    let mut out = io::stdout().lock();
    match cli.format {
        Format::Csv => csvio::write_spr_policy(&mut out, s, &policy).runtime(),
        Format::Table => {
            let e = &solution.evaluation;
            writeln!(
                out,
                "objective {:.6}  max utilization {:.4}  iterations {}",
                e.objective, e.lu, solution.iterations
            )
            .runtime()
        }
    }
}

fn optimize_qos(
    cli: &Cli,
    s: &Scenario,
    demands: &Path,
    mode: AllocMode,
    sabe: bool,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let demands = csvio::read_qos_demands(open_input(demands)?, s)
        .with_context(|| format!("reading {}", demands.display()))
        .input()?;
    let (_, estimates) = trace_inputs(s, trace, sabe)?;
    let mut links: Vec<LinkId> = demands.iter().map(|d| d.link).collect();
    links.sort_unstable();
    links.dedup();
    let theta = s.settings.sabe.theta;
    let snapshot_for = |members: &[LinkId], nominal: bool| QosSnapshot {
        links: members
            .iter()
            .map(|&id| {
                let l = s.link(id);
                let capacity = if nominal {
                    l.nominal_capacity_mbps
                } else {
                    estimates
                        .as_ref()
                        .map_or(theta * l.nominal_capacity_mbps, |e| e[id.0].safe_abw_mbps)
                };
                QosLink {
                    link: id,
                    capacity_mbps: capacity,
                    shares_with: l
                        .bottleneck_group
                        .iter()
                        .copied()
                        .filter(|o| members.contains(o))
                        .collect(),
                }
            })
            .collect(),
        demands: demands
            .iter()
            .filter(|d| members.contains(&d.link))
            .cloned()
            .collect(),
    };
    let weights = &s.settings.qos;
    let (objective, policy) = match mode {
        AllocMode::Centralized => {
            let snap = snapshot_for(&links, false);
            let (sol, policy) = optimize_qos_centralized(&snap, weights).runtime()?;
            (sol.objective, policy)
        }
        AllocMode::Distributed => {
            let mut objective = 0.0;
            let mut policies = Vec::new();
            for node in s.sending_nodes() {
                let own: Vec<LinkId> = links.iter().copied().filter(|&l| s.link(l).src == node).collect();
                if own.is_empty() {
                    continue;
                }
                let snap = snapshot_for(&own, false);
                let (sol, policy) = optimize_qos_centralized(&snap, weights).runtime()?;
                objective += sol.objective;
                policies.push(policy);
            }
            (objective, sdwan_core::model::QosPolicy::merge(policies))
        }
        AllocMode::FixedWeights => {
            let snap = snapshot_for(&links, true);
            let policy = fixed_weights(&snap).runtime()?;
            let alloc = fixed_weights_allocation(&snapshot_for(&links, false), weights).runtime()?;
            (alloc.objective, policy)
        }
        AllocMode::Oracle => {
            let snap = snapshot_for(&links, false);
            let sol = brute_force_qos(&snap, weights).input()?;
            let policy = sol.policy(&snap);
            (sol.objective, policy)
        }
    };
    csvio::write_qos_policy(create_output(cli, "qos_policy.csv")?, s, &policy).runtime()?;

    let mut out = io::stdout().lock();
    match cli.format {
        Format::Csv => csvio::write_qos_policy(&mut out, s, &policy).runtime(),
        Format::Table => {
            writeln!(out, "objective {objective:.6}  rules {}", policy.rules.len()).runtime()
        }
    }
}
