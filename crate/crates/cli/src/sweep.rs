//! Benchmark matrix: every (split mode, rate mode, estimation, seed) cell,
//! run in parallel and tabulated as `without / with` estimation.

use std::io::{self, Write};

use anyhow::bail;
use rayon::prelude::*;

use sdwan_core::model::TrafficClass;
use sdwan_core::qos::OracleBudget;
use sdwan_core::sim::{QosMode, RunOptions, Simulator, SlaReport, SprMode};
use sdwan_core::Scenario;

use crate::{create_output, Classify, Cli, Failure, Format};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub spr: Vec<SprMode>,
    pub qos: Vec<QosMode>,
    pub sabe: Vec<bool>,
    pub seeds: Vec<u64>,
}

fn dedup<T: PartialEq + Copy>(items: Vec<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len());
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

impl SweepPlan {
    pub fn new(
        scenario: &Scenario,
        spr: Vec<SprMode>,
        qos: Vec<QosMode>,
        sabe: Vec<bool>,
        seeds: Vec<u64>,
    ) -> anyhow::Result<Self> {
        if spr.is_empty() || qos.is_empty() || sabe.is_empty() || seeds.is_empty() {
            bail!("every mode list of a sweep needs at least one entry");
        }
        let groups = scenario.groups.len();
        let links = scenario.links.len();
        if qos.contains(&QosMode::Oracle)
            && (links > OracleBudget::MAX_LINKS || groups > OracleBudget::MAX_GROUPS)
        {
            bail!(
                "oracle mode handles at most {} links and {} groups; scenario has {links} links and {groups} groups",
                OracleBudget::MAX_LINKS,
                OracleBudget::MAX_GROUPS
            );
        }
        Ok(Self {
            spr: dedup(spr),
            qos: dedup(qos),
            sabe: dedup(sabe),
            seeds: dedup(seeds),
        })
    }

    pub fn cells(&self) -> Vec<RunOptions> {
        let mut cells = Vec::new();
        for &spr in &self.spr {
            for &qos in &self.qos {
                for &sabe in &self.sabe {
                    for &seed in &self.seeds {
                        cells.push(RunOptions {
                            spr,
                            qos,
                            sabe,
                            seed: Some(seed),
                        });
                    }
                }
            }
        }
        cells
    }
}

type CellResult = (RunOptions, Result<SlaReport, String>);

pub fn run(cli: &Cli, scenario: &Scenario, plan: &SweepPlan) -> Result<(), Failure> {
    let results: Vec<CellResult> = plan
        .cells()
        .into_par_iter()
        .map(|opts| {
            let report = Simulator::new(scenario, opts)
                .and_then(Simulator::run)
                .map(|o| o.report)
                .map_err(|e| e.to_string());
            (opts, report)
        })
        .collect();

    let mut failed = 0;
    for (opts, r) in &results {
        if let Err(e) = r {
            failed += 1;
            eprintln!(
                "cell {}-{} sabe={} seed={}: {e}",
                opts.spr,
                opts.qos,
                opts.sabe,
                opts.seed.unwrap_or_default()
            );
        }
    }

    write_cells(create_output(cli, "sweep.csv")?, &results).runtime()?;
    let mut out = io::stdout().lock();
    match cli.format {
        Format::Csv => write_cells(&mut out, &results).runtime()?,
        Format::Table => write_table(&mut out, plan, &results).runtime()?,
    }
    if failed > 0 {
        return Err(anyhow::anyhow!("{failed} of {} cells failed", results.len())).runtime();
    }
    Ok(())
}

fn write_cells(mut w: impl Write, results: &[CellResult]) -> io::Result<()> {
    writeln!(w, "spr,qos,sabe,seed,class,loss_sat_pct,delay_sat_pct,mean_loss_pct,mean_delay_s")?;
    for (opts, r) in results {
        let Ok(report) = r else { continue };
        for c in &report.classes {
            writeln!(
                w,
                "{},{},{},{},{},{:.2},{:.2},{:.4},{:.6}",
                opts.spr,
                opts.qos,
                if opts.sabe { "on" } else { "off" },
                opts.seed.unwrap_or_default(),
                c.class.as_str(),
                c.loss_sat_pct,
                c.delay_sat_pct,
                c.mean_loss_pct,
                c.mean_delay_s
            )?;
        }
    }
    w.flush()
}

/// Seed-averaged (loss, delay) satisfaction of one class in one
/// configuration; `None` if any seed failed or never carried the class.
fn averaged(
    results: &[CellResult],
    spr: SprMode,
    qos: QosMode,
    sabe: bool,
    class: TrafficClass,
) -> Option<(f64, f64)> {
    let mut sum = (0.0, 0.0);
    let mut n = 0;
    for (opts, r) in results {
        if opts.spr != spr || opts.qos != qos || opts.sabe != sabe {
            continue;
        }
        let c = r.as_ref().ok()?.class(class)?;
        sum.0 += c.loss_sat_pct;
        sum.1 += c.delay_sat_pct;
        n += 1;
    }
    (n > 0).then(|| (sum.0 / n as f64, sum.1 / n as f64))
}

fn write_table(w: &mut impl Write, plan: &SweepPlan, results: &[CellResult]) -> io::Result<()> {
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    write!(w, "{:<10}", "config")?;
    for class in TrafficClass::ALL {
        write!(w, " | {:^13} | {:^13}", format!("{} loss", class.label()), format!("{} delay", class.label()))?;
    }
    writeln!(w)?;
    writeln!(w, "satisfaction % as `without / with` estimation")?;
    for &spr in &plan.spr {
        for &qos in &plan.qos {
            write!(w, "{:<10}", format!("{}-{}", spr.as_str().to_uppercase(), qos.as_str().to_uppercase()))?;
            for class in TrafficClass::ALL {
                let side = |sabe: bool| {
                    plan.sabe
                        .contains(&sabe)
                        .then(|| averaged(results, spr, qos, sabe, class))
                        .flatten()
                };
                let (off, on) = (side(false), side(true));
                write!(
                    w,
                    " | {:>13} | {:>13}",
                    format!("{} / {}", cell(off.map(|v| v.0)), cell(on.map(|v| v.0))),
                    format!("{} / {}", cell(off.map(|v| v.1)), cell(on.map(|v| v.1)))
                )?;
            }
            writeln!(w)?;
        }
    }
    w.flush()
}
