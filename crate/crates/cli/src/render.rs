//! Plain-text tables for the terminal.

use std::io::{self, Write};

use sdwan_core::model::NodeRole;
use sdwan_core::sim::{RunOptions, SlaReport};
use sdwan_core::Scenario;

pub fn scenario_summary(out: &mut impl Write, s: &Scenario) -> io::Result<()> {
    let hubs = s.nodes.iter().filter(|n| n.role == NodeRole::Hub).count();
    writeln!(out, "scenario ok")?;
    writeln!(out, "  nodes        {} ({hubs} hubs, {} spokes)", s.nodes.len(), s.nodes.len() - hubs)?;
    writeln!(out, "  networks     {}", s.networks.len())?;
    writeln!(out, "  ports        {}", s.ports.len())?;
    writeln!(out, "  links        {}", s.links.len())?;
    writeln!(out, "  flow groups  {}", s.groups.len())?;
    let sim = &s.settings.sim;
    writeln!(
        out,
        "  horizon      {} s, tick {} s, monitor {} s, qos {} s, spr {} s",
        sim.duration_s, sim.tick_s, sim.monitor_period_s, sim.qos_period_s, sim.spr_period_s
    )?;
    writeln!(out, "  theta        {:.3}", s.settings.sabe.theta)
}

pub fn report_table(out: &mut impl Write, options: &RunOptions, report: &SlaReport) -> io::Result<()> {
    writeln!(
        out,
        "{}-{} (estimation {})",
        options.spr.as_str().to_uppercase(),
        options.qos.as_str().to_uppercase(),
        if options.sabe { "on" } else { "off" }
    )?;
    writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>12} {:>14}",
        "class", "loss sat%", "delay sat%", "mean loss%", "mean delay ms"
    )?;
    for c in &report.classes {
        writeln!(
            out,
            "{:<10} {:>10.2} {:>10.2} {:>12.4} {:>14.2}",
            c.class.label(),
            c.loss_sat_pct,
            c.delay_sat_pct,
            c.mean_loss_pct,
            1000.0 * c.mean_delay_s
        )?;
    }
    Ok(())
}
