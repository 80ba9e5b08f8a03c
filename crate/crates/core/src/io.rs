//! CSV formats for traces, estimates, policies and reports.
//!
//! Links and groups are referred to by their scenario names. Readers check
//! the header for required columns, ignore unknown ones, and report errors
//! with the line number of the offending row.

use std::io::{Read, Write};
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};
use thiserror::Error;

use crate::model::{GroupId, GroupSplit, LinkId, LinkMeasurement, QosPolicy, Scenario, SprPolicy};
use crate::qos::QosDemand;
use crate::sim::{EstimateRecord, IntervalRecord, MeasurementRecord, SlaReport};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: {problem}")]
    Row { line: u64, problem: String },
}

/// One row of a measurement trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub measurement: LinkMeasurement,
    /// Actual cross-traffic, when the trace comes from the simulator.
    pub truth_cross_traffic_mbps: Option<f64>,
}

struct Columns {
    index: Vec<Option<usize>>,
}

impl Columns {
    fn find(headers: &StringRecord, required: &[&'static str], optional: &[&'static str]) -> Result<Self, IoError> {
        let pos = |name: &str| headers.iter().position(|h| h.trim() == name);
        let mut index = Vec::with_capacity(required.len() + optional.len());
        for &name in required {
            index.push(Some(pos(name).ok_or(IoError::MissingColumn(name))?));
        }
        index.extend(optional.iter().map(|name| pos(name)));
        Ok(Self { index })
    }
}

struct Row<'r> {
    record: &'r StringRecord,
    line: u64,
}

impl Row<'_> {
    fn error(&self, problem: impl Into<String>) -> IoError {
        IoError::Row {
            line: self.line,
            problem: problem.into(),
        }
    }

    fn raw(&self, cols: &Columns, i: usize) -> Option<&str> {
        cols.index[i]
            .and_then(|c| self.record.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    fn parse<T: FromStr>(&self, cols: &Columns, i: usize, name: &str) -> Result<T, IoError> {
        let raw = self.raw(cols, i).ok_or_else(|| self.error(format!("empty `{name}`")))?;
        raw.parse()
            .map_err(|_| self.error(format!("cannot parse `{name}` value `{raw}`")))
    }

    fn number(&self, cols: &Columns, i: usize, name: &str) -> Result<f64, IoError> {
        let v: f64 = self.parse(cols, i, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.error(format!("`{name}` must be finite")))
        }
    }

    fn link(&self, cols: &Columns, i: usize, scenario: &Scenario) -> Result<LinkId, IoError> {
        let name = self.raw(cols, i).unwrap_or_default();
        scenario
            .link_by_name(name)
            .ok_or_else(|| self.error(format!("unknown link `{name}`")))
    }

    fn group(&self, cols: &Columns, i: usize, scenario: &Scenario) -> Result<GroupId, IoError> {
        let name = self.raw(cols, i).unwrap_or_default();
        scenario
            .group_by_name(name)
            .ok_or_else(|| self.error(format!("unknown group `{name}`")))
    }
}

/// Runs `parse_row` over every data row after checking the header.
fn read_rows<R: Read, T>(
    reader: R,
    required: &[&'static str],
    optional: &[&'static str],
    mut parse_row: impl FnMut(&Row<'_>, &Columns) -> Result<T, IoError>,
) -> Result<Vec<T>, IoError> {
    let mut rdr = ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = Columns::find(rdr.headers()?, required, optional)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        out.push(parse_row(&Row { record: &record, line }, &cols)?);
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `link,interval_end_s,delay_s,loss,jitter_s,throughput_mbps[,truth_xt_mbps]`
pub fn read_trace<R: Read>(reader: R, scenario: &Scenario) -> Result<Vec<TraceRow>, IoError> {
    read_rows(
        reader,
        &["link", "interval_end_s", "delay_s", "loss", "jitter_s", "throughput_mbps"],
        &["truth_xt_mbps"],
        |row, cols| {
            let loss = row.number(cols, 3, "loss")?;
            if !(0.0..=1.0).contains(&loss) {
                return Err(row.error("`loss` must lie in [0, 1]"));
            }
            let delay = row.number(cols, 2, "delay_s")?;
            let throughput = row.number(cols, 5, "throughput_mbps")?;
            if delay < 0.0 || throughput < 0.0 {
                return Err(row.error("delay and throughput must be >= 0"));
            }
            let truth = match row.raw(cols, 6) {
                Some(_) => Some(row.number(cols, 6, "truth_xt_mbps")?),
                None => None,
            };
            Ok(TraceRow {
                measurement: LinkMeasurement {
                    link: row.link(cols, 0, scenario)?,
                    interval_end: row.number(cols, 1, "interval_end_s")?,
                    delay,
                    loss,
                    jitter: row.number(cols, 4, "jitter_s")?,
                    throughput,
                },
                truth_cross_traffic_mbps: truth,
            })
        },
    )
}

pub fn write_trace<W: Write>(writer: W, scenario: &Scenario, rows: &[MeasurementRecord]) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["link", "interval_end_s", "delay_s", "loss", "jitter_s", "throughput_mbps", "truth_xt_mbps"])?;
    for r in rows {
        let m = &r.measurement;
        w.write_record([
            scenario.link(m.link).name.clone(),
            m.interval_end.to_string(),
            m.delay.to_string(),
            m.loss.to_string(),
            m.jitter.to_string(),
            m.throughput.to_string(),
            r.truth_cross_traffic_mbps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `link,interval_end_s,rho,cross_traffic_mbps,safe_abw_mbps,flags`
pub fn write_estimates<W: Write>(writer: W, scenario: &Scenario, rows: &[EstimateRecord]) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["link", "interval_end_s", "rho", "cross_traffic_mbps", "safe_abw_mbps", "flags"])?;
    for r in rows {
        let e = &r.estimate;
        w.write_record([
            scenario.link(e.link).name.clone(),
            r.interval_end.to_string(),
            e.rho.to_string(),
            e.cross_traffic_mbps.to_string(),
            e.safe_abw_mbps.to_string(),
            e.flags.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `class,loss_sat_pct,delay_sat_pct,mean_loss_pct,mean_delay_s`
pub fn write_report<W: Write>(writer: W, report: &SlaReport) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["class", "loss_sat_pct", "delay_sat_pct", "mean_loss_pct", "mean_delay_s"])?;
    for c in &report.classes {
        w.write_record([
            c.class.as_str().to_string(),
            format!("{:.2}", c.loss_sat_pct),
            format!("{:.2}", c.delay_sat_pct),
            format!("{:.4}", c.mean_loss_pct),
            format!("{:.6}", c.mean_delay_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `group,link,split`
pub fn write_spr_policy<W: Write>(writer: W, scenario: &Scenario, policy: &SprPolicy) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["group", "link", "split"])?;
    for (g, split) in scenario.groups.iter().zip(&policy.groups) {
        for (&l, x) in split.links.iter().zip(&split.ratios) {
            w.write_record([g.name.clone(), scenario.link(l).name.clone(), x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a split policy. Groups without rows keep the capacity-proportional
/// split; listed groups get zero on the allowed links they omit.
pub fn read_spr_policy<R: Read>(reader: R, scenario: &Scenario) -> Result<SprPolicy, IoError> {
    let rows = read_rows(reader, &["group", "link", "split"], &[], |row, cols| {
        let group = row.group(cols, 0, scenario)?;
        let link = row.link(cols, 1, scenario)?;
        let x = row.number(cols, 2, "split")?;
        let allowed = &scenario.group(group).allowed_links;
        if !allowed.contains(&link) {
            return Err(row.error(format!("link is not allowed for group `{}`", scenario.group(group).name)));
        }
        if x < 0.0 {
            return Err(row.error("`split` must be >= 0"));
        }
        Ok((row.line, group, link, x))
    })?;
    let mut policy = crate::spr::proportional_policy(scenario);
    let mut seen = vec![false; scenario.groups.len()];
    for &(_, group, link, x) in &rows {
        let split: &mut GroupSplit = &mut policy.groups[group.0];
        if !seen[group.0] {
            split.ratios.iter_mut().for_each(|r| *r = 0.0);
            seen[group.0] = true;
        }
        let pos = split.links.iter().position(|&l| l == link).expect("checked above");
        split.ratios[pos] = x;
    }
    for (g, split) in policy.groups.iter().enumerate() {
        if seen[g] && (split.total() - 1.0).abs() > 1e-6 {
            let line = rows.iter().rev().find(|r| r.1.0 == g).map_or(0, |r| r.0);
            return Err(IoError::Row {
                line,
                problem: format!("splits of group `{}` sum to {}", scenario.groups[g].name, split.total()),
            });
        }
    }
    Ok(policy)
}

/// `group,link,rate_mbps,wfq_weight,shaper_mbps`
pub fn write_qos_policy<W: Write>(writer: W, scenario: &Scenario, policy: &QosPolicy) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["group", "link", "rate_mbps", "wfq_weight", "shaper_mbps"])?;
    for r in &policy.rules {
        w.write_record([
            scenario.group(r.group).name.clone(),
            scenario.link(r.link).name.clone(),
            r.rate_mbps.to_string(),
            fmt_opt(r.wfq_weight),
            fmt_opt(r.shaper_mbps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `group,demand_mbps`; groups without a row get zero.
pub fn read_demands<R: Read>(reader: R, scenario: &Scenario) -> Result<Vec<f64>, IoError> {
    let rows = read_rows(reader, &["group", "demand_mbps"], &[], |row, cols| {
        let group = row.group(cols, 0, scenario)?;
        let d = row.number(cols, 1, "demand_mbps")?;
        if d < 0.0 {
            return Err(row.error("`demand_mbps` must be >= 0"));
        }
        Ok((group, d))
    })?;
    let mut demands = vec![0.0; scenario.groups.len()];
    for (g, d) in rows {
        demands[g.0] = d;
    }
    Ok(demands)
}

pub fn write_demands<W: Write>(writer: W, scenario: &Scenario, demands: &[f64]) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["group", "demand_mbps"])?;
    for (g, d) in scenario.groups.iter().zip(demands) {
        w.write_record([g.name.clone(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `group,link,demand_mbps[,delay_s,loss]`: the per-pair demands of a rate
/// allocation. Missing quality columns mean the pair currently meets its
/// SLA; priority and SLA come from the scenario.
pub fn read_qos_demands<R: Read>(reader: R, scenario: &Scenario) -> Result<Vec<QosDemand>, IoError> {
    read_rows(reader, &["group", "link", "demand_mbps"], &["delay_s", "loss"], |row, cols| {
        let group = row.group(cols, 0, scenario)?;
        let link = row.link(cols, 1, scenario)?;
        let g = scenario.group(group);
        if !g.allowed_links.contains(&link) {
            return Err(row.error(format!("link is not allowed for group `{}`", g.name)));
        }
        let demand = row.number(cols, 2, "demand_mbps")?;
        if demand < 0.0 {
            return Err(row.error("`demand_mbps` must be >= 0"));
        }
        let optional = |i: usize, name: &str| match row.raw(cols, i) {
            Some(_) => row.number(cols, i, name).map(Some),
            None => Ok(None),
        };
        let loss = optional(4, "loss")?.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&loss) {
            return Err(row.error("`loss` must lie in [0, 1]"));
        }
        Ok(QosDemand {
            group,
            link,
            priority: g.priority(),
            demand_mbps: demand,
            sla: g.sla,
            delay: optional(3, "delay_s")?.unwrap_or(0.0),
            loss,
        })
    })
}

/// `interval_end_s,group,class,offered_mbps,loss,delay_s,loss_ok,delay_ok`
pub fn write_intervals<W: Write>(writer: W, scenario: &Scenario, rows: &[IntervalRecord]) -> Result<(), IoError> {
    let mut w = Writer::from_writer(writer);
    w.write_record(["interval_end_s", "group", "class", "offered_mbps", "loss", "delay_s", "loss_ok", "delay_ok"])?;
    for r in rows {
        w.write_record([
            r.interval_end.to_string(),
            scenario.group(r.group).name.clone(),
            r.class.as_str().to_string(),
            r.offered_mbps.to_string(),
            r.loss.to_string(),
            r.delay.to_string(),
            r.loss_ok.to_string(),
            r.delay_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demands_round_trip() {
        let s = Scenario::reference();
        let demands: Vec<f64> = (0..s.groups.len()).map(|i| i as f64 * 0.5).collect();
        let mut buf = Vec::new();
        write_demands(&mut buf, &s, &demands).unwrap();
        assert_eq!(read_demands(buf.as_slice(), &s).unwrap(), demands);
    }

    #[test]
    fn missing_column_is_reported() {
        let s = Scenario::reference();
        let err = read_demands("group,rate\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, IoError::MissingColumn("demand_mbps")));
    }

    #[test]
    fn bad_rows_carry_line_numbers() {
        let s = Scenario::reference();
        let g = &s.groups[0].name;
        let text = format!("group,demand_mbps\n{g},1.0\n{g},abc\n");
        match read_demands(text.as_bytes(), &s).unwrap_err() {
            IoError::Row { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let text = "group,demand_mbps\nnope,1.0\n";
        assert!(read_demands(text.as_bytes(), &s).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn split_policy_round_trip() {
        let s = Scenario::reference();
        let p = crate::spr::proportional_policy(&s);
        let mut buf = Vec::new();
        write_spr_policy(&mut buf, &s, &p).unwrap();
        let back = read_spr_policy(buf.as_slice(), &s).unwrap();
        for (a, b) in p.groups.iter().zip(&back.groups) {
            for (x, y) in a.ratios.iter().zip(&b.ratios) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
