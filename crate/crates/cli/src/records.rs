//! Evaluation records and their CSV codec.
//!
//! One row per (instance, task draw, policy). Per-task vectors are stored as
//! `;`-joined fields so the file stays line-per-record and diffable.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const RESULTS_HEADER: &str =
    "instance,size,draw,policy,n_tasks,objective,congestion_ratio,latencies,congested";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyTag {
    Baseline,
    Local,
    Gnn,
}

impl PolicyTag {
    pub const ALL: [PolicyTag; 3] = [PolicyTag::Baseline, PolicyTag::Local, PolicyTag::Gnn];
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyTag::Baseline => "baseline",
            PolicyTag::Local => "local",
            PolicyTag::Gnn => "gnn",
        };
        f.write_str(s)
    }
}

impl FromStr for PolicyTag {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(PolicyTag::Baseline),
            "local" => Ok(PolicyTag::Local),
            "gnn" => Ok(PolicyTag::Gnn),
            other => bail!("unknown policy {other:?}"),
        }
    }
}

/// Outcome of one policy on one (instance, task draw) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub instance: usize,
    pub size: usize,
    pub draw: usize,
    pub policy: PolicyTag,
    pub latencies: Vec<f64>,
    pub congested: Vec<bool>,
    pub objective: f64,
}

impl EvaluationRecord {
    pub fn task_count(&self) -> usize {
        self.latencies.len()
    }

    pub fn congested_count(&self) -> usize {
        self.congested.iter().filter(|&&c| c).count()
    }

    pub fn congestion_ratio(&self) -> f64 {
        if self.congested.is_empty() {
            0.0
        } else {
            self.congested_count() as f64 / self.congested.len() as f64
        }
    }

    pub fn to_csv_row(&self) -> String {
        let latencies = self
            .latencies
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let congested = self
            .congested
            .iter()
            .map(|&c| if c { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.instance,
            self.size,
            self.draw,
            self.policy,
            self.task_count(),
            self.objective,
            self.congestion_ratio(),
            latencies,
            congested
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 9 {
            bail!("expected 9 fields, got {} in {row:?}", fields.len());
        }
        let parse_list = |s: &str| -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(';')
                .map(|v| v.parse::<f64>().context("latency entry"))
                .collect()
        };
        let latencies = parse_list(fields[7])?;
        let congested: Vec<bool> = if fields[8].is_empty() {
            Vec::new()
        } else {
            fields[8]
                .split(';')
                .map(|v| match v {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => bail!("bad congestion flag {other:?}"),
                })
                .collect::<Result<_>>()?
        };
        if latencies.len() != congested.len() {
            bail!("latency/congestion length mismatch in {row:?}");
        }
        Ok(Self {
            instance: fields[0].parse().context("instance id")?,
            size: fields[1].parse().context("size")?,
            draw: fields[2].parse().context("draw")?,
            policy: fields[3].parse()?,
            objective: fields[5].parse().context("objective")?,
            latencies,
            congested,
        })
    }
}

pub fn write_results_csv(path: &std::path::Path, records: &[EvaluationRecord]) -> Result<()> {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for record in records {
        out.push_str(&record.to_csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_results_csv(path: &std::path::Path) -> Result<Vec<EvaluationRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RESULTS_HEADER => {}
        Some(other) => bail!("unexpected results header {other:?}"),
        None => bail!("empty results file"),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(EvaluationRecord::from_csv_row)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let record = EvaluationRecord {
            instance: 3,
            size: 30,
            draw: 1,
            policy: PolicyTag::Gnn,
            latencies: vec![12.5, 1001.25, 4.0],
            congested: vec![false, true, false],
            objective: 1017.75,
        };
        let row = record.to_csv_row();
        let back = EvaluationRecord::from_csv_row(&row).unwrap();
        assert_eq!(record, back);
        assert!((back.congestion_ratio() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_draw_roundtrip() {
        let record = EvaluationRecord {
            instance: 0,
            size: 20,
            draw: 0,
            policy: PolicyTag::Local,
            latencies: vec![],
            congested: vec![],
            objective: 0.0,
        };
        let back = EvaluationRecord::from_csv_row(&record.to_csv_row()).unwrap();
        assert_eq!(record, back);
        assert_eq!(back.congestion_ratio(), 0.0);
    }
}
