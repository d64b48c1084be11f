//! Metric aggregation: per-size latency and congestion summaries plus the
//! latency-ratio distributions against the baseline policy.

use std::collections::BTreeMap;

use anyhow::{bail, Result};

use crate::records::{EvaluationRecord, PolicyTag};

pub const SUMMARY_HEADER: &str =
    "size,policy,pairs,tasks,mean_latency,congested_tasks,congestion_ratio,ci_low,ci_high";
pub const RATIO_HEADER: &str =
    "size,policy,instances,mean_ratio,min,q1,median,q3,max,whisker_low,whisker_high";
pub const OVERALL_HEADER: &str = "policy,pairs,tasks,mean_latency,congestion_ratio,mean_ratio_vs_baseline";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub size: usize,
    pub policy: PolicyTag,
    pub pairs: usize,
    pub tasks: usize,
    pub mean_latency: f64,
    pub congested_tasks: usize,
    pub congestion_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub size: usize,
    pub policy: PolicyTag,
    pub instances: usize,
    pub mean_ratio: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverallRow {
    pub policy: PolicyTag,
    pub pairs: usize,
    pub tasks: usize,
    pub mean_latency: f64,
    pub congestion_ratio: f64,
    /// Mean over (instance, draw) pairs of the per-pair mean task latency
    /// ratio against the baseline; NaN for the baseline itself.
    pub mean_ratio_vs_baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub ratios: Vec<RatioRow>,
    pub overall: Vec<OverallRow>,
}

/// Normal-approximation confidence interval for a proportion.
fn proportion_ci(p: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Tukey whiskers: outermost data within 1.5 IQR of the quartiles.
fn whiskers(sorted: &[f64], q1: f64, q3: f64) -> (f64, f64) {
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let low = sorted
        .iter()
        .copied()
        .find(|&v| v >= lo_fence)
        .unwrap_or(sorted[0]);
    let high = sorted
        .iter()
        .rev()
        .copied()
        .find(|&v| v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    (low, high)
}

pub fn build_report(records: &[EvaluationRecord]) -> Result<Report> {
    if records.is_empty() {
        bail!("no evaluation records");
    }

    // Per-size per-policy aggregates.
    let mut groups: BTreeMap<(usize, PolicyTag), Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.size, r.policy)).or_default().push(r);
    }
    let summary = groups
        .iter()
        .map(|(&(size, policy), rows)| {
            let tasks: usize = rows.iter().map(|r| r.task_count()).sum();
            let congested: usize = rows.iter().map(|r| r.congested_count()).sum();
            let latency_sum: f64 = rows.iter().map(|r| r.latencies.iter().sum::<f64>()).sum();
            let ratio = if tasks == 0 { 0.0 } else { congested as f64 / tasks as f64 };
            let (ci_low, ci_high) = proportion_ci(ratio, tasks);
            SummaryRow {
                size,
                policy,
                pairs: rows.len(),
                tasks,
                mean_latency: if tasks == 0 { 0.0 } else { latency_sum / tasks as f64 },
                congested_tasks: congested,
                congestion_ratio: ratio,
                ci_low,
                ci_high,
            }
        })
        .collect();

    // Per-pair mean latency ratio vs the baseline on identical task draws.
    let mut baselines: BTreeMap<(usize, usize), &EvaluationRecord> = BTreeMap::new();
    for r in records.iter().filter(|r| r.policy == PolicyTag::Baseline) {
        baselines.insert((r.instance, r.draw), r);
    }
    let mut ratio_groups: BTreeMap<(usize, PolicyTag), Vec<f64>> = BTreeMap::new();
    let mut overall_ratio: BTreeMap<PolicyTag, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.policy == PolicyTag::Baseline || r.task_count() == 0 {
            continue;
        }
        let Some(base) = baselines.get(&(r.instance, r.draw)) else {
            continue;
        };
        if base.task_count() != r.task_count() {
            bail!(
                "task count mismatch between {} and baseline on instance {} draw {}",
                r.policy,
                r.instance,
                r.draw
            );
        }
        let mean_ratio = r
            .latencies
            .iter()
            .zip(&base.latencies)
            .map(|(&u, &b)| u / b)
            .sum::<f64>()
            / r.task_count() as f64;
        ratio_groups
            .entry((r.size, r.policy))
            .or_default()
            .push(mean_ratio);
        overall_ratio.entry(r.policy).or_default().push(mean_ratio);
    }
    let ratios = ratio_groups
        .into_iter()
        .map(|((size, policy), mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
            let q1 = quantile(&values, 0.25);
            let median = quantile(&values, 0.5);
            let q3 = quantile(&values, 0.75);
            let (whisker_low, whisker_high) = whiskers(&values, q1, q3);
            RatioRow {
                size,
                policy,
                instances: values.len(),
                mean_ratio: values.iter().sum::<f64>() / values.len() as f64,
                min: values[0],
                q1,
                median,
                q3,
                max: values[values.len() - 1],
                whisker_low,
                whisker_high,
            }
        })
        .collect();

    // Whole-run aggregates per policy.
    let mut overall = Vec::new();
    for policy in PolicyTag::ALL {
        let rows: Vec<&EvaluationRecord> =
            records.iter().filter(|r| r.policy == policy).collect();
        if rows.is_empty() {
            continue;
        }
        let tasks: usize = rows.iter().map(|r| r.task_count()).sum();
        let congested: usize = rows.iter().map(|r| r.congested_count()).sum();
        let latency_sum: f64 = rows.iter().map(|r| r.latencies.iter().sum::<f64>()).sum();
        let ratio_mean = overall_ratio
            .get(&policy)
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .unwrap_or(f64::NAN);
        overall.push(OverallRow {
            policy,
            pairs: rows.len(),
            tasks,
            mean_latency: if tasks == 0 { 0.0 } else { latency_sum / tasks as f64 },
            congestion_ratio: if tasks == 0 { 0.0 } else { congested as f64 / tasks as f64 },
            mean_ratio_vs_baseline: ratio_mean,
        });
    }

    Ok(Report {
        summary,
        ratios,
        overall,
    })
}

impl Report {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.size,
                r.policy,
                r.pairs,
                r.tasks,
                r.mean_latency,
                r.congested_tasks,
                r.congestion_ratio,
                r.ci_low,
                r.ci_high
            ));
        }
        out
    }

    pub fn ratio_csv(&self) -> String {
        let mut out = String::from(RATIO_HEADER);
        out.push('\n');
        for r in &self.ratios {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.size,
                r.policy,
                r.instances,
                r.mean_ratio,
                r.min,
                r.q1,
                r.median,
                r.q3,
                r.max,
                r.whisker_low,
                r.whisker_high
            ));
        }
        out
    }

    pub fn overall_csv(&self) -> String {
        let mut out = String::from(OVERALL_HEADER);
        out.push('\n');
        for r in &self.overall {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.policy,
                r.pairs,
                r.tasks,
                r.mean_latency,
                r.congestion_ratio,
                r.mean_ratio_vs_baseline
            ));
        }
        out
    }
}
