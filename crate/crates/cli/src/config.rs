//! Experiment configuration: defaults, JSON config files, and flag merging.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Full experiment configuration. Defaults reproduce the reference setup:
/// sizes 20..=110 step 10, 2000 train / 1000 test instances, 10 task draws,
/// horizon 1000, 10 contention iterations, 5 layers, learning rate 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    pub train_count: usize,
    pub test_count: usize,
    pub task_draws: usize,
    pub horizon: u32,
    pub contention_iters: u32,
    pub layers: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub attachment: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sizes: (2..=11).map(|k| k * 10).collect(),
            train_count: 2000,
            test_count: 1000,
            task_draws: 10,
            horizon: 1000,
            contention_iters: 10,
            layers: 5,
            alpha: 1e-6,
            master_seed: 0,
            attachment: 2,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Parses a size list: either `start:end:step` (inclusive) or a comma list.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        anyhow::ensure!(parts.len() == 3, "size range must be start:end:step");
        let start: usize = parts[0].parse().context("size range start")?;
        let end: usize = parts[1].parse().context("size range end")?;
        let step: usize = parts[2].parse().context("size range step")?;
        anyhow::ensure!(step > 0, "size range step must be positive");
        anyhow::ensure!(start <= end, "size range start must not exceed end");
        Ok((start..=end).step_by(step).collect())
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<usize>().context("size list entry"))
            .collect()
    }
}
