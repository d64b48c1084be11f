//! The four pipeline commands: generate, train, eval, report.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;

use offloadnet::gcnn::{self, Activation, Aggregation, GcnnModel};
use offloadnet::instance::{
    read_jsonl, write_jsonl, DatasetManifest, InstanceRecord, TaskSet,
};
use offloadnet::policy::{
    baseline_weights, evaluate_decision, evaluate_policy, local_decision, PolicyEvaluation,
};
use offloadnet::train::{train, PipelineConfig, TrainConfig, TrainExample, TrainLogRow};
use offloadnet::{rng, InstanceTopology};

use crate::config::ExperimentConfig;
use crate::records::{write_results_csv, EvaluationRecord, PolicyTag};
use crate::report::build_report;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "training_log.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RATIO_FILE: &str = "latency_ratio_by_size.csv";
pub const OVERALL_FILE: &str = "overall.csv";

/// Generates the train and test splits plus the manifest.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<()> {
    anyhow::ensure!(!cfg.sizes.is_empty(), "size list is empty");
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    for (split, count, file) in [
        ("train", cfg.train_count, TRAIN_FILE),
        ("test", cfg.test_count, TEST_FILE),
    ] {
        let records: Vec<InstanceRecord> = (0..count as u64)
            .into_par_iter()
            .map(|index| {
                let size = cfg.sizes[(index as usize) % cfg.sizes.len()];
                InstanceRecord::generate(
                    size,
                    cfg.attachment,
                    cfg.master_seed,
                    split,
                    index,
                    cfg.task_draws,
                )
                .with_context(|| format!("generating {split} instance {index}"))
            })
            .collect::<Result<_>>()?;
        let path = cfg.out_dir.join(file);
        write_jsonl(&path, &records)?;
        info!("wrote {} instances to {}", records.len(), path.display());
    }

    let manifest = DatasetManifest {
        sizes: cfg.sizes.clone(),
        train_count: cfg.train_count,
        test_count: cfg.test_count,
        task_draws: cfg.task_draws,
        master_seed: cfg.master_seed,
    };
    let manifest_path = cfg.out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(())
}

/// Builds a model with the configured depth: input 4, hidden width 32,
/// scalar output, leaky-rectifier hidden layers, softplus output.
pub fn build_model(cfg: &ExperimentConfig, aggregation: Aggregation, seed: u64) -> Result<GcnnModel> {
    anyhow::ensure!(cfg.layers >= 1, "need at least one layer");
    let mut dims = vec![gcnn::INPUT_FEATURES];
    dims.extend(std::iter::repeat_n(gcnn::HIDDEN_WIDTH, cfg.layers - 1));
    dims.push(1);
    let mut activations = vec![Activation::LeakyRelu; cfg.layers - 1];
    activations.push(Activation::Softplus);
    Ok(GcnnModel::with_config(dims, activations, aggregation, seed)?)
}

pub struct TrainOptions {
    pub data_dir: PathBuf,
    pub max_steps: usize,
    pub init_model: Option<PathBuf>,
    pub aggregation: Aggregation,
    /// Global-norm gradient bound; 0 disables clipping.
    pub clip_norm: f64,
}

fn load_examples(path: &Path) -> Result<Vec<TrainExample<f64>>> {
    let records = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    records
        .into_iter()
        .map(|record| {
            let (instance, draws) = record.into_instance()?;
            let topology = instance.topology::<f64>()?;
            Ok(TrainExample { topology, draws })
        })
        .collect()
}

/// Trains the model on the train split; writes the model and the log.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<()> {
    let train_path = opts.data_dir.join(TRAIN_FILE);
    if !train_path.exists() {
        bail!("missing dataset file {}", train_path.display());
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let examples = load_examples(&train_path)?;
    info!("loaded {} training instances", examples.len());

    let model = match &opts.init_model {
        Some(path) => GcnnModel::load(path)
            .with_context(|| format!("loading initial model {}", path.display()))?,
        None => build_model(cfg, opts.aggregation, rng::derive_key(cfg.master_seed, "model-init", 0))?,
    };

    let train_cfg = TrainConfig {
        alpha: cfg.alpha,
        max_steps: opts.max_steps,
        grad_clip_norm: (opts.clip_norm > 0.0).then_some(opts.clip_norm),
        shuffle_seed: cfg.master_seed,
        pipeline: PipelineConfig {
            horizon: cfg.horizon,
            iters: cfg.contention_iters,
        },
        ..TrainConfig::default()
    };
    let (trained, log) = train(model, &examples, &train_cfg)?;

    let model_path = cfg.out_dir.join(MODEL_FILE);
    trained.save(&model_path)?;
    info!("wrote model to {}", model_path.display());
    write_train_log(&cfg.out_dir.join(TRAIN_LOG_FILE), &log)?;
    Ok(())
}

fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("step,train_objective,val_objective\n");
    for row in log {
        let train_obj = if row.train_objective.is_nan() {
            String::new()
        } else {
            row.train_objective.to_string()
        };
        out.push_str(&format!("{},{},{}\n", row.step, train_obj, row.val_objective));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub struct EvalOptions {
    pub data_dir: PathBuf,
    pub model: Option<PathBuf>,
    pub policies: Vec<PolicyTag>,
}

/// Evaluates the requested policies on every (instance, task draw) pair of
/// the test split; identical draws across policies for paired comparison.
pub fn cmd_eval(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<()> {
    let test_path = opts.data_dir.join(TEST_FILE);
    if !test_path.exists() {
        bail!("missing dataset file {}", test_path.display());
    }
    let model = match (&opts.model, opts.policies.contains(&PolicyTag::Gnn)) {
        (Some(path), _) => Some(
            GcnnModel::load(path).with_context(|| format!("loading model {}", path.display()))?,
        ),
        (None, true) => bail!("the gnn policy needs --model"),
        (None, false) => None,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let records = read_jsonl(&test_path)?;
    info!("evaluating {} instances", records.len());

    let pc = PipelineConfig {
        horizon: cfg.horizon,
        iters: cfg.contention_iters,
    };
    let rows: Vec<Vec<EvaluationRecord>> = records
        .into_par_iter()
        .enumerate()
        .map(|(index, record)| evaluate_instance(index, record, model.as_ref(), &opts.policies, &pc))
        .collect::<Result<_>>()?;
    let rows: Vec<EvaluationRecord> = rows.into_iter().flatten().collect();

    let results_path = cfg.out_dir.join(RESULTS_FILE);
    write_results_csv(&results_path, &rows)?;
    info!("wrote {} rows to {}", rows.len(), results_path.display());
    Ok(())
}

pub fn evaluate_instance(
    index: usize,
    record: InstanceRecord,
    model: Option<&GcnnModel>,
    policies: &[PolicyTag],
    pc: &PipelineConfig,
) -> Result<Vec<EvaluationRecord>> {
    let (instance, draws) = record.into_instance()?;
    let size = instance.node_count();
    let topology: InstanceTopology<f64> = instance.topology()?;
    let baseline = baseline_weights(&topology.ext)?;
    let mut rows = Vec::with_capacity(draws.len() * policies.len());
    for (draw, tasks) in draws.iter().enumerate() {
        for &policy in policies {
            let eval = evaluate_one(&topology, tasks, policy, model, &baseline, pc)?;
            rows.push(EvaluationRecord {
                instance: index,
                size,
                draw,
                policy,
                latencies: eval.latencies,
                congested: eval.congested,
                objective: eval.objective,
            });
        }
    }
    Ok(rows)
}

fn evaluate_one(
    topology: &InstanceTopology<f64>,
    tasks: &TaskSet,
    policy: PolicyTag,
    model: Option<&GcnnModel>,
    baseline: &offloadnet::DelayVector64,
    pc: &PipelineConfig,
) -> Result<PolicyEvaluation<f64>> {
    let eval = match policy {
        PolicyTag::Baseline => evaluate_policy(topology, tasks, baseline, pc.horizon, pc.iters)?.0,
        PolicyTag::Local => {
            let decision = local_decision(&topology.ext, tasks)?;
            evaluate_decision(topology, tasks, &decision, pc.horizon, pc.iters)?
        }
        PolicyTag::Gnn => {
            let model = model.context("gnn policy without a model")?;
            let weights = gcnn::predict_weights(model, topology, tasks, pc.horizon, pc.iters)?;
            evaluate_policy(topology, tasks, &weights, pc.horizon, pc.iters)?.0
        }
    };
    Ok(eval)
}

/// Aggregates a results file into the summary, ratio, and overall CSVs.
pub fn cmd_report(cfg: &ExperimentConfig, results: &Path) -> Result<()> {
    let records = crate::records::read_results_csv(results)?;
    if records.is_empty() {
        bail!("results file {} has no rows", results.display());
    }
    let report = build_report(&records)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(SUMMARY_FILE), report.summary_csv())?;
    fs::write(cfg.out_dir.join(RATIO_FILE), report.ratio_csv())?;
    fs::write(cfg.out_dir.join(OVERALL_FILE), report.overall_csv())?;
    for row in &report.overall {
        info!(
            "{}: mean latency {:.2}, congestion {:.4}",
            row.policy, row.mean_latency, row.congestion_ratio
        );
    }
    Ok(())
}
