//! Training of the congestion-aware weight model.
//!
//! Per step, the full pipeline runs on one (instance, task draw) pair:
//! features -> GCNN -> predicted arrivals -> contention estimator ->
//! predicted weights -> decisions -> realized traffic -> empirical delays ->
//! objective (total latency). The gradient estimator differentiates the
//! objective with respect to the route incidence entries while holding the
//! discrete decisions fixed, folds the task columns into a per-link vector,
//! adds a mean-square pull of the predicted weights toward the realized
//! delays, and back-propagates through the estimator and the network.

use log::warn;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::gcnn::{build_features, GcnnError, GcnnGradient, GcnnModel};
use crate::graph::InstanceTopology;
use crate::instance::TaskSet;
use crate::policy::{build_route_matrices, decide, empirical_latency, PolicyError};
use crate::queueing::{estimate_delays_traced, QueueingError};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Gcnn(#[from] GcnnError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Queueing(#[from] QueueingError),
}

/// Shared pipeline parameters: the job-arrival horizon and the number of
/// contention iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub horizon: u32,
    pub iters: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            horizon: 1000,
            iters: 10,
        }
    }
}

/// One training instance with its frozen task draws.
#[derive(Debug, Clone)]
pub struct TrainExample<S: Scalar = f64> {
    pub topology: InstanceTopology<S>,
    pub draws: Vec<TaskSet>,
}

/// Everything the gradient estimator produces for one pair; exposed so the
/// finite-difference checks can probe the intermediate vectors.
#[derive(Debug, Clone)]
pub struct PipelineGradient<S: Scalar = f64> {
    /// Total latency over tasks.
    pub objective: S,
    pub grad: GcnnGradient<S>,
    /// Per-link gradient flowing into the predicted weights.
    pub grad_delta: Vec<S>,
    /// Row sums over task columns of the route-incidence gradient.
    pub link_grad: Vec<S>,
    /// Predicted weights.
    pub delta_hat: Vec<S>,
    /// Realized delays under the induced traffic.
    pub tau_hat: Vec<S>,
    /// Predicted arrivals (network output).
    pub arrivals: Vec<S>,
}

/// Runs the pipeline on one pair and assembles the parameter gradient.
pub fn pipeline_gradient<S: Scalar>(
    model: &GcnnModel<S>,
    topo: &InstanceTopology<S>,
    tasks: &TaskSet,
    pc: &PipelineConfig,
) -> Result<PipelineGradient<S>, TrainError> {
    let links = topo.ext.link_count();
    if tasks.is_empty() {
        let zero_grad = zero_gradient(model);
        return Ok(PipelineGradient {
            objective: S::zero(),
            grad: zero_grad,
            grad_delta: vec![S::zero(); links],
            link_grad: vec![S::zero(); links],
            delta_hat: vec![S::zero(); links],
            tau_hat: vec![S::zero(); links],
            arrivals: vec![S::zero(); links],
        });
    }

    // Forward: predicted arrivals and weights.
    let x0 = build_features(&topo.ext, tasks)?;
    let (arrivals, net_trace) = model.predict(&topo.line, &x0)?;
    let (delta_hat, _, phi_pred) =
        estimate_delays_traced(&topo.conflict, topo.ext.rates(), &arrivals, pc.horizon, pc.iters)?;

    // Decisions and realized traffic under the predicted weights.
    let decision = decide(&topo.ext, &delta_hat, tasks)?;
    let matrices = build_route_matrices(&decision, &topo.ext);
    let rho = matrices.traffic::<S>(tasks);
    let (tau_hat, _, phi_emp) =
        estimate_delays_traced(&topo.conflict, topo.ext.rates(), &rho, pc.horizon, pc.iters)?;
    let latencies = empirical_latency(&tau_hat, &matrices, tasks)?;
    let objective: S = latencies.iter().copied().sum();

    // Which arm of the latency max is active per task (ties to transfer).
    let physical = topo.ext.physical_link_count();
    let mut transfer_active = vec![false; tasks.len()];
    let mut d_tau = vec![S::zero(); links];
    let mut sum_eta_u = S::zero();
    let mut sum_eta_d = S::zero();
    let mut hop_arm_count = 0usize;
    for (j, task) in tasks.iter().enumerate() {
        let mut upload_sum = S::zero();
        let mut download_sum = S::zero();
        for &e in matrices.route(j) {
            upload_sum += tau_hat.values[e];
            if e < physical {
                download_sum += tau_hat.values[e];
            }
        }
        let eta_u = S::from_count(task.upload_packets as usize);
        let eta_d = S::from_count(task.download_packets as usize);
        let transfer = eta_u * upload_sum + eta_d * download_sum;
        let hop_bound = S::from_count(2 * matrices.physical_hops(j) as usize);
        if transfer >= hop_bound {
            transfer_active[j] = true;
            sum_eta_u += eta_u;
            sum_eta_d += eta_d;
            for &e in matrices.route(j) {
                d_tau[e] += eta_u;
                if e < physical {
                    d_tau[e] += eta_d;
                }
            }
        } else {
            hop_arm_count += 1;
        }
    }

    // Traffic path: objective -> tau -> rho, then rho = Gamma * lambda.
    let d_rho = phi_emp.vjp(&topo.conflict, topo.ext.rates(), &d_tau);
    let lambda_total: S = tasks
        .iter()
        .map(|t| S::from_f64_lossy(t.packet_rate()))
        .sum();

    // Row sums over task columns of d objective / d Gamma: the direct
    // appearance of Gamma in the latency (tau * Gamma terms and the hop
    // bound) plus the traffic path.
    let two = S::from_count(2);
    let link_grad: Vec<S> = (0..links)
        .map(|e| {
            let mut g = tau_hat.values[e] * sum_eta_u + d_rho[e] * lambda_total;
            if e < physical {
                g += tau_hat.values[e] * sum_eta_d;
                g += two * S::from_count(hop_arm_count);
            }
            g
        })
        .collect();

    // Per-link gradient on the predicted weights: negated route-incidence
    // row sums plus the mean-square mismatch against the realized delays
    // (normalized by the extended node count, with tau held constant).
    let node_norm = S::from_count(topo.ext.node_count());
    let grad_delta: Vec<S> = (0..links)
        .map(|e| {
            let mse = two * (delta_hat.values[e] - tau_hat.values[e]) / node_norm;
            -link_grad[e] + mse
        })
        .collect();

    // Chain through the estimator and the network.
    let d_arrivals = phi_pred.vjp(&topo.conflict, topo.ext.rates(), &grad_delta);
    let (grad, _) = model.forward_vjp(&topo.line, &net_trace, &d_arrivals);

    Ok(PipelineGradient {
        objective,
        grad,
        grad_delta,
        link_grad,
        delta_hat: delta_hat.values,
        tau_hat: tau_hat.values,
        arrivals,
    })
}

fn zero_gradient<S: Scalar>(model: &GcnnModel<S>) -> GcnnGradient<S> {
    use crate::gcnn::Mat;
    let zero_like = |layer: usize| {
        let t = model.theta0(layer);
        Mat::zeros(t.rows(), t.cols())
    };
    GcnnGradient {
        theta0: (0..model.layer_count()).map(zero_like).collect(),
        theta1: (0..model.layer_count()).map(zero_like).collect(),
    }
}

/// Objective of the current model on one pair (no gradients).
pub fn evaluate_model<S: Scalar>(
    model: &GcnnModel<S>,
    topo: &InstanceTopology<S>,
    tasks: &TaskSet,
    pc: &PipelineConfig,
) -> Result<S, TrainError> {
    if tasks.is_empty() {
        return Ok(S::zero());
    }
    let weights = crate::gcnn::predict_weights(model, topo, tasks, pc.horizon, pc.iters)?;
    let (eval, _) = crate::policy::evaluate_policy(topo, tasks, &weights, pc.horizon, pc.iters)?;
    Ok(eval.objective)
}

/// Outcome of one SGD step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput<S: Scalar = f64> {
    pub objective: S,
    /// Update skipped because the gradient was not finite.
    pub skipped: bool,
}

/// One SGD step on one (instance, task draw) pair. `clip_norm` bounds the
/// gradient's global norm before the update; congested draws otherwise
/// produce steps large enough to saturate the network permanently.
pub fn train_step<S: Scalar>(
    model: &mut GcnnModel<S>,
    topo: &InstanceTopology<S>,
    tasks: &TaskSet,
    alpha: S,
    clip_norm: Option<S>,
    pc: &PipelineConfig,
) -> Result<StepOutput<S>, TrainError> {
    let out = pipeline_gradient(model, topo, tasks, pc)?;
    if !out.grad.is_finite() {
        warn!("skipping update: non-finite gradient");
        return Ok(StepOutput {
            objective: out.objective,
            skipped: true,
        });
    }
    let mut grad = out.grad;
    if let Some(max_norm) = clip_norm {
        grad.clip_global_norm(max_norm);
    }
    model.apply_update(&grad, alpha);
    Ok(StepOutput {
        objective: out.objective,
        skipped: false,
    })
}

/// Training hyperparameters. Defaults: learning rate 1e-6, validation on a
/// held-out 10% of instances evaluated every 100 steps, stop after 10
/// evaluations without a 0.1% relative improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub max_steps: usize,
    pub val_fraction: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    /// Global-norm gradient bound; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub shuffle_seed: u64,
    pub pipeline: PipelineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            max_steps: 20_000,
            val_fraction: 0.1,
            eval_every: 100,
            patience: 10,
            min_rel_improvement: 1e-3,
            grad_clip_norm: Some(1e4),
            shuffle_seed: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// One row of the training log, written at every validation point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    /// Mean objective of the training steps since the previous row.
    pub train_objective: f64,
    pub val_objective: f64,
}

/// Sequential SGD over shuffled (instance, draw) pairs with early stopping
/// on the held-out objective; returns the best-validation model.
pub fn train<S: Scalar>(
    model: GcnnModel<S>,
    examples: &[TrainExample<S>],
    cfg: &TrainConfig,
) -> Result<(GcnnModel<S>, Vec<TrainLogRow>), TrainError> {
    if examples.is_empty() || examples.iter().all(|e| e.draws.is_empty()) {
        return Err(TrainError::EmptyDataset);
    }
    let n_val = ((examples.len() as f64 * cfg.val_fraction).round() as usize)
        .min(examples.len().saturating_sub(1));
    let (train_set, val_set) = examples.split_at(examples.len() - n_val);
    let val_set = if val_set.is_empty() { train_set } else { val_set };

    let mut pairs: Vec<(usize, usize)> = train_set
        .iter()
        .enumerate()
        .flat_map(|(i, ex)| (0..ex.draws.len()).map(move |d| (i, d)))
        .collect();
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let mut model = model;
    let mut best_model = model.clone();
    let mut best_val = validation_objective(&model, val_set, &cfg.pipeline)?;
    let mut log = vec![TrainLogRow {
        step: 0,
        train_objective: f64::NAN,
        val_objective: best_val,
    }];
    let alpha = S::from_f64_lossy(cfg.alpha);
    let clip = cfg.grad_clip_norm.map(S::from_f64_lossy);

    let mut stale = 0usize;
    let mut step = 0usize;
    let mut window_sum = 0.0f64;
    let mut window_len = 0usize;
    let mut epoch = 0u64;
    'outer: while step < cfg.max_steps {
        pairs.shuffle(&mut rng::stream(cfg.shuffle_seed, "train-shuffle", epoch));
        epoch += 1;
        for &(i, d) in &pairs {
            if step >= cfg.max_steps {
                break;
            }
            let ex = &train_set[i];
            let out = train_step(&mut model, &ex.topology, &ex.draws[d], alpha, clip, &cfg.pipeline)?;
            step += 1;
            window_sum += out.objective.to_f64_lossy();
            window_len += 1;
            if out.skipped {
                stale += 1;
                if stale >= cfg.patience {
                    break 'outer;
                }
            }
            if step.is_multiple_of(cfg.eval_every) {
                let val = validation_objective(&model, val_set, &cfg.pipeline)?;
                log.push(TrainLogRow {
                    step,
                    train_objective: window_sum / window_len.max(1) as f64,
                    val_objective: val,
                });
                window_sum = 0.0;
                window_len = 0;
                if val.is_finite() && val < best_val * (1.0 - cfg.min_rel_improvement) {
                    best_val = val;
                    best_model = model.clone();
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok((best_model, log))
}

/// Mean objective over all validation (instance, draw) pairs.
pub fn validation_objective<S: Scalar>(
    model: &GcnnModel<S>,
    examples: &[TrainExample<S>],
    pc: &PipelineConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        for tasks in &ex.draws {
            total += evaluate_model(model, &ex.topology, tasks, pc)?.to_f64_lossy();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcnn::GcnnModel;
    use crate::graph::{line_graph, ConnectivityGraph, ExtendedGraph, NodeRole};
    use crate::instance::Task;

    fn bottleneck_topology(link_rate: f64) -> InstanceTopology<f64> {
        let g = ConnectivityGraph::new(4, &[(0, 2), (1, 2), (2, 3)]).unwrap();
        let conflict = line_graph(&g).unwrap();
        let ext = ExtendedGraph::new(
            g,
            vec![NodeRole::Edge, NodeRole::Edge, NodeRole::Relay, NodeRole::Server],
            &[link_rate, link_rate, link_rate],
            &[8.0, 8.0, 0.0, 120.0],
        )
        .unwrap();
        InstanceTopology::new(ext, conflict)
    }

    fn tasks() -> TaskSet {
        vec![
            Task {
                source: 0,
                servers: vec![3],
                job_rate: 0.075,
                upload_packets: 100,
                download_packets: 1,
            },
            Task {
                source: 1,
                servers: vec![3],
                job_rate: 0.075,
                upload_packets: 100,
                download_packets: 1,
            },
        ]
    }

    #[test]
    fn zero_tasks_zero_gradient() {
        let topo = bottleneck_topology(30.0);
        let mut model = GcnnModel::<f64>::new(1);
        let before = model.clone();
        let out = train_step(&mut model, &topo, &vec![], 1e-6, None, &PipelineConfig::default())
            .unwrap();
        assert_eq!(out.objective, 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn zero_learning_rate_reports_objective_without_update() {
        let topo = bottleneck_topology(30.0);
        let mut model = GcnnModel::<f64>::new(1);
        let before = model.clone();
        let out =
            train_step(&mut model, &topo, &tasks(), 0.0, None, &PipelineConfig::default()).unwrap();
        assert!(out.objective > 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn step_changes_parameters_at_positive_rate() {
        let topo = bottleneck_topology(30.0);
        let mut model = GcnnModel::<f64>::new(1);
        let before = model.clone();
        train_step(&mut model, &topo, &tasks(), 1e-6, None, &PipelineConfig::default()).unwrap();
        assert_ne!(model, before);
    }

    #[test]
    fn smoke_training_objective_trend() {
        // 200 steps on one fixed pair: the 50-step moving average of the
        // objective must never increase. A single task with fast links has a
        // strictly dominant offload action, so the greedy decisions settle
        // instead of cycling.
        let topo = bottleneck_topology(60.0);
        let tasks = vec![tasks().remove(0)];
        let mut model = GcnnModel::<f64>::new(1);
        let pc = PipelineConfig::default();
        let mut objectives = Vec::new();
        for _ in 0..200 {
            let out = train_step(&mut model, &topo, &tasks, 1e-6, Some(1e4), &pc).unwrap();
            objectives.push(out.objective);
        }
        let averages: Vec<f64> = objectives
            .windows(50)
            .map(|w| w.iter().sum::<f64>() / 50.0)
            .collect();
        for pair in averages.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "moving average increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn training_replay_is_deterministic() {
        let topo = bottleneck_topology(30.0);
        let examples = vec![TrainExample {
            topology: topo,
            draws: vec![tasks(), tasks()],
        }];
        let cfg = TrainConfig {
            max_steps: 30,
            eval_every: 10,
            ..TrainConfig::default()
        };
        let (a, log_a) = train(GcnnModel::<f64>::new(2), &examples, &cfg).unwrap();
        let (b, log_b) = train(GcnnModel::<f64>::new(2), &examples, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a.len(), log_b.len());
        for (ra, rb) in log_a.iter().zip(&log_b) {
            assert_eq!(ra.step, rb.step);
            assert_eq!(ra.val_objective, rb.val_objective);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(GcnnModel::<f64>::new(0), &[], &cfg),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn converged_model_is_returned_unchanged() {
        // With a zero learning rate the validation objective never improves,
        // so patience runs out and the input model comes back as the best
        // checkpoint.
        let topo = bottleneck_topology(30.0);
        let examples = vec![TrainExample {
            topology: topo,
            draws: vec![tasks()],
        }];
        let cfg = TrainConfig {
            alpha: 0.0,
            max_steps: 100,
            eval_every: 5,
            patience: 3,
            ..TrainConfig::default()
        };
        let input = GcnnModel::<f64>::new(4);
        let (out, log) = train(input.clone(), &examples, &cfg).unwrap();
        assert_eq!(out, input);
        assert!(log.len() < 20, "early stop fired, {} rows", log.len());
    }
}
