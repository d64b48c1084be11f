//! Graph convolutional network over the extended line graph.
//!
//! The network maps per-link input features `[q, w, lambda, r]` (virtual
//! flag, server-virtual flag, task packet rate, link rate) to a predicted
//! packet arrival rate per extended link. Layers combine a dense term with a
//! degree-normalized aggregation over line-graph neighborhoods; both the
//! forward pass and its reverse-mode gradients are written out by hand so
//! training needs no autodiff framework.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ExtendedGraph, ExtendedLineGraph, InstanceTopology, NodeId};
use crate::instance::Task;
use crate::queueing::{estimate_delays, DelayVector, QueueingError};
use crate::rng;
use crate::scalar::Scalar;

pub const INPUT_FEATURES: usize = 4;
pub const HIDDEN_WIDTH: usize = 32;
pub const LAYER_COUNT: usize = 5;
const MODEL_FORMAT_VERSION: u32 = 1;
const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum GcnnError {
    #[error("model needs at least one layer")]
    NoLayers,
    #[error("activation count {got} does not match layer count {want}")]
    ActivationCount { got: usize, want: usize },
    #[error("feature matrix is {got} rows for {want} line-graph vertices")]
    FeatureRows { got: usize, want: usize },
    #[error("feature width {got} does not match input dimension {want}")]
    FeatureWidth { got: usize, want: usize },
    #[error("model output width is {0}, expected 1")]
    OutputWidth(usize),
    #[error("task source {0} is not a compute node")]
    TaskOnNonEdgeNode(NodeId),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
    #[error("model file layer {layer} has {got} weights, expected {want}")]
    WeightCount { layer: usize, got: usize, want: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Queueing(#[from] QueueingError),
}

/// Dense row-major matrix; just enough linear algebra for the GCNN.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S: Scalar = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `self * other`
    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == S::zero() {
                    continue;
                }
                let or = k * other.cols;
                let oo = i * other.cols;
                for j in 0..other.cols {
                    out.data[oo + j] += a * other.data[or + j];
                }
            }
        }
        out
    }

    /// `self^T * other`
    pub fn tmatmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.rows, other.rows, "tmatmul shape");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.get(k, i);
                if a == S::zero() {
                    continue;
                }
                let or = k * other.cols;
                let oo = i * other.cols;
                for j in 0..other.cols {
                    out.data[oo + j] += a * other.data[or + j];
                }
            }
        }
        out
    }

    /// `self * other^T`
    pub fn matmul_t(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.cols, "matmul_t shape");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = S::zero();
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(j, k);
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    pub fn add(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(S) -> S) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Element-wise layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Slope 0.01 on the negative side.
    LeakyRelu,
    /// `ln(1 + e^z)`; keeps predicted arrival rates nonnegative and smooth.
    Softplus,
    Identity,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::LeakyRelu => {
                if z >= S::zero() {
                    z
                } else {
                    z * S::from_f64_lossy(LEAKY_SLOPE)
                }
            }
            Activation::Softplus => {
                // Stable softplus: z + ln(1 + e^-z) for positive z.
                if z > S::zero() {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::LeakyRelu => {
                if z >= S::zero() {
                    S::one()
                } else {
                    S::from_f64_lossy(LEAKY_SLOPE)
                }
            }
            Activation::Softplus => {
                // sigmoid(z), computed from the side that cannot overflow
                if z > S::zero() {
                    S::one() / (S::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (S::one() + e)
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

/// Which neighborhood term the layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// The vertex's own features scaled by the degree-normalized neighbor
    /// sum: bracket_i = X_i * (1 - sum_e 1/sqrt(d_e d_i)).
    ScaledSelf,
    /// Degree-normalized difference from the neighbors' features:
    /// bracket_i = X_i - sum_e X_e / sqrt(d_e d_i).
    NeighborDiff,
}

impl Aggregation {
    /// Applies the (self-adjoint) bracket operator row-wise.
    fn apply<S: Scalar>(self, lg: &ExtendedLineGraph, x: &Mat<S>) -> Mat<S> {
        let n = lg.vertex_count();
        assert_eq!(x.rows(), n);
        let mut out = Mat::zeros(n, x.cols());
        match self {
            Aggregation::ScaledSelf => {
                for i in 0..n {
                    let di = S::from_count(lg.degree(i));
                    let mut coeff = S::one();
                    for &e in lg.neighbors(i) {
                        let de = S::from_count(lg.degree(e));
                        coeff -= S::one() / (de * di).sqrt();
                    }
                    for j in 0..x.cols() {
                        out.set(i, j, coeff * x.get(i, j));
                    }
                }
            }
            Aggregation::NeighborDiff => {
                for i in 0..n {
                    let di = S::from_count(lg.degree(i));
                    for j in 0..x.cols() {
                        out.set(i, j, x.get(i, j));
                    }
                    for &e in lg.neighbors(i) {
                        let de = S::from_count(lg.degree(e));
                        let scale = S::one() / (de * di).sqrt();
                        for j in 0..x.cols() {
                            let v = out.get(i, j) - scale * x.get(e, j);
                            out.set(i, j, v);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Per-link input features: virtual-link flag, server-virtual flag, task
/// packet arrival rate on source virtual links, extended link rate.
pub type FeatureMatrix<S> = Mat<S>;

pub fn build_features<S: Scalar>(
    ext: &ExtendedGraph<S>,
    tasks: &[Task],
) -> Result<FeatureMatrix<S>, GcnnError> {
    let total = ext.link_count();
    let mut m = Mat::zeros(total, INPUT_FEATURES);
    let mut lambda = vec![S::zero(); total];
    for task in tasks {
        let link = ext
            .virtual_link(task.source)
            .ok_or(GcnnError::TaskOnNonEdgeNode(task.source))?;
        lambda[link] += S::from_f64_lossy(task.packet_rate());
    }
    for e in 0..total {
        let is_virtual = ext.is_virtual_link(e);
        let is_server_virtual = ext
            .owner_of(e)
            .map(|v| ext.role(v) == crate::graph::NodeRole::Server)
            .unwrap_or(false);
        m.set(e, 0, if is_virtual { S::one() } else { S::zero() });
        m.set(e, 1, if is_server_virtual { S::one() } else { S::zero() });
        m.set(e, 2, lambda[e]);
        m.set(e, 3, ext.rates()[e]);
    }
    Ok(m)
}

/// Saved intermediate state of a forward pass, enough to replay it backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S: Scalar = f64> {
    /// Post-activation outputs X^0..X^L.
    x: Vec<Mat<S>>,
    /// Pre-activations Z^1..Z^L.
    z: Vec<Mat<S>>,
    /// Bracket terms B(X^0)..B(X^{L-1}).
    bracket: Vec<Mat<S>>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn output(&self) -> &Mat<S> {
        self.x.last().expect("nonempty trace")
    }

    /// Smallest pre-activation magnitude across layers; finite-difference
    /// checks use it to stay clear of rectifier kinks.
    pub fn min_abs_preactivation(&self) -> S {
        self.z
            .iter()
            .flat_map(|m| m.data().iter())
            .fold(S::infinity(), |acc, &v| acc.min(v.abs()))
    }
}

/// Gradients with respect to all layer parameters.
#[derive(Debug, Clone)]
pub struct GcnnGradient<S: Scalar = f64> {
    pub theta0: Vec<Mat<S>>,
    pub theta1: Vec<Mat<S>>,
}

impl<S: Scalar> GcnnGradient<S> {
    pub fn is_finite(&self) -> bool {
        self.theta0.iter().all(Mat::is_finite) && self.theta1.iter().all(Mat::is_finite)
    }

    pub fn global_norm(&self) -> S {
        self.theta0
            .iter()
            .chain(&self.theta1)
            .flat_map(|m| m.data().iter())
            .map(|&v| v * v)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales the gradient so its global norm does not exceed `max_norm`.
    /// Congested instances produce delay gradients several orders of
    /// magnitude above usual; without a bound a single step can saturate
    /// every activation and kill the network.
    pub fn clip_global_norm(&mut self, max_norm: S) {
        let norm = self.global_norm();
        if norm > max_norm && norm > S::zero() {
            let scale = max_norm / norm;
            for m in self.theta0.iter_mut().chain(self.theta1.iter_mut()) {
                for v in m.data.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
}

/// The trainable model: per layer a dense transform and an aggregation
/// transform, plus activation tags.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnnModel<S: Scalar = f64> {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    aggregation: Aggregation,
    init_seed: u64,
    theta0: Vec<Mat<S>>,
    theta1: Vec<Mat<S>>,
}

impl<S: Scalar> GcnnModel<S> {
    /// Default configuration: dims `[4, 32, 32, 32, 32, 1]`, leaky-rectifier
    /// hidden layers, softplus output, scaled-self aggregation.
    pub fn new(seed: u64) -> Self {
        let mut dims = vec![INPUT_FEATURES];
        dims.extend(std::iter::repeat_n(HIDDEN_WIDTH, LAYER_COUNT - 1));
        dims.push(1);
        let mut activations = vec![Activation::LeakyRelu; LAYER_COUNT - 1];
        activations.push(Activation::Softplus);
        Self::with_config(dims, activations, Aggregation::ScaledSelf, seed)
            .expect("default configuration is valid")
    }

    /// Arbitrary layer configuration with uniform fan-scaled initialization
    /// drawn from the model's own stream.
    pub fn with_config(
        dims: Vec<usize>,
        activations: Vec<Activation>,
        aggregation: Aggregation,
        seed: u64,
    ) -> Result<Self, GcnnError> {
        if dims.len() < 2 {
            return Err(GcnnError::NoLayers);
        }
        if activations.len() != dims.len() - 1 {
            return Err(GcnnError::ActivationCount {
                got: activations.len(),
                want: dims.len() - 1,
            });
        }
        let mut stream = rng::stream(seed, "gcnn-init", 0);
        let mut theta0 = Vec::new();
        let mut theta1 = Vec::new();
        for l in 1..dims.len() {
            let (fan_in, fan_out) = (dims[l - 1], dims[l]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut sample = |rows: usize, cols: usize| {
                let mut m = Mat::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols {
                        m.set(i, j, S::from_f64_lossy(stream.gen_range(-bound..bound)));
                    }
                }
                m
            };
            theta0.push(sample(fan_in, fan_out));
            theta1.push(sample(fan_in, fan_out));
        }
        Ok(Self {
            dims,
            activations,
            aggregation,
            init_seed: seed,
            theta0,
            theta1,
        })
    }

    /// All-zero parameters; useful as a fixed point for tests.
    pub fn zeroed(
        dims: Vec<usize>,
        activations: Vec<Activation>,
        aggregation: Aggregation,
    ) -> Result<Self, GcnnError> {
        let mut model = Self::with_config(dims, activations, aggregation, 0)?;
        for m in model.theta0.iter_mut().chain(model.theta1.iter_mut()) {
            *m = Mat::zeros(m.rows(), m.cols());
        }
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn theta0(&self, layer: usize) -> &Mat<S> {
        &self.theta0[layer]
    }

    pub fn theta1(&self, layer: usize) -> &Mat<S> {
        &self.theta1[layer]
    }

    /// Replaces one layer's parameters (test configurations).
    pub fn set_layer(&mut self, layer: usize, theta0: Mat<S>, theta1: Mat<S>) {
        assert_eq!((theta0.rows(), theta0.cols()), (self.dims[layer], self.dims[layer + 1]));
        assert_eq!((theta1.rows(), theta1.cols()), (self.dims[layer], self.dims[layer + 1]));
        self.theta0[layer] = theta0;
        self.theta1[layer] = theta1;
    }

    pub fn param_count(&self) -> usize {
        self.theta0
            .iter()
            .chain(&self.theta1)
            .map(|m| m.rows() * m.cols())
            .sum()
    }

    /// Runs the layers over the line graph, recording everything the
    /// backward pass needs.
    pub fn forward(
        &self,
        lg: &ExtendedLineGraph,
        x0: &Mat<S>,
    ) -> Result<ForwardTrace<S>, GcnnError> {
        if x0.rows() != lg.vertex_count() {
            return Err(GcnnError::FeatureRows {
                got: x0.rows(),
                want: lg.vertex_count(),
            });
        }
        if x0.cols() != self.dims[0] {
            return Err(GcnnError::FeatureWidth {
                got: x0.cols(),
                want: self.dims[0],
            });
        }
        let mut xs = vec![x0.clone()];
        let mut zs = Vec::with_capacity(self.layer_count());
        let mut brackets = Vec::with_capacity(self.layer_count());
        for l in 0..self.layer_count() {
            let x = xs.last().expect("at least the input");
            let bracket = self.aggregation.apply(lg, x);
            let z = x.matmul(&self.theta0[l]).add(&bracket.matmul(&self.theta1[l]));
            let act = self.activations[l];
            xs.push(z.map(|v| act.apply(v)));
            zs.push(z);
            brackets.push(bracket);
        }
        Ok(ForwardTrace {
            x: xs,
            z: zs,
            bracket: brackets,
        })
    }

    /// Predicted per-link arrival rates (requires scalar output width).
    pub fn predict(
        &self,
        lg: &ExtendedLineGraph,
        x0: &Mat<S>,
    ) -> Result<(Vec<S>, ForwardTrace<S>), GcnnError> {
        if *self.dims.last().expect("dims nonempty") != 1 {
            return Err(GcnnError::OutputWidth(*self.dims.last().unwrap()));
        }
        let trace = self.forward(lg, x0)?;
        let out = trace.output().column(0);
        Ok((out, trace))
    }

    /// Reverse-mode gradients of `sum(upstream . output)` with respect to
    /// every parameter matrix and the input features.
    pub fn forward_vjp_mat(
        &self,
        lg: &ExtendedLineGraph,
        trace: &ForwardTrace<S>,
        upstream: &Mat<S>,
    ) -> (GcnnGradient<S>, Mat<S>) {
        let layers = self.layer_count();
        let mut d_theta0 = Vec::with_capacity(layers);
        let mut d_theta1 = Vec::with_capacity(layers);
        let mut dx = upstream.clone();
        for l in (0..layers).rev() {
            let act = self.activations[l];
            let z = &trace.z[l];
            let mut dz = dx;
            for i in 0..dz.rows() {
                for j in 0..dz.cols() {
                    let g = dz.get(i, j) * act.derivative(z.get(i, j));
                    dz.set(i, j, g);
                }
            }
            d_theta0.push(trace.x[l].tmatmul(&dz));
            d_theta1.push(trace.bracket[l].tmatmul(&dz));
            // dX = dZ T0^T + B(dZ T1^T); the bracket operator is self-adjoint.
            let direct = dz.matmul_t(&self.theta0[l]);
            let via_bracket = self.aggregation.apply(lg, &dz.matmul_t(&self.theta1[l]));
            dx = direct.add(&via_bracket);
        }
        d_theta0.reverse();
        d_theta1.reverse();
        (
            GcnnGradient {
                theta0: d_theta0,
                theta1: d_theta1,
            },
            dx,
        )
    }

    /// [`Self::forward_vjp_mat`] with a per-vertex upstream on the scalar
    /// output column.
    pub fn forward_vjp(
        &self,
        lg: &ExtendedLineGraph,
        trace: &ForwardTrace<S>,
        upstream: &[S],
    ) -> (GcnnGradient<S>, Mat<S>) {
        let mut up = Mat::zeros(upstream.len(), 1);
        for (i, &v) in upstream.iter().enumerate() {
            up.set(i, 0, v);
        }
        self.forward_vjp_mat(lg, trace, &up)
    }

    /// SGD update: theta -= alpha * gradient.
    pub fn apply_update(&mut self, grad: &GcnnGradient<S>, alpha: S) {
        for (theta, g) in self
            .theta0
            .iter_mut()
            .zip(&grad.theta0)
            .chain(self.theta1.iter_mut().zip(&grad.theta1))
        {
            for (t, &dg) in theta.data.iter_mut().zip(g.data()) {
                *t -= alpha * dg;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), GcnnError> {
        let file = ModelFile::from_model(self);
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &file)?;
        use std::io::Write;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GcnnError> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.into_model()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dims: Vec<usize>,
    activations: Vec<Activation>,
    aggregation: Aggregation,
    init_seed: u64,
    /// Row-major layer matrices.
    theta0: Vec<Vec<f64>>,
    theta1: Vec<Vec<f64>>,
}

impl ModelFile {
    fn from_model<S: Scalar>(model: &GcnnModel<S>) -> Self {
        let dump = |mats: &[Mat<S>]| {
            mats.iter()
                .map(|m| m.data().iter().map(|v| v.to_f64_lossy()).collect())
                .collect()
        };
        Self {
            format_version: MODEL_FORMAT_VERSION,
            dims: model.dims.clone(),
            activations: model.activations.clone(),
            aggregation: model.aggregation,
            init_seed: model.init_seed,
            theta0: dump(&model.theta0),
            theta1: dump(&model.theta1),
        }
    }

    fn into_model<S: Scalar>(self) -> Result<GcnnModel<S>, GcnnError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(GcnnError::FormatVersion(self.format_version));
        }
        let mut model = GcnnModel::zeroed(self.dims, self.activations, self.aggregation)?;
        model.init_seed = self.init_seed;
        let load = |mats: &mut Vec<Mat<S>>, src: &[Vec<f64>]| -> Result<(), GcnnError> {
            for (layer, (m, values)) in mats.iter_mut().zip(src).enumerate() {
                if values.len() != m.rows() * m.cols() {
                    return Err(GcnnError::WeightCount {
                        layer,
                        got: values.len(),
                        want: m.rows() * m.cols(),
                    });
                }
                m.data = values.iter().map(|&v| S::from_f64_lossy(v)).collect();
            }
            Ok(())
        };
        if self.theta0.len() != model.theta0.len() || self.theta1.len() != model.theta1.len() {
            return Err(GcnnError::NoLayers);
        }
        load(&mut model.theta0, &self.theta0)?;
        load(&mut model.theta1, &self.theta1)?;
        Ok(model)
    }
}

/// Congestion-aware link weights: predict arrivals with the model, then run
/// the contention estimator on them.
pub fn predict_weights<S: Scalar>(
    model: &GcnnModel<S>,
    topo: &InstanceTopology<S>,
    tasks: &[Task],
    horizon: u32,
    iters: u32,
) -> Result<DelayVector<S>, GcnnError> {
    let x0 = build_features(&topo.ext, tasks)?;
    let (arrivals, _) = model.predict(&topo.line, &x0)?;
    let (delays, _) = estimate_delays(&topo.conflict, topo.ext.rates(), &arrivals, horizon, iters)?;
    Ok(delays)
}
