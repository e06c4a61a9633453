//! Single-hidden-layer classifier: sigmoid hidden units, softmax outputs,
//! cross-entropy loss.
//!
//! Parameters live in one flat vector laid out as
//! `[hidden weights (H×D, row-major) | hidden biases (H) | output weights (O×H) | output biases (O)]`
//! so the optimizer can treat them as a plain point in R^n.

mod model_io;
mod scg;

pub use model_io::{read_model, write_model, ModelFile};
pub use scg::{
    minimize, scg_train, train_model, Objective, Scg, ScgSettings, StepOutcome, StopReason,
    TrainConfig, TrainReport,
};

use rand::Rng;
use thiserror::Error;

use crate::dataset::{one_hot_encode, LabeledMatrix};

/// Added to probabilities inside the logarithm.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} subset is empty")]
    EmptySubset(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss encountered at epoch {0}")]
    NonFinite(usize),
    #[error("model file line {line}: {reason}")]
    ModelFormat { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Shape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    pub fn n_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> [usize; 4] {
        let a = self.hidden * self.input;
        let b = a + self.hidden;
        let c = b + self.output * self.hidden;
        [a, b, c, c + self.output]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    shape: Shape,
    values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.n_params()],
        }
    }

    pub fn from_flat(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.n_params() {
            return Err(NetError::Shape(format!(
                "{} values for a network with {} parameters",
                values.len(),
                shape.n_params()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.values[..self.shape.offsets()[0]]
    }

    pub fn hidden_biases(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[0]..o[1]]
    }

    pub fn output_weights(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[1]..o[2]]
    }

    pub fn output_biases(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[2]..o[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weights uniform in ±1/√fan_in, biases zero.
pub fn init_params<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> MlpParams {
    let mut p = MlpParams::zeros(shape);
    let o = shape.offsets();
    let a = 1.0 / (shape.input as f64).sqrt();
    for w in &mut p.values[..o[0]] {
        *w = rng.random_range(-a..=a);
    }
    let b = 1.0 / (shape.hidden as f64).sqrt();
    for w in &mut p.values[o[1]..o[2]] {
        *w = rng.random_range(-b..=b);
    }
    p
}

/// How [`init_params_with`] draws starting weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// [`init_params`].
    FanIn,
    /// [`nguyen_widrow_params`].
    #[default]
    NguyenWidrow,
}

impl InitScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitScheme::FanIn => "fan-in",
            InitScheme::NguyenWidrow => "nguyen-widrow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fan-in" => Some(InitScheme::FanIn),
            "nguyen-widrow" => Some(InitScheme::NguyenWidrow),
            _ => None,
        }
    }
}

/// Input half-width over which the logistic sigmoid is far from saturation.
const SIGMOID_ACTIVE_HALF_WIDTH: f64 = 4.0;

/// Nguyen–Widrow hidden layer for inputs scaled to [−1, 1]: each hidden
/// weight row points in a random direction with norm 0.7·H^(1/D) (stretched
/// to the sigmoid's active range), and the biases are spread evenly across
/// that range so every unit starts responsive over a different slice of the
/// input space. Output weights and biases are uniform in [−1, 1].
pub fn nguyen_widrow_params<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> MlpParams {
    let mut p = MlpParams::zeros(shape);
    let o = shape.offsets();
    let (d, h) = (shape.input, shape.hidden);
    let magnitude = SIGMOID_ACTIVE_HALF_WIDTH * 0.7 * (h as f64).powf(1.0 / d as f64);
    let (weights, rest) = p.values.split_at_mut(o[0]);
    let biases = &mut rest[..h];
    for (j, row) in weights.chunks_exact_mut(d).enumerate() {
        for w in row.iter_mut() {
            *w = rng.random_range(-1.0..=1.0);
        }
        let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|w| *w *= magnitude / norm);
        }
        let position = if h == 1 {
            0.0
        } else {
            -1.0 + 2.0 * j as f64 / (h - 1) as f64
        };
        biases[j] = magnitude * position * row[0].signum();
    }
    for w in &mut p.values[o[1]..] {
        *w = rng.random_range(-1.0..=1.0);
    }
    p
}

pub fn init_params_with<R: Rng + ?Sized>(shape: Shape, scheme: InitScheme, rng: &mut R) -> MlpParams {
    match scheme {
        InitScheme::FanIn => init_params(shape, rng),
        InitScheme::NguyenWidrow => nguyen_widrow_params(shape, rng),
    }
}

/// Features with one-hot targets, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    n_features: usize,
    n_outputs: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Batch {
    pub fn new(features: Vec<f64>, n_features: usize, targets: Vec<f64>, n_outputs: usize) -> Result<Self> {
        if n_features == 0 || n_outputs == 0 {
            return Err(NetError::Shape("zero-width batch".into()));
        }
        if features.len() % n_features != 0 || targets.len() % n_outputs != 0 {
            return Err(NetError::Shape("ragged batch".into()));
        }
        if features.len() / n_features != targets.len() / n_outputs {
            return Err(NetError::Shape(format!(
                "{} feature rows vs {} target rows",
                features.len() / n_features,
                targets.len() / n_outputs
            )));
        }
        Ok(Self {
            n_features,
            n_outputs,
            features,
            targets,
        })
    }

    /// One-hot targets for four classes built from zero-based labels.
    pub fn from_labeled(m: &LabeledMatrix) -> Result<Self> {
        let mut targets = Vec::with_capacity(m.len() * 4);
        for &l in &m.labels {
            let t = one_hot_encode(l + 1).map_err(|e| NetError::Shape(e.to_string()))?;
            targets.extend_from_slice(&t);
        }
        Self::new(m.features.clone(), m.n_features, targets, 4)
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.n_outputs
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.n_outputs..(i + 1) * self.n_outputs]
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Batch {
        let n = n.min(self.len());
        Batch {
            n_features: self.n_features,
            n_outputs: self.n_outputs,
            features: self.features[..n * self.n_features].to_vec(),
            targets: self.targets[..n * self.n_outputs].to_vec(),
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if self.n_features != shape.input || self.n_outputs != shape.output {
            return Err(NetError::Shape(format!(
                "batch is {}→{}, network is {}→{}",
                self.n_features, self.n_outputs, shape.input, shape.output
            )));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// In-place softmax with max subtraction.
fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn hidden_into(shape: Shape, w: &[f64], x: &[f64], hidden: &mut [f64]) {
    let o = shape.offsets();
    let (w1, b1) = (&w[..o[0]], &w[o[0]..o[1]]);
    for (h, a) in hidden.iter_mut().enumerate() {
        *a = sigmoid(b1[h] + dot(&w1[h * shape.input..(h + 1) * shape.input], x));
    }
}

fn output_into(shape: Shape, w: &[f64], hidden: &[f64], out: &mut [f64]) {
    let o = shape.offsets();
    let (w2, b2) = (&w[o[1]..o[2]], &w[o[2]..o[3]]);
    for (k, z) in out.iter_mut().enumerate() {
        *z = b2[k] + dot(&w2[k * shape.hidden..(k + 1) * shape.hidden], hidden);
    }
    softmax(out);
}

/// Class probabilities for one input row.
pub fn forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
    let shape = params.shape;
    assert_eq!(x.len(), shape.input, "input width");
    let mut hidden = vec![0.0; shape.hidden];
    let mut out = vec![0.0; shape.output];
    hidden_into(shape, &params.values, x, &mut hidden);
    output_into(shape, &params.values, &hidden, &mut out);
    out
}

/// Mean clipped cross-entropy over the batch.
pub(crate) fn loss_flat(shape: Shape, w: &[f64], batch: &Batch) -> f64 {
    let mut hidden = vec![0.0; shape.hidden];
    let mut out = vec![0.0; shape.output];
    let mut total = 0.0;
    for i in 0..batch.len() {
        hidden_into(shape, w, batch.row(i), &mut hidden);
        output_into(shape, w, &hidden, &mut out);
        total -= batch
            .target(i)
            .iter()
            .zip(&out)
            .map(|(t, p)| if *t != 0.0 { t * (p + PROB_CLIP).ln() } else { 0.0 })
            .sum::<f64>();
    }
    total / batch.len() as f64
}

/// Loss and its exact gradient (of the clipped loss) written into `grad`.
pub(crate) fn loss_grad_flat(shape: Shape, w: &[f64], batch: &Batch, grad: &mut [f64]) -> f64 {
    let o = shape.offsets();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let w2 = &w[o[1]..o[2]];
    let mut hidden = vec![0.0; shape.hidden];
    let mut out = vec![0.0; shape.output];
    let mut d_out = vec![0.0; shape.output];
    let mut d_hidden = vec![0.0; shape.hidden];
    let mut total = 0.0;
    for i in 0..n {
        let x = batch.row(i);
        let t = batch.target(i);
        hidden_into(shape, w, x, &mut hidden);
        output_into(shape, w, &hidden, &mut out);

        // d/dz_k of −Σ_c t_c ln(p_c + ε) = p_k·Σ_c q_c − q_k, q_c = t_c p_c/(p_c + ε)
        let mut q_sum = 0.0;
        for k in 0..shape.output {
            if t[k] != 0.0 {
                let p = out[k];
                total -= t[k] * (p + PROB_CLIP).ln();
                d_out[k] = t[k] * p / (p + PROB_CLIP);
                q_sum += d_out[k];
            } else {
                d_out[k] = 0.0;
            }
        }
        for k in 0..shape.output {
            d_out[k] = (out[k] * q_sum - d_out[k]) * inv_n;
        }

        {
            let (g2, gb2) = grad[o[1]..o[3]].split_at_mut(shape.output * shape.hidden);
            for k in 0..shape.output {
                let dk = d_out[k];
                gb2[k] += dk;
                for (g, a) in g2[k * shape.hidden..(k + 1) * shape.hidden].iter_mut().zip(&hidden) {
                    *g += dk * a;
                }
            }
        }
        for h in 0..shape.hidden {
            let back: f64 = (0..shape.output)
                .map(|k| d_out[k] * w2[k * shape.hidden + h])
                .sum();
            d_hidden[h] = back * hidden[h] * (1.0 - hidden[h]);
        }
        let (g1, rest) = grad.split_at_mut(o[0]);
        for h in 0..shape.hidden {
            let dh = d_hidden[h];
            rest[h] += dh;
            if dh != 0.0 {
                for (g, xv) in g1[h * shape.input..(h + 1) * shape.input].iter_mut().zip(x) {
                    *g += dh * xv;
                }
            }
        }
    }
    total * inv_n
}

/// Mean cross-entropy of `params` on `batch`.
pub fn loss(params: &MlpParams, batch: &Batch) -> Result<f64> {
    batch.check(params.shape)?;
    if batch.is_empty() {
        return Err(NetError::EmptySubset("batch"));
    }
    Ok(loss_flat(params.shape, &params.values, batch))
}

/// Full-batch loss and backpropagated gradient laid out like the parameters.
pub fn loss_and_gradient(params: &MlpParams, batch: &Batch) -> Result<(f64, MlpParams)> {
    batch.check(params.shape)?;
    if batch.is_empty() {
        return Err(NetError::EmptySubset("batch"));
    }
    let mut g = MlpParams::zeros(params.shape);
    let l = loss_grad_flat(params.shape, &params.values, batch, &mut g.values);
    Ok((l, g))
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compare `analytic` against central differences of the loss, coordinate
/// by coordinate.
pub fn finite_diff_check_against(
    params: &MlpParams,
    batch: &Batch,
    h: f64,
    analytic: &[f64],
) -> Result<GradCheck> {
    if !(h > 0.0) {
        return Err(NetError::Config(format!("step must be positive, got {h}")));
    }
    batch.check(params.shape)?;
    if analytic.len() != params.values.len() {
        return Err(NetError::Shape("gradient length".into()));
    }
    let mut w = params.values.clone();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + h;
        let up = loss_flat(params.shape, &w, batch);
        w[i] = orig - h;
        let down = loss_flat(params.shape, &w, batch);
        w[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs() + 1e-12);
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

/// Maximum relative error of [`loss_and_gradient`] against central differences.
pub fn finite_diff_check(params: &MlpParams, batch: &Batch, h: f64) -> Result<GradCheck> {
    let (_, g) = loss_and_gradient(params, batch)?;
    finite_diff_check_against(params, batch, h, &g.values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

/// Index of the largest probability, lowest index on ties.
pub fn predict(params: &MlpParams, x: &[f64]) -> usize {
    let p = forward(params, x);
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate_model(params: &MlpParams, subset: &LabeledMatrix) -> Result<Evaluation> {
    if subset.is_empty() {
        return Err(NetError::EmptySubset("evaluation"));
    }
    if subset.n_features != params.shape.input {
        return Err(NetError::Shape(format!(
            "subset has {} features, network expects {}",
            subset.n_features, params.shape.input
        )));
    }
    let k = params.shape.output;
    let mut confusion = vec![vec![0usize; k]; k];
    for i in 0..subset.len() {
        let truth = subset.labels[i];
        if truth >= k {
            return Err(NetError::Shape(format!("label {truth} outside {k} classes")));
        }
        confusion[truth][predict(params, subset.row(i))] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / subset.len() as f64,
        confusion,
    })
}
