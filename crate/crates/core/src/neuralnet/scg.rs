//! Scaled conjugate gradient (Møller, 1993).
//!
//! A conjugate-direction batch method without line searches. Curvature along
//! the search direction comes from a finite difference of gradients, and a
//! Levenberg–Marquardt term λ keeps the local quadratic model positive
//! definite. λ is adapted from the ratio between actual and predicted
//! reduction.

use super::{
    init_params_with, loss_flat, loss_grad_flat, Batch, InitScheme, MlpParams, NetError, Result,
    Shape,
};
use crate::rng::{self, Purpose};

/// A differentiable function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, w: &[f64]) -> f64;
    /// Loss at `w`, with the gradient written into `grad`.
    fn loss_grad(&self, w: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScgSettings {
    /// Base step for the curvature finite difference.
    pub sigma: f64,
    pub lambda_init: f64,
    /// Restart with steepest descent every this many accepted steps;
    /// `None` means the parameter count.
    pub restart_every: Option<usize>,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for ScgSettings {
    fn default() -> Self {
        Self {
            sigma: 5e-5,
            lambda_init: 5e-7,
            restart_every: None,
            grad_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// The step lowered (or kept) the loss and was taken.
    Accepted { loss: f64 },
    /// The quadratic model was too optimistic; λ was raised and `w` kept.
    Rejected,
    /// Gradient norm under tolerance; nothing was done.
    Converged,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimizer state. Call [`Scg::step`] once per iteration.
#[derive(Debug, Clone)]
pub struct Scg {
    settings: ScgSettings,
    restart_every: usize,
    w: Vec<f64>,
    loss: f64,
    grad: Vec<f64>,
    /// Search direction.
    p: Vec<f64>,
    lambda: f64,
    lambda_bar: f64,
    /// Curvature along `p`, carried over after a rejected step.
    delta: f64,
    success: bool,
    accepted: usize,
    // scratch
    w_trial: Vec<f64>,
    g_trial: Vec<f64>,
}

impl Scg {
    pub fn new<O: Objective + ?Sized>(obj: &O, w0: Vec<f64>, settings: ScgSettings) -> Self {
        let n = obj.dim();
        assert_eq!(w0.len(), n, "starting point dimension");
        let mut grad = vec![0.0; n];
        let loss = obj.loss_grad(&w0, &mut grad);
        let p = grad.iter().map(|g| -g).collect();
        Self {
            settings,
            restart_every: settings.restart_every.unwrap_or(n).max(1),
            w: w0,
            loss,
            grad,
            p,
            lambda: settings.lambda_init,
            lambda_bar: 0.0,
            delta: 0.0,
            success: true,
            accepted: 0,
            w_trial: vec![0.0; n],
            g_trial: vec![0.0; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.w
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn gradient_norm(&self) -> f64 {
        dot(&self.grad, &self.grad).sqrt()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn restart(&mut self) {
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p = -g;
        }
        self.success = true;
    }

    pub fn step<O: Objective + ?Sized>(&mut self, obj: &O) -> StepOutcome {
        if self.gradient_norm() < self.settings.grad_tol {
            return StepOutcome::Converged;
        }
        // r = −grad, so μ = pᵀr
        let mut mu = -dot(&self.p, &self.grad);
        if !(mu > 0.0) {
            // lost descent; fall back to steepest descent
            self.restart();
            mu = dot(&self.grad, &self.grad);
        }
        let p_norm2 = dot(&self.p, &self.p);

        if self.success {
            let sigma_k = self.settings.sigma / p_norm2.sqrt();
            for ((t, w), p) in self.w_trial.iter_mut().zip(&self.w).zip(&self.p) {
                *t = w + sigma_k * p;
            }
            obj.loss_grad(&self.w_trial, &mut self.g_trial);
            // δ = pᵀs, s = (E'(w + σp) − E'(w))/σ
            self.delta = self
                .p
                .iter()
                .zip(self.g_trial.iter().zip(&self.grad))
                .map(|(p, (g1, g0))| p * (g1 - g0))
                .sum::<f64>()
                / sigma_k;
        }

        // scale, then force positive definiteness
        self.delta += (self.lambda - self.lambda_bar) * p_norm2;
        if self.delta <= 0.0 {
            self.lambda_bar = 2.0 * (self.lambda - self.delta / p_norm2);
            self.delta = -self.delta + self.lambda * p_norm2;
            self.lambda = self.lambda_bar;
        }

        let alpha = mu / self.delta;
        for ((t, w), p) in self.w_trial.iter_mut().zip(&self.w).zip(&self.p) {
            *t = w + alpha * p;
        }
        let new_loss = obj.loss_grad(&self.w_trial, &mut self.g_trial);
        // comparison of actual against predicted reduction
        let comparison = if new_loss.is_finite() {
            2.0 * self.delta * (self.loss - new_loss) / (mu * mu)
        } else {
            f64::NEG_INFINITY
        };

        let outcome = if comparison >= 0.0 && new_loss <= self.loss {
            let r_old_dot_r_new = dot(&self.grad, &self.g_trial);
            std::mem::swap(&mut self.w, &mut self.w_trial);
            std::mem::swap(&mut self.grad, &mut self.g_trial);
            self.loss = new_loss;
            self.lambda_bar = 0.0;
            self.success = true;
            self.accepted += 1;
            if self.accepted % self.restart_every == 0 {
                self.restart();
            } else {
                let r_new_norm2 = dot(&self.grad, &self.grad);
                let beta = (r_new_norm2 - r_old_dot_r_new) / mu;
                for (p, g) in self.p.iter_mut().zip(&self.grad) {
                    *p = -g + beta * *p;
                }
            }
            if comparison >= 0.75 {
                self.lambda *= 0.25;
            }
            StepOutcome::Accepted { loss: new_loss }
        } else {
            self.lambda_bar = self.lambda;
            self.success = false;
            StepOutcome::Rejected
        };

        if comparison < 0.25 {
            let bump = if comparison.is_finite() {
                self.delta * (1.0 - comparison) / p_norm2
            } else {
                // non-finite trial loss: grow λ hard
                self.delta * 4.0 / p_norm2
            };
            self.lambda += bump;
        }
        outcome
    }
}

/// Run SCG for at most `max_iter` iterations or until the gradient vanishes.
/// Returns the final point and the number of iterations used.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    w0: Vec<f64>,
    settings: ScgSettings,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let mut scg = Scg::new(obj, w0, settings);
    let mut used = 0;
    while used < max_iter {
        if scg.step(obj) == StepOutcome::Converged {
            break;
        }
        used += 1;
    }
    (scg.into_weights(), used)
}

struct NetObjective<'a> {
    shape: Shape,
    batch: &'a Batch,
}

impl Objective for NetObjective<'_> {
    fn dim(&self) -> usize {
        self.shape.n_params()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        loss_flat(self.shape, w, self.batch)
    }

    fn loss_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        loss_grad_flat(self.shape, w, self.batch, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a new best validation loss before stopping.
    pub validation_fail_limit: usize,
    pub scg_sigma: f64,
    pub scg_lambda_init: f64,
    /// Starting weights drawn by [`train_model`].
    pub init: InitScheme,
    /// Seeds weight initialization in [`train_model`].
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 5,
            max_epochs: 1000,
            validation_fail_limit: 6,
            scg_sigma: 5e-5,
            scg_lambda_init: 5e-7,
            init: InitScheme::NguyenWidrow,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.max_epochs == 0 || self.validation_fail_limit == 0 {
            return Err(NetError::Config(
                "hidden width, max epochs and fail limit must be at least 1".into(),
            ));
        }
        if !(self.scg_sigma > 0.0 && self.scg_sigma.is_finite())
            || !(self.scg_lambda_init > 0.0 && self.scg_lambda_init.is_finite())
        {
            return Err(NetError::Config("SCG sigma and lambda must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ValidationStall,
    MaxEpochs,
    GradientVanished,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::ValidationStall => "validation_stall",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::GradientVanished => "gradient_vanished",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "validation_stall" => Some(StopReason::ValidationStall),
            "max_epochs" => Some(StopReason::MaxEpochs),
            "gradient_vanished" => Some(StopReason::GradientVanished),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub initial_train_loss: f64,
    pub initial_validation_loss: f64,
    /// Training loss after each epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss after each epoch.
    pub validation_loss: Vec<f64>,
    /// Whether each epoch's SCG step was taken.
    pub accepted: Vec<bool>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were returned; 0 means the starting point.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Full-batch SCG on `train` with early stopping on `validation`. Returns the
/// parameters from the epoch with the lowest validation loss.
pub fn scg_train(
    params: MlpParams,
    train: &Batch,
    validation: &Batch,
    config: &TrainConfig,
) -> Result<(MlpParams, TrainReport)> {
    config.validate()?;
    let shape = params.shape();
    train.check(shape)?;
    validation.check(shape)?;
    if train.is_empty() {
        return Err(NetError::EmptySubset("training"));
    }
    if validation.is_empty() {
        return Err(NetError::EmptySubset("validation"));
    }
    let obj = NetObjective {
        shape,
        batch: train,
    };
    let settings = ScgSettings {
        sigma: config.scg_sigma,
        lambda_init: config.scg_lambda_init,
        restart_every: None,
        grad_tol: 1e-12,
    };
    let mut scg = Scg::new(&obj, params.into_flat(), settings);
    let initial_validation_loss = loss_flat(shape, scg.weights(), validation);
    let mut report = TrainReport {
        epochs_run: 0,
        initial_train_loss: scg.loss(),
        initial_validation_loss,
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        accepted: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: 0,
        best_validation_loss: initial_validation_loss,
    };
    if !report.initial_train_loss.is_finite() || !initial_validation_loss.is_finite() {
        return Err(NetError::NonFinite(0));
    }
    let mut best_w = scg.weights().to_vec();
    let mut current_val = initial_validation_loss;
    let mut fails = 0;

    for epoch in 1..=config.max_epochs {
        let outcome = scg.step(&obj);
        let accepted = match outcome {
            StepOutcome::Converged => {
                report.stop_reason = StopReason::GradientVanished;
                break;
            }
            StepOutcome::Accepted { .. } => true,
            StepOutcome::Rejected => false,
        };
        if accepted {
            current_val = loss_flat(shape, scg.weights(), validation);
            if !current_val.is_finite() {
                return Err(NetError::NonFinite(epoch));
            }
        }
        report.epochs_run = epoch;
        report.train_loss.push(scg.loss());
        report.validation_loss.push(current_val);
        report.accepted.push(accepted);

        if current_val < report.best_validation_loss {
            report.best_validation_loss = current_val;
            report.best_epoch = epoch;
            best_w.copy_from_slice(scg.weights());
            fails = 0;
        } else if current_val > report.best_validation_loss {
            // a rejected step leaves the loss unchanged and is not a failure
            fails += 1;
            if fails >= config.validation_fail_limit {
                report.stop_reason = StopReason::ValidationStall;
                break;
            }
        }
    }
    Ok((MlpParams::from_flat(shape, best_w)?, report))
}

/// Initialize from `config.seed` and train.
pub fn train_model(
    train: &Batch,
    validation: &Batch,
    config: &TrainConfig,
) -> Result<(MlpParams, TrainReport)> {
    config.validate()?;
    let shape = Shape::new(train.n_features(), config.hidden, 4);
    let mut r = rng::stream(config.seed, Purpose::Init, 0, 0);
    let params = init_params_with(shape, config.init, &mut r);
    scg_train(params, train, validation, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::one_hot_encode;
    use crate::neuralnet::loss;

    /// ½ wᵀAw − bᵀw
    struct Quadratic {
        a: [[f64; 2]; 2],
        b: [f64; 2],
    }

    impl Quadratic {
        fn minimizer(&self) -> [f64; 2] {
            let [[a, b], [c, d]] = self.a;
            let det = a * d - b * c;
            [
                (d * self.b[0] - b * self.b[1]) / det,
                (-c * self.b[0] + a * self.b[1]) / det,
            ]
        }
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            2
        }

        fn loss(&self, w: &[f64]) -> f64 {
            let aw = [
                self.a[0][0] * w[0] + self.a[0][1] * w[1],
                self.a[1][0] * w[0] + self.a[1][1] * w[1],
            ];
            0.5 * (w[0] * aw[0] + w[1] * aw[1]) - self.b[0] * w[0] - self.b[1] * w[1]
        }

        fn loss_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
            g[0] = self.a[0][0] * w[0] + self.a[0][1] * w[1] - self.b[0];
            g[1] = self.a[1][0] * w[0] + self.a[1][1] * w[1] - self.b[1];
            self.loss(w)
        }
    }

    #[test]
    fn quadratic_converges_within_dim_plus_one_steps() {
        let q = Quadratic {
            a: [[3.0, 1.0], [1.0, 2.0]],
            b: [1.0, -2.0],
        };
        let star = q.minimizer();
        let dist = |w: &[f64]| ((w[0] - star[0]).powi(2) + (w[1] - star[1]).powi(2)).sqrt();
        // λ biases each step by O(λ/eigenvalue), so the W + 1 bound needs a small λ₀
        let tight = ScgSettings {
            lambda_init: 1e-9,
            ..ScgSettings::default()
        };
        let (w, _) = minimize(&q, vec![4.0, -3.0], tight, 3);
        assert!(dist(&w) < 1e-8, "distance {:e} at {w:?}, minimizer {star:?}", dist(&w));
        // default λ₀ = 5e-7 needs one extra step
        let (w, _) = minimize(&q, vec![4.0, -3.0], ScgSettings::default(), 4);
        assert!(dist(&w) < 1e-8, "distance {:e} at {w:?}, minimizer {star:?}", dist(&w));
    }

    /// ½ Σ dᵢ (wᵢ − 1)²
    struct Diagonal(Vec<f64>);

    impl Objective for Diagonal {
        fn dim(&self) -> usize {
            self.0.len()
        }

        fn loss(&self, w: &[f64]) -> f64 {
            self.0.iter().zip(w).map(|(d, x)| 0.5 * d * (x - 1.0).powi(2)).sum()
        }

        fn loss_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
            for ((gi, d), x) in g.iter_mut().zip(&self.0).zip(w) {
                *gi = d * (x - 1.0);
            }
            self.loss(w)
        }
    }

    #[test]
    fn conjugate_directions_in_higher_dimension() {
        // steepest descent would need ~80 steps at this conditioning
        let q = Diagonal((1..=8).map(|i| i as f64).collect());
        let tight = ScgSettings {
            lambda_init: 1e-9,
            ..ScgSettings::default()
        };
        let w0: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { -2.0 } else { 3.0 }).collect();
        let (w, _) = minimize(&q, w0, tight, 10);
        let err = w.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err:e} at {w:?}");
    }

    /// ½ Σ dᵢ (wᵢ − 1)² + ¼ Σ (wᵢ − 1)⁴, whose successive gradients are not
    /// orthogonal, so every term of the conjugacy update matters.
    struct Quartic(Vec<f64>);

    impl Objective for Quartic {
        fn dim(&self) -> usize {
            self.0.len()
        }

        fn loss(&self, w: &[f64]) -> f64 {
            self.0
                .iter()
                .zip(w)
                .map(|(d, x)| 0.5 * d * (x - 1.0).powi(2) + 0.25 * (x - 1.0).powi(4))
                .sum()
        }

        fn loss_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
            for ((gi, d), x) in g.iter_mut().zip(&self.0).zip(w) {
                *gi = d * (x - 1.0) + (x - 1.0).powi(3);
            }
            self.loss(w)
        }
    }

    #[test]
    fn non_quadratic_problem_keeps_converging() {
        // 200 parameters, so no restart happens within the budget
        let q = Quartic((1..=200).map(|i| 0.01 * i as f64).collect());
        let w0: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { -2.0 } else { 3.0 }).collect();
        let (w, _) = minimize(&q, w0, ScgSettings::default(), 120);
        let err = w.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err:e}");
    }

    #[test]
    fn accepted_steps_never_raise_the_loss() {
        let q = Quadratic {
            a: [[10.0, 0.0], [0.0, 0.1]],
            b: [0.0, 0.0],
        };
        let mut scg = Scg::new(&q, vec![1.0, 1.0], ScgSettings::default());
        let mut last = scg.loss();
        for _ in 0..20 {
            if let StepOutcome::Accepted { loss } = scg.step(&q) {
                assert!(loss <= last);
                last = loss;
            }
        }
    }

    fn balanced_batch(n: usize, d: usize) -> Batch {
        let mut f = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            f.extend((0..d).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0));
            t.extend_from_slice(&one_hot_encode(i % 4 + 1).unwrap());
        }
        Batch::new(f, d, t, 4).unwrap()
    }

    #[test]
    fn zero_gradient_start_stops_immediately() {
        let shape = Shape::new(6, 3, 4);
        let p = MlpParams::zeros(shape);
        let b = balanced_batch(16, 6);
        let (out, rep) = scg_train(p.clone(), &b, &b, &TrainConfig::default()).unwrap();
        assert_eq!(rep.stop_reason, StopReason::GradientVanished);
        assert_eq!(rep.epochs_run, 0);
        assert_eq!(out, p);
    }

    fn noisy_problem() -> (Batch, Batch) {
        let mut r = rng::stream(77, Purpose::Noise, 0, 0);
        let mut make = |n: usize| {
            use rand::Rng;
            let mut f = Vec::new();
            let mut t = Vec::new();
            for i in 0..n {
                let c = i % 4;
                for j in 0..8 {
                    let signal = if j % 4 == c { 0.8 } else { -0.2 };
                    f.push(signal + r.random_range(-0.9..0.9));
                }
                t.extend_from_slice(&one_hot_encode(c + 1).unwrap());
            }
            Batch::new(f, 8, t, 4).unwrap()
        };
        (make(80), make(40))
    }

    #[test]
    fn training_report_is_consistent() {
        let (train, val) = noisy_problem();
        let cfg = TrainConfig {
            max_epochs: 300,
            ..TrainConfig::default()
        };
        let (params, rep) = train_model(&train, &val, &cfg).unwrap();
        assert_eq!(rep.train_loss.len(), rep.epochs_run);
        assert_eq!(rep.validation_loss.len(), rep.epochs_run);
        assert!(rep.best_epoch <= rep.epochs_run);
        // monotone over accepted steps
        let mut last = rep.initial_train_loss;
        for (l, &acc) in rep.train_loss.iter().zip(&rep.accepted) {
            if acc {
                assert!(*l <= last);
                last = *l;
            }
        }
        // returned parameters carry the best validation loss seen
        let min_val = rep
            .validation_loss
            .iter()
            .copied()
            .fold(rep.initial_validation_loss, f64::min);
        assert_eq!(rep.best_validation_loss, min_val);
        assert_eq!(loss(&params, &val).unwrap(), min_val);
        assert!(rep.train_loss.last().unwrap() < &rep.initial_train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let (train, val) = noisy_problem();
        let cfg = TrainConfig {
            max_epochs: 50,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_model(&train, &val, &cfg).unwrap();
        let b = train_model(&train, &val, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let (train, _) = noisy_problem();
        let empty = train.head(0);
        assert!(matches!(
            train_model(&train, &empty, &TrainConfig::default()),
            Err(NetError::EmptySubset("validation"))
        ));
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = TrainConfig {
            validation_fail_limit: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
