//! Adam-family optimizers with the TriOpts training hooks.
//!
//! Every optimizer kind shares the same three optional hooks:
//!
//! 1. gradient centralization: each weight-matrix gradient row has its mean
//!    removed before it reaches the moment estimates (biases pass through);
//! 2. cosine learning-rate decay `α_t = α₀·(1 + cos(π·t/T_e))/2`, advanced
//!    once per epoch;
//! 3. uniform noise `U(−τ, τ)` added to every parameter after the update,
//!    drawn from a dedicated seeded stream.
//!
//! With all three disabled, [`OptimizerState::step`] performs exactly the
//! plain update of [`OptimizerState::plain_step`].
//!
//! Update rules, with `m̂ = m/(1−β₁ᵗ)` and `v̂ = v/(1−β₂ᵗ)`:
//!
//! | kind    | parameter update                                   |
//! |---------|----------------------------------------------------|
//! | adam    | `θ −= α·m̂/√(v̂+ε)`                                  |
//! | nadam   | `θ −= α·(β₁m̂ + (1−β₁)·g/(1−β₁ᵗ))/√(v̂+ε)`          |
//! | rmsprop | `v = β₂v + (1−β₂)g²`, `θ −= α·g/√(v+ε)`            |
//! | adamax  | `u = max(β₂u, |g|)`, `θ −= α·m̂/(u+ε)`              |
//!
//! ε sits under the square root for the first three kinds.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SupervisedSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::{self, Gradients, LossKind, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Nadam,
    Rmsprop,
    Adamax,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Adam,
        OptimizerKind::Nadam,
        OptimizerKind::Rmsprop,
        OptimizerKind::Adamax,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub fixed_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            fixed_lr: 0.001,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} is outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon = {} must be > 0",
                self.epsilon
            )));
        }
        if !(self.fixed_lr > 0.0) {
            return Err(Error::Config(format!(
                "fixed_lr = {} must be > 0",
                self.fixed_lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriOptsConfig {
    pub centralize: bool,
    pub cosine_lr: bool,
    pub noise_tau: f64,
    pub initial_lr: f64,
    pub total_epochs: usize,
    pub noise_seed: u64,
}

impl Default for TriOptsConfig {
    fn default() -> Self {
        Self::enabled(100)
    }
}

impl TriOptsConfig {
    pub const DEFAULT_INITIAL_LR: f64 = 0.1;
    pub const DEFAULT_NOISE_TAU: f64 = 1e-4;

    /// All three strategies on: α₀ = 0.1, τ = 1e-4.
    pub fn enabled(total_epochs: usize) -> Self {
        Self {
            centralize: true,
            cosine_lr: true,
            noise_tau: Self::DEFAULT_NOISE_TAU,
            initial_lr: Self::DEFAULT_INITIAL_LR,
            total_epochs,
            noise_seed: 0,
        }
    }

    /// Every hook off; the optimizer then runs its plain update at `fixed_lr`.
    pub fn disabled(total_epochs: usize) -> Self {
        Self {
            centralize: false,
            cosine_lr: false,
            noise_tau: 0.0,
            ..Self::enabled(total_epochs)
        }
    }

    pub fn is_inert(&self) -> bool {
        !self.centralize && !self.cosine_lr && self.noise_tau == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_tau >= 0.0 && self.noise_tau.is_finite()) {
            return Err(Error::Config(format!(
                "noise_tau = {} must be finite and >= 0",
                self.noise_tau
            )));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::Config(format!(
                "initial_lr = {} must be > 0",
                self.initial_lr
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Kahan–Neumaier sum.
fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn ulp(x: f64) -> f64 {
    let a = x.abs();
    a.next_up() - a
}

/// Subtracts each row's mean (taken over the input dimension) from a weight
/// gradient `[out × in]`.
///
/// A row counts as centred once its mean is at most two ulps of its largest
/// entry; such rows are returned untouched, which makes the operation
/// idempotent. Rows with a large common offset may need a second pass.
pub fn centralize_gradient(g: &Matrix) -> Matrix {
    let mut out = g.clone();
    let cols = g.cols();
    if cols == 0 {
        return out;
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for _ in 0..8 {
            let mean = compensated_sum(row) / cols as f64;
            let scale = row.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if mean.abs() <= 2.0 * ulp(scale) {
                break;
            }
            row.iter_mut().for_each(|v| *v -= mean);
        }
    }
    out
}

/// Applies [`centralize_gradient`] to every weight gradient; biases are copied.
pub fn centralize_all(grads: &Gradients) -> Gradients {
    Gradients {
        layers: grads
            .layers
            .iter()
            .map(|l| network::Dense {
                weights: centralize_gradient(&l.weights),
                bias: l.bias.clone(),
            })
            .collect(),
    }
}

/// Cosine-decayed learning rate at epoch `t` of `total_epochs`.
pub fn cosine_lr(t: usize, alpha0: f64, total_epochs: usize) -> Result<f64> {
    if t > total_epochs {
        return Err(Error::ScheduleOverflow {
            epoch: t,
            total: total_epochs,
        });
    }
    if t == total_epochs {
        // cos(π) rounds to exactly -1, but spell out the endpoint anyway
        return Ok(0.0);
    }
    Ok(alpha0 * (1.0 + (PI * t as f64 / total_epochs as f64).cos()) / 2.0)
}

/// Learning rate used for every batch of `epoch` (1-based).
pub fn learning_rate(epoch: usize, opt: &OptimizerConfig, tri: &TriOptsConfig) -> Result<f64> {
    if tri.cosine_lr {
        cosine_lr(epoch, tri.initial_lr, tri.total_epochs)
    } else {
        Ok(opt.fixed_lr)
    }
}

/// Moment estimates and step counter of one training run, plus the noise stream.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Gradients,
    pub v: Gradients,
    /// Infinity-norm accumulator, only advanced by Adamax.
    pub u: Gradients,
    noise_rng: ChaCha8Rng,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, noise_seed: u64) -> Self {
        let zeros = Gradients::zeros_like(params);
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros.clone(),
            u: zeros,
            noise_rng: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }

    fn check(&self, params: &MlpParams, grads: &Gradients) -> Result<()> {
        if !grads.matches(params) || !self.m.matches(params) {
            return Err(Error::Shape(
                "gradients or optimizer state do not match the parameters".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                detail: "non-finite gradient".into(),
            });
        }
        Ok(())
    }

    /// The optimizer's own update at `opt.fixed_lr`, no TriOpts hooks.
    pub fn plain_step(
        &mut self,
        params: &mut MlpParams,
        grads: &Gradients,
        opt: &OptimizerConfig,
    ) -> Result<()> {
        self.check(params, grads)?;
        self.apply_update(params, grads, opt.fixed_lr, opt);
        Ok(())
    }

    /// One TriOpts-enhanced update for a batch of `epoch` (1-based).
    pub fn step(
        &mut self,
        params: &mut MlpParams,
        grads: &Gradients,
        epoch: usize,
        opt: &OptimizerConfig,
        tri: &TriOptsConfig,
    ) -> Result<()> {
        self.check(params, grads)?;
        let lr = learning_rate(epoch, opt, tri)?;
        if tri.centralize {
            self.apply_update(params, &centralize_all(grads), lr, opt);
        } else {
            self.apply_update(params, grads, lr, opt);
        }
        if tri.noise_tau > 0.0 {
            let tau = tri.noise_tau;
            for layer in params.layers.iter_mut() {
                for p in layer
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .chain(layer.bias.iter_mut())
                {
                    *p += self.noise_rng.random_range(-tau..tau);
                }
            }
        }
        Ok(())
    }

    fn apply_update(
        &mut self,
        params: &mut MlpParams,
        grads: &Gradients,
        lr: f64,
        opt: &OptimizerConfig,
    ) {
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let coeffs = Coeffs {
            kind: opt.kind,
            lr,
            b1: opt.beta1,
            b2: opt.beta2,
            eps: opt.epsilon,
            bc1: 1.0 - opt.beta1.powi(t),
            bc2: 1.0 - opt.beta2.powi(t),
        };
        for k in 0..params.layers.len() {
            let p = &mut params.layers[k];
            let g = &grads.layers[k];
            let (m, v, u) = (
                &mut self.m.layers[k],
                &mut self.v.layers[k],
                &mut self.u.layers[k],
            );
            coeffs.update(
                p.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
                u.weights.as_mut_slice(),
            );
            coeffs.update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, &mut u.bias);
        }
    }
}

struct Coeffs {
    kind: OptimizerKind,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

impl Coeffs {
    fn update(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], u: &mut [f64]) {
        let Coeffs {
            kind,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        } = *self;
        for i in 0..p.len() {
            let gi = g[i];
            match kind {
                OptimizerKind::Adam => {
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= lr * m_hat / (v_hat + eps).sqrt();
                }
                OptimizerKind::Nadam => {
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    let lookahead = b1 * m_hat + (1.0 - b1) * gi / bc1;
                    p[i] -= lr * lookahead / (v_hat + eps).sqrt();
                }
                OptimizerKind::Rmsprop => {
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    p[i] -= lr * gi / (v[i] + eps).sqrt();
                }
                OptimizerKind::Adamax => {
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    u[i] = (b2 * u[i]).max(gi.abs());
                    let m_hat = m[i] / bc1;
                    p[i] -= lr * m_hat / (u[i] + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned when early stopping was active.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// First epoch whose validation loss is within `rel` of the run's best,
    /// e.g. `rel = 0.05` for "within 5%".
    pub fn epochs_to_threshold(&self, rel: f64) -> Option<usize> {
        let best = self
            .records
            .iter()
            .filter_map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return None;
        }
        self.records
            .iter()
            .find(|r| r.val_loss.is_some_and(|v| v <= best * (1.0 + rel)))
            .map(|r| r.epoch)
    }

    /// `epoch,lr,train_loss,val_loss`, one row per epoch; an empty
    /// validation loss means no validation set was supplied.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_loss\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:e},{:e},{}\n",
                r.epoch, r.lr, r.train_loss, val
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// `None` trains full-batch; otherwise sequential fixed-size batches.
    pub batch_size: Option<usize>,
    pub early_stop_patience: Option<usize>,
}

fn targets_of(set: &SupervisedSet) -> Matrix {
    Matrix::column_vector(&set.y)
}

/// Trains `params` on `train_set`, evaluating `val_set` after every epoch.
pub fn train(
    mut params: MlpParams,
    train_set: &SupervisedSet,
    val_set: &SupervisedSet,
    opt: &OptimizerConfig,
    tri: &TriOptsConfig,
    loss_kind: &LossKind,
    options: &TrainOptions,
) -> Result<(MlpParams, TrainingTrace)> {
    let mut trace = TrainingTrace::default();
    if options.epochs == 0 {
        return Ok((params, trace));
    }
    opt.validate()?;
    tri.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyData("training set is empty".into()));
    }
    if tri.cosine_lr && options.epochs > tri.total_epochs {
        return Err(Error::ScheduleOverflow {
            epoch: options.epochs,
            total: tri.total_epochs,
        });
    }
    if options.early_stop_patience.is_some() && val_set.is_empty() {
        return Err(Error::Config(
            "early stopping needs a non-empty validation set".into(),
        ));
    }
    if options.batch_size == Some(0) {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }

    let n = train_set.len();
    let batch = options.batch_size.unwrap_or(n).min(n);
    let y_train = targets_of(train_set);
    let y_val = targets_of(val_set);
    let mut state = OptimizerState::new(&params, tri.noise_seed);
    let mut best: Option<(f64, usize, MlpParams)> = None;
    let mut since_best = 0usize;

    let diverged = |epoch: usize, detail: &str| Error::Divergence {
        epoch,
        detail: detail.to_string(),
    };

    for epoch in 1..=options.epochs {
        let lr = learning_rate(epoch, opt, tri)?;
        let mut loss_sum = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let (xb, yb) = if start == 0 && end == n {
                (train_set.x.clone(), y_train.clone())
            } else {
                (
                    train_set.x.slice_rows(start, end),
                    y_train.slice_rows(start, end),
                )
            };
            let (out, cache) = network::forward(&params, &xb)?;
            let loss = network::compute_loss(&out, &yb, loss_kind)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, "non-finite training loss"));
            }
            let grads = network::backward(&params, &cache, &yb, loss_kind)?;
            state
                .step(&mut params, &grads, epoch, opt, tri)
                .map_err(|e| match e {
                    Error::Divergence { detail, .. } => Error::Divergence { epoch, detail },
                    other => other,
                })?;
            if !params.is_finite() {
                return Err(diverged(epoch, "non-finite parameters after update"));
            }
            loss_sum += loss * (end - start) as f64;
            start = end;
        }
        let train_loss = loss_sum / n as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            let pred = network::predict(&params, &val_set.x)?;
            let v = network::compute_loss(&pred, &y_val, loss_kind)?;
            if !v.is_finite() {
                return Err(diverged(epoch, "non-finite validation loss"));
            }
            Some(v)
        };
        trace.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });

        if let (Some(patience), Some(v)) = (options.early_stop_patience, val_loss) {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    trace.stopped_early = true;
                    break;
                }
            }
        }
    }

    if let Some((_, epoch, best_params)) = best {
        trace.best_epoch = Some(epoch);
        params = best_params;
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_mlp, Dense, HiddenActivation, OutputActivation};

    #[test]
    fn centralize_examples() {
        let g = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]).unwrap();
        let c = centralize_gradient(&g);
        assert_eq!(c.row(0), &[-1.0, 0.0, 1.0]);
        assert_eq!(c.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(centralize_gradient(&c), c);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 0.1, 50).unwrap(), 0.1);
        assert_eq!(cosine_lr(50, 0.1, 50).unwrap(), 0.0);
        assert!((cosine_lr(25, 0.1, 50).unwrap() - 0.05).abs() < 1e-17);
        assert!(matches!(
            cosine_lr(51, 0.1, 50),
            Err(Error::ScheduleOverflow {
                epoch: 51,
                total: 50
            })
        ));
    }

    fn single_weight(theta: f64) -> MlpParams {
        MlpParams::from_layers(
            vec![Dense {
                weights: Matrix::from_vec(1, 1, vec![theta]).unwrap(),
                bias: vec![0.0],
            }],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap()
    }

    fn grad_of(params: &MlpParams, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(params);
        grads.layers[0].weights.as_mut_slice()[0] = g;
        grads
    }

    #[test]
    fn first_adam_step_from_zero_history() {
        let opt = OptimizerConfig::default();
        let g = 0.37;
        let mut p = single_weight(0.0);
        let mut state = OptimizerState::new(&p, 0);
        let grads = grad_of(&p, g);
        state.plain_step(&mut p, &grads, &opt).unwrap();
        let expected = opt.fixed_lr * g / (g * g + opt.epsilon).sqrt();
        let moved = -p.layers[0].weights.as_slice()[0];
        assert!((moved - expected).abs() < 1e-18);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn constant_gradient_has_unbiased_first_moment() {
        let opt = OptimizerConfig::default();
        let g = -0.8;
        let mut p = single_weight(0.0);
        let mut state = OptimizerState::new(&p, 0);
        for t in 1..=50 {
            let grads = grad_of(&p, g);
            state.plain_step(&mut p, &grads, &opt).unwrap();
            let m_hat = state.m.layers[0].weights.as_slice()[0] / (1.0 - opt.beta1.powi(t));
            assert!((m_hat - g).abs() <= 1e-14, "t={t}: {m_hat}");
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = single_weight(0.0);
        let mut state = OptimizerState::new(&p, 0);
        let grads = grad_of(&p, f64::NAN);
        let err = state
            .plain_step(&mut p, &grads, &OptimizerConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn mismatched_state_is_shape_error() {
        let p = init_mlp(
            &[2, 3, 1],
            HiddenActivation::Relu,
            OutputActivation::Identity,
            0,
        )
        .unwrap();
        let mut q = init_mlp(
            &[2, 4, 1],
            HiddenActivation::Relu,
            OutputActivation::Identity,
            0,
        )
        .unwrap();
        let mut state = OptimizerState::new(&p, 0);
        let g = Gradients::zeros_like(&q);
        assert!(matches!(
            state.plain_step(&mut q, &g, &OptimizerConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let mut tri = TriOptsConfig::enabled(10);
        assert!(tri.validate().is_ok());
        tri.total_epochs = 0;
        assert!(tri.validate().is_err());
        assert!(TriOptsConfig::disabled(5).is_inert());
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TrainingTrace {
            records: vec![
                EpochRecord {
                    epoch: 1,
                    lr: 0.1,
                    train_loss: 0.5,
                    val_loss: Some(0.25),
                },
                EpochRecord {
                    epoch: 2,
                    lr: 0.05,
                    train_loss: 0.4,
                    val_loss: None,
                },
            ],
            ..Default::default()
        };
        let csv = trace.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,lr,train_loss,val_loss");
        assert_eq!(lines[1], "1,1e-1,5e-1,2.5e-1");
        assert_eq!(lines[2], "2,5e-2,4e-1,");
    }
}
