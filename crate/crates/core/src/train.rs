//! Training: the multi-step losses, optimizers, regularization, the generic
//! mini-batch loop over any model that can put a per-sample loss on the
//! tape, and the checkpoint container.

use crate::arch::InputMask;
use crate::data::{Normalizer, SampleWindow, Task};
use crate::error::{Error, Result};
use crate::hybrid::{HybridConfig, HybridModel, HybridWindow};
use crate::init::{state_init_cost_on_tape, InitConfig, PairModel, DEFAULT_STATE_CAP};
use crate::numeric::norm2;
use crate::numeric::param::ParamLayout;
use crate::numeric::tape::{Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean sum of squared errors over a multi-step prediction:
/// `(1/T) sum_k e_k^T e_k` with `e_k = y_k - y~_k`.
pub fn msse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Dim {
            op: "msse",
            expected: format!("two equal nonzero lengths ({})", target.len()),
            got: format!("{}", pred.len()),
        });
    }
    let mut total = 0.0;
    for (p, y) in pred.iter().zip(target) {
        if p.len() != y.len() {
            return Err(Error::Dim {
                op: "msse",
                expected: format!("rows of width {}", y.len()),
                got: format!("{}", p.len()),
            });
        }
        total += p
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

/// Tape counterpart of [`msse`]: `preds` are rollout outputs, `targets` the
/// measured rows.
pub fn msse_on_tape(t: &mut Tape, preds: &[Var], targets: &[Vec<f64>]) -> Result<Var> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Dim {
            op: "msse",
            expected: format!("two equal nonzero lengths ({})", targets.len()),
            got: format!("{}", preds.len()),
        });
    }
    let mut parts = Vec::with_capacity(preds.len());
    for (p, y) in preds.iter().zip(targets) {
        if p.len() != y.len() {
            return Err(Error::Dim {
                op: "msse",
                expected: format!("rows of width {}", y.len()),
                got: format!("{}", p.len()),
            });
        }
        let yv = t.constant(y);
        let e = t.sub(*p, yv);
        parts.push(t.sumsq(e));
    }
    let total = t.sum(&parts);
    Ok(t.scale(total, 1.0 / preds.len() as f64))
}

/// Batch prediction loss: the mean of per-sample MSSE values.
pub fn pred_loss(sample_msses: &[f64]) -> Result<f64> {
    if sample_msses.is_empty() {
        return Err(Error::Config("prediction loss over an empty batch".into()));
    }
    Ok(sample_msses.iter().sum::<f64>() / sample_msses.len() as f64)
}

/// The joint training cost `alpha * L_pred + beta * L_si`.
pub fn total_loss(l_pred: f64, l_si: f64, alpha: f64, beta: f64) -> f64 {
    alpha * l_pred + beta * l_si
}

// ---------------------------------------------------------------------------
// Optimizers and regularization
// ---------------------------------------------------------------------------

/// First-order optimizers for the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Optimizer {
        Optimizer::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter optimizer accumulators.
#[derive(Debug, Clone)]
pub struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptState {
    pub fn new(n: usize) -> OptState {
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => *lr,
        }
    }

    /// One parameter update in place.
    pub fn step(&self, state: &mut OptState, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), grad.len());
        match *self {
            Optimizer::Sgd { lr, momentum } => {
                for i in 0..theta.len() {
                    state.m[i] = momentum * state.m[i] + grad[i];
                    theta[i] -= lr * state.m[i];
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                state.t += 1;
                let bc1 = 1.0 - beta1.powi(state.t as i32);
                let bc2 = 1.0 - beta2.powi(state.t as i32);
                for i in 0..theta.len() {
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = state.m[i] / bc1;
                    let v_hat = state.v[i] / bc2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Weight decay adds `lambda * theta` to the gradient.
pub fn apply_weight_decay(grad: &mut [f64], theta: &[f64], lambda: f64) {
    for (g, th) in grad.iter_mut().zip(theta) {
        *g += lambda * th;
    }
}

/// Rescale the gradient to `max_norm` when it exceeds it; returns the
/// original norm.
pub fn clip_grad(grad: &mut [f64], max_norm: f64) -> f64 {
    let n = norm2(grad);
    if n > max_norm && n > 0.0 {
        let k = max_norm / n;
        for g in grad.iter_mut() {
            *g *= k;
        }
    }
    n
}

/// Inverted-scaling dropout mask: each component is `0` with probability
/// `rate`, otherwise `1/(1-rate)`, so the expected value is unchanged.
pub fn dropout_mask(dim: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&rate));
    let keep = 1.0 / (1.0 - rate);
    (0..dim)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

// ---------------------------------------------------------------------------
// Training configuration and loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the prediction loss.
    pub alpha: f64,
    /// Weight of the state-initialization loss (network schemes only).
    pub beta: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch: usize,
    /// Gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
    /// Dropout rate on non-recurrent (input-to-layer) connections.
    pub dropout: f64,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            optimizer: Optimizer::default(),
            epochs: 100,
            batch: 8,
            clip_norm: Some(5.0),
            weight_decay: 0.0,
            dropout: 0.0,
            init_scale: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr() > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(
                    "gradient clip norm must be positive (or disabled)".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout rate must lie in [0, 1)".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("cost weights must be nonnegative".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Config("weight-init scale must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Anything trainable by [`train`]: it can put one sample's scalar loss
/// (`alpha * msse + beta * state-init cost` where applicable) on a tape.
pub trait LossModel {
    type Sample;

    fn layout(&self) -> &ParamLayout;

    fn sample_loss(
        &self,
        t: &mut Tape,
        params: &[Var],
        sample: &Self::Sample,
        alpha: f64,
        beta: f64,
        mask: Option<InputMask<'_>>,
    ) -> Result<Var>;
}

impl LossModel for PairModel {
    type Sample = SampleWindow;

    fn layout(&self) -> &ParamLayout {
        PairModel::layout(self)
    }

    fn sample_loss(
        &self,
        t: &mut Tape,
        params: &[Var],
        w: &SampleWindow,
        alpha: f64,
        beta: f64,
        mask: Option<InputMask<'_>>,
    ) -> Result<Var> {
        let seg = w.init_segment();
        let last_u = w.init_u.last().ok_or_else(|| {
            Error::Sequencing("sample window has no initialization rows".into())
        })?;
        let prime_u = t.constant(last_u);
        let iv = self
            .initializer()
            .initialize_on_tape(t, params, self.predictor(), &seg, prime_u)?;
        let k0_state = iv.state.clone();
        let inputs: Vec<Var> = w.pred_u.iter().map(|r| t.constant(r)).collect();
        let (ys, _) = self
            .predictor()
            .rollout_on_tape(t, params, mask, iv, &inputs);
        let l_pred = msse_on_tape(t, &ys, &w.pred_y)?;
        let mut loss = t.scale(l_pred, alpha);
        if beta != 0.0 && self.uses_si_loss() {
            let tau = self.tau();
            let l_si = state_init_cost_on_tape(
                t,
                params,
                self.predictor(),
                &k0_state,
                &w.init_u[tau],
                &w.init_y[tau],
                &w.init_y[tau - 1],
            );
            let scaled = t.scale(l_si, beta);
            loss = t.add(loss, scaled);
        }
        Ok(loss)
    }
}

impl LossModel for HybridModel {
    type Sample = HybridWindow;

    fn layout(&self) -> &ParamLayout {
        HybridModel::layout(self)
    }

    /// The grey-box composition has no single linear output equation tying a
    /// submodel state to the measured target at the initialization time, so
    /// no state-initialization cost is defined; the hybrid trains on the
    /// prediction loss alone and `beta` is ignored.
    fn sample_loss(
        &self,
        t: &mut Tape,
        params: &[Var],
        w: &HybridWindow,
        alpha: f64,
        _beta: f64,
        mask: Option<InputMask<'_>>,
    ) -> Result<Var> {
        let ys = self.rollout_on_tape(t, params, mask, w)?;
        let targets = w.targets(self.gains());
        let l_pred = msse_on_tape(t, &ys, &targets)?;
        Ok(t.scale(l_pred, alpha))
    }
}

/// Loss record for one epoch. When no validation samples exist, `val`
/// mirrors `train`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters of the best validation epoch (the initial parameters when
    /// `epochs == 0`).
    pub theta: Vec<f64>,
    /// 1-based epoch the returned parameters come from; 0 means "initial".
    pub best_epoch: usize,
    pub best_val: f64,
    pub history: Vec<EpochStats>,
}

/// Mean loss of `samples` under fixed parameters — no dropout, no update.
/// Two calls with the same arguments are bit-identical.
pub fn evaluate_loss<M: LossModel>(
    model: &M,
    samples: &[M::Sample],
    theta: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("loss evaluation over an empty set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let mut t = Tape::new();
        let params = t.bind_params(model.layout(), theta);
        let l = model.sample_loss(&mut t, &params, s, alpha, beta, None)?;
        if let Some(step) = t.poisoned() {
            return Err(Error::Instability { step });
        }
        total += t.scalar_value(l);
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch training on `alpha * L_pred + beta * L_si`, returning the
/// best-validation parameters and the per-epoch loss history. Everything is
/// driven by one seeded generator, so identical inputs reproduce identical
/// histories bit for bit.
pub fn train<M: LossModel>(
    model: &M,
    train_set: &[M::Sample],
    val_set: &[M::Sample],
    theta0: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let layout = model.layout();
    if theta0.len() != layout.total() {
        return Err(Error::Dim {
            op: "train",
            expected: format!("{} parameters", layout.total()),
            got: format!("{}", theta0.len()),
        });
    }
    if train_set.is_empty() {
        return Err(Error::Config("training needs at least one sample".into()));
    }
    let mut theta = theta0.to_vec();
    let mut opt = OptState::new(theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut t = Tape::new();
            let params = t.bind_params(layout, &theta);
            let mut parts = Vec::with_capacity(chunk.len());
            for idx in chunk {
                let sample = &train_set[*idx];
                let loss = if cfg.dropout > 0.0 {
                    let rate = cfg.dropout;
                    let rng = &mut rng;
                    let mut mask_fn = move |tp: &mut Tape, v: Var| -> Var {
                        let m = dropout_mask(v.len(), rate, rng);
                        let c = tp.constant(&m);
                        tp.mul(v, c)
                    };
                    model.sample_loss(&mut t, &params, sample, cfg.alpha, cfg.beta, Some(&mut mask_fn))?
                } else {
                    model.sample_loss(&mut t, &params, sample, cfg.alpha, cfg.beta, None)?
                };
                parts.push(loss);
            }
            let total = t.sum(&parts);
            let batch_loss = t.scale(total, 1.0 / chunk.len() as f64);
            let lv = t.scalar_value(batch_loss);
            if t.poisoned().is_some() || !lv.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let mut grad = t.backward(batch_loss, theta.len())?;
            if cfg.weight_decay > 0.0 {
                apply_weight_decay(&mut grad, &theta, cfg.weight_decay);
            }
            if let Some(max_norm) = cfg.clip_norm {
                clip_grad(&mut grad, max_norm);
            }
            cfg.optimizer.step(&mut opt, &mut theta, &grad);
            epoch_loss += lv;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            evaluate_loss(model, val_set, &theta, cfg.alpha, cfg.beta)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if best.as_ref().map_or(true, |(_, bv, _)| val_loss < *bv) {
            best = Some((epoch, val_loss, theta.clone()));
        }
        history.push(EpochStats {
            epoch,
            train: train_loss,
            val: val_loss,
        });
    }

    let (best_epoch, best_val, best_theta) = match best {
        Some(b) => b,
        None => (0, f64::INFINITY, theta),
    };
    Ok(TrainResult {
        theta: best_theta,
        best_epoch,
        best_val,
        history,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSPREDCP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a model with the same parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelSpec {
    Pair {
        predictor: crate::arch::PredictorConfig,
        initializer: InitConfig,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    Hybrid(HybridConfig),
}

fn default_cap() -> f64 {
    DEFAULT_STATE_CAP
}

/// A model rebuilt from its spec.
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Pair(PairModel),
    Hybrid(HybridModel),
}

impl BuiltModel {
    pub fn layout(&self) -> &ParamLayout {
        match self {
            BuiltModel::Pair(m) => m.layout(),
            BuiltModel::Hybrid(m) => m.layout(),
        }
    }

    pub fn tau(&self) -> usize {
        match self {
            BuiltModel::Pair(m) => m.tau(),
            BuiltModel::Hybrid(m) => m.tau(),
        }
    }
}

impl ModelSpec {
    pub fn instantiate(&self) -> Result<BuiltModel> {
        match self {
            ModelSpec::Pair {
                predictor,
                initializer,
                cap,
            } => Ok(BuiltModel::Pair(PairModel::new(
                predictor.clone(),
                initializer.clone(),
                *cap,
            )?)),
            ModelSpec::Hybrid(cfg) => Ok(BuiltModel::Hybrid(HybridModel::new(cfg.clone())?)),
        }
    }
}

/// Self-describing trained-model container: a JSON header (model spec,
/// layout hash, normalization constants, training config) followed by the
/// parameters as little-endian 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub layout_hash: u64,
    pub normalizer: Option<Normalizer>,
    pub task: Option<Task>,
    pub train: Option<TrainConfig>,
    /// The model-notation string the run was configured with, if any.
    pub notation: Option<String>,
    pub theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    model: ModelSpec,
    layout_hash: u64,
    normalizer: Option<Normalizer>,
    task: Option<Task>,
    train: Option<TrainConfig>,
    notation: Option<String>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            layout_hash: self.layout_hash,
            normalizer: self.normalizer.clone(),
            task: self.task,
            train: self.train.clone(),
            notation: self.notation.clone(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
        let mut buf =
            Vec::with_capacity(8 + 4 + 8 + json.len() + 8 + 8 * self.theta.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in &self.theta {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let buf = std::fs::read(path)?;
        let fail = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            if *at + n > buf.len() {
                return Err(fail("file is truncated".into()));
            }
            let s = &buf[*at..*at + n];
            *at += n;
            Ok(s)
        };
        if take(&mut at, 8)? != CHECKPOINT_MAGIC {
            return Err(fail("not a model checkpoint (magic mismatch)".into()));
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!(
                "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let json_len =
            u64::from_le_bytes(take(&mut at, 8)?.try_into().expect("8 bytes")) as usize;
        let header: CheckpointHeader = serde_json::from_slice(take(&mut at, json_len)?)
            .map_err(|e| fail(format!("header: {e}")))?;
        if header.version != version {
            return Err(fail("header/container version disagreement".into()));
        }
        let theta_len =
            u64::from_le_bytes(take(&mut at, 8)?.try_into().expect("8 bytes")) as usize;
        let theta_bytes = take(&mut at, theta_len.checked_mul(8).ok_or_else(|| {
            fail("parameter count overflows".into())
        })?)?;
        if at != buf.len() {
            return Err(fail(format!("{} trailing bytes", buf.len() - at)));
        }
        let theta: Vec<f64> = theta_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint {
            model: header.model,
            layout_hash: header.layout_hash,
            normalizer: header.normalizer,
            task: header.task,
            train: header.train,
            notation: header.notation,
            theta,
        })
    }

    /// Verify the checkpoint matches a freshly built layout before use.
    pub fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        let got = layout.hash();
        if got != self.layout_hash {
            return Err(Error::LayoutMismatch {
                expected: self.layout_hash,
                got,
            });
        }
        if self.theta.len() != layout.total() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, layout needs {}",
                self.theta.len(),
                layout.total()
            )));
        }
        Ok(())
    }

    /// Rebuild the model and verify the stored parameters fit it.
    pub fn instantiate(&self) -> Result<BuiltModel> {
        let model = self.model.instantiate()?;
        self.check_layout(model.layout())?;
        Ok(model)
    }
}
