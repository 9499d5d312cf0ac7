//! Fully-connected ReLU network with a softmax head, trained by manual
//! backpropagation against any [`LossSpec`].
//!
//! Predictions are clamped to `[eps, 1]` and renormalized before every log.
//! Gradients treat the clamp as a stop-gradient: a class whose softmax
//! output sits below the floor receives no gradient through its own entry.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{forward_loss_grad, linear_loss_grad, peer_pairing, LossSpec, ResolvedLoss};
use crate::metrics::model_confidence;
use crate::seeding::{derive_seed, rng_for, streams};
use crate::types::{softmax, LabeledDataset, ProbVector, DEFAULT_EPS_CLAMP};

const CHECKPOINT_FORMAT: &str = "gls-lab-model";
const CHECKPOINT_VERSION: u32 = 1;

/// Weights of an MLP stored as one flat parameter vector.
///
/// Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs and occupies
/// `dims[l + 1] * dims[l]` weights (row-major, output-major) followed by
/// `dims[l + 1]` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    epsilon_clamp: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    epsilon_clamp: f64,
    seed: u64,
    params: Vec<f64>,
}

impl MlpModel {
    /// He-uniform initialization scaled by fan-in; biases start at zero.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        model.seed = seed;
        let mut rng = rng_for(seed, streams::INIT, 0);
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut model.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(model)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer dims {layer_dims:?} need an input and an output width, all positive"
            )));
        }
        let n = layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            params: vec![0.0; n],
            epsilon_clamp: DEFAULT_EPS_CLAMP,
            seed: 0,
        })
    }

    pub fn with_epsilon_clamp(mut self, eps: f64) -> Self {
        self.epsilon_clamp = eps;
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn epsilon_clamp(&self) -> f64 {
        self.epsilon_clamp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Raw output-layer activations.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut a = x.to_vec();
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], &a))
                .collect();
            if l + 1 < self.num_layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
            offset += fan_in * fan_out + fan_out;
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(ProbVector::from_logits(&self.logits(x)?, self.epsilon_clamp))
    }

    /// Forward pass over every row of `ds`.
    pub fn predict_proba(&self, ds: &LabeledDataset) -> Result<Vec<ProbVector>> {
        (0..ds.len()).map(|i| self.forward(ds.row(i))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_dims: self.layer_dims.clone(),
            epsilon_clamp: self.epsilon_clamp,
            seed: self.seed,
            params: self.params.clone(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| parse_err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(parse_err(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut model = Self::zeros(&ck.layer_dims)?;
        if ck.params.len() != model.params.len() {
            return Err(parse_err(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                ck.params.len()
            )));
        }
        model.params = ck.params;
        model.epsilon_clamp = ck.epsilon_clamp;
        model.seed = ck.seed;
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample forward cache reused across a batch.
struct Scratch {
    /// Activations per layer, `acts[0]` being the input.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(dims: &[usize]) -> Self {
        Self {
            acts: dims.iter().map(|&d| vec![0.0; d]).collect(),
            deltas: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

impl MlpModel {
    /// Runs the forward pass for `x`, leaving activations in `s`; returns
    /// the raw softmax output and the clamped, renormalized prediction.
    fn forward_cached(&self, x: &[f64], s: &mut Scratch) -> (Vec<f64>, Vec<f64>) {
        s.acts[0].copy_from_slice(x);
        let mut offset = 0;
        let nl = self.num_layers();
        for l in 0..nl {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (w, rest) = self.params[offset..].split_at(fan_in * fan_out);
            let b = &rest[..fan_out];
            let (prev, next) = s.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for o in 0..fan_out {
                let z = b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], input);
                out[o] = if l + 1 < nl { z.max(0.0) } else { z };
            }
            offset += fan_in * fan_out + fan_out;
        }
        let soft = softmax(&s.acts[nl]);
        let p = ProbVector::clamped(soft.clone(), self.epsilon_clamp).into_inner();
        (soft, p)
    }

    /// Backpropagates `grad_p` (dL/dp for the clamped prediction) into
    /// `grad`.
    fn backward(&self, soft: &[f64], p: &[f64], grad_p: &[f64], s: &mut Scratch, grad: &mut [f64]) {
        let eps = self.epsilon_clamp;
        let k = soft.len();
        // p = q / sum(q), q = max(soft, eps)
        let qsum: f64 = soft.iter().map(|v| v.max(eps)).sum();
        let gp_dot: f64 = (0..k).map(|j| grad_p[j] * p[j]).sum();
        let g_soft: Vec<f64> = (0..k)
            .map(|j| {
                if soft[j] > eps {
                    (grad_p[j] - gp_dot) / qsum
                } else {
                    0.0
                }
            })
            .collect();
        let gs_dot: f64 = (0..k).map(|j| g_soft[j] * soft[j]).sum();
        let nl = self.num_layers();
        for j in 0..k {
            s.deltas[nl][j] = soft[j] * (g_soft[j] - gs_dot);
        }

        let mut offsets = Vec::with_capacity(nl);
        let mut o = 0;
        for l in 0..nl {
            offsets.push(o);
            o += self.layer_dims[l] * self.layer_dims[l + 1] + self.layer_dims[l + 1];
        }
        for l in (0..nl).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let off = offsets[l];
            let (lower, upper) = s.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let input = &s.acts[l];
            for out in 0..fan_out {
                let d = delta[out];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + out * fan_in..off + (out + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + fan_in * fan_out + out] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let prev = &mut lower[l];
                for i in 0..fan_in {
                    // ReLU derivative, taking 0 at the kink
                    if input[i] > 0.0 {
                        prev[i] = (0..fan_out).map(|out| w[out * fan_in + i] * delta[out]).sum();
                    } else {
                        prev[i] = 0.0;
                    }
                }
            }
        }
    }
}

/// Mean loss over `indices` of `ds` and its gradient with respect to all
/// parameters.
///
/// `pairing_seed` drives the random pairing of sampled peer loss and is
/// ignored by every other loss.
pub(crate) fn batch_loss_and_grad(
    model: &MlpModel,
    ds: &LabeledDataset,
    indices: &[usize],
    loss: &ResolvedLoss,
    pairing_seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let n = indices.len();
    if n == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    if ds.dim() != model.input_dim() || ds.num_classes() != model.num_classes() {
        return Err(Error::InvalidDataset(format!(
            "dataset shape ({} features, {} classes) does not match model {:?}",
            ds.dim(),
            ds.num_classes(),
            model.layer_dims
        )));
    }
    let k = model.num_classes();
    let mut grad = vec![0.0; model.num_params()];
    let mut scratch = Scratch::new(&model.layer_dims);
    let mut gp = vec![0.0; k];
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;

    let peer = match loss {
        ResolvedLoss::PeerSampled => {
            if n < 2 {
                return Err(Error::BatchTooSmall(n));
            }
            Some(peer_pairing(n, pairing_seed))
        }
        _ => None,
    };
    let mut w = vec![0.0; k];

    for (pos, &i) in indices.iter().enumerate() {
        let y = ds.labels()[i];
        let (soft, p) = model.forward_cached(ds.row(i), &mut scratch);
        gp.iter_mut().for_each(|g| *g = 0.0);
        let l = match loss {
            ResolvedLoss::Linear { weights } => linear_loss_grad(&p, &weights[y], &mut gp),
            ResolvedLoss::GlsC { weights, .. } => linear_loss_grad(&p, &weights[y], &mut gp),
            ResolvedLoss::Forward { t } => forward_loss_grad(&p, y, t, &mut gp)?,
            ResolvedLoss::PeerSampled => {
                let (feat, lab) = peer.as_ref().unwrap();
                // sample at batch position `pos` appears as the peer feature
                // for exactly one pairing slot `j`
                let j = feat.iter().position(|&f| f == pos).unwrap();
                w.iter_mut().for_each(|v| *v = 0.0);
                w[y] += 1.0;
                w[ds.labels()[indices[lab[j]]]] -= 1.0;
                linear_loss_grad(&p, &w, &mut gp)
            }
        };
        total += l;
        gp.iter_mut().for_each(|g| *g *= inv_n);
        model.backward(&soft, &p, &gp, &mut scratch, &mut grad);
    }
    let mut mean = total * inv_n;

    if let ResolvedLoss::GlsC {
        penalty_scale,
        positives,
        ..
    } = loss
    {
        if *penalty_scale != 0.0 {
            let m = positives.len() as f64;
            // scale * mean(ce(p,1) - ce(p,0)) = -sum_k w_k log p_k
            let wpen = [-penalty_scale / m, penalty_scale / m];
            for &i in positives {
                let (soft, p) = model.forward_cached(ds.row(i), &mut scratch);
                gp.iter_mut().for_each(|g| *g = 0.0);
                mean += linear_loss_grad(&p, &wpen, &mut gp);
                model.backward(&soft, &p, &gp, &mut scratch, &mut grad);
            }
        }
    }
    Ok((mean, grad))
}

/// Mean loss of `spec` over the whole of `batch` and its exact gradient.
///
/// For GLS-C the clean indices refer to rows of `batch`; sampled peer loss
/// uses pairing seed 0.
pub fn loss_and_grad(model: &MlpModel, batch: &LabeledDataset, spec: &LossSpec) -> Result<(f64, Vec<f64>)> {
    let resolved = spec.resolve(batch)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    batch_loss_and_grad(model, batch, &idx, &resolved, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// SGD with Nesterov momentum and L2 weight decay.
    Sgd { momentum: f64, weight_decay: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd_default() -> Self {
        OptimizerConfig::Sgd {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Step decay: `initial * decay^(epoch / step_epochs)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Zero disables decay.
    #[serde(default)]
    pub step_epochs: usize,
}

fn default_decay() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decay: 1.0,
            step_epochs: 0,
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        if self.step_epochs == 0 {
            return self.initial;
        }
        self.initial * self.decay.powi((epoch / self.step_epochs) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub epsilon_clamp: f64,
    /// Checkpoint to start from instead of a fresh initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<PathBuf>,
}

fn default_eps() -> f64 {
    DEFAULT_EPS_CLAMP
}

impl TrainConfig {
    /// Three-layer MLP, 200 epochs, batch 128, Adam at 0.1 decayed by 10x
    /// every 40 epochs: the recipe used for the 2-D synthetic data.
    pub fn synthetic(loss: LossSpec, seed: u64) -> Self {
        Self {
            loss,
            hidden: vec![32, 32],
            epochs: 200,
            batch_size: 128,
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule {
                initial: 0.1,
                decay: 0.1,
                step_epochs: 40,
            },
            seed,
            epsilon_clamp: DEFAULT_EPS_CLAMP,
            warmup: None,
        }
    }

    /// Two-layer MLP, batch 64, Adam; the learning rate is picked from a
    /// grid per cell by the harness.
    pub fn tabular(loss: LossSpec, seed: u64, lr: f64) -> Self {
        Self {
            loss,
            hidden: vec![64],
            epochs: 1000,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule::constant(lr),
            seed,
            epsilon_clamp: DEFAULT_EPS_CLAMP,
            warmup: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr_schedule.initial > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 1.0) {
            return Err(Error::InvalidConfig("epsilon_clamp must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// Mean model confidence on the test set against its reference labels.
    pub expected_mc: Vec<f64>,
    pub model: MlpModel,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> f64 {
        *self.test_accuracy.last().unwrap()
    }
}

enum OptState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptState {
    fn new(cfg: &OptimizerConfig, n: usize) -> Self {
        match cfg {
            OptimizerConfig::Sgd { .. } => OptState::Sgd {
                velocity: vec![0.0; n],
            },
            OptimizerConfig::Adam { .. } => OptState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, cfg: &OptimizerConfig, params: &mut [f64], grad: &[f64], lr: f64) {
        match (self, cfg) {
            (
                OptState::Sgd { velocity },
                OptimizerConfig::Sgd {
                    momentum,
                    weight_decay,
                },
            ) => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    let g = g + weight_decay * *p;
                    *v = momentum * *v + g;
                    *p -= lr * (g + momentum * *v);
                }
            }
            (
                OptState::Adam { m, v, t },
                OptimizerConfig::Adam { beta1, beta2, eps },
            ) => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
            _ => unreachable!("optimizer state built from the same config"),
        }
    }
}

/// Trains a fresh (or warm-started) model on `train`, evaluating on `test`
/// after every epoch. Fully deterministic given `cfg`.
pub fn train(train: &LabeledDataset, test: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidDataset("train and test sets must be nonempty".into()));
    }
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(Error::InvalidDataset(
            "train and test sets disagree on feature width or class count".into(),
        ));
    }
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.hidden);
    dims.push(train.num_classes());
    let mut model = match &cfg.warmup {
        Some(path) => {
            let m = MlpModel::load(path)?;
            if m.layer_dims() != dims.as_slice() {
                return Err(Error::InvalidConfig(format!(
                    "warm-up model has dims {:?}, expected {dims:?}",
                    m.layer_dims()
                )));
            }
            m
        }
        None => MlpModel::new(&dims, cfg.seed)?,
    }
    .with_epsilon_clamp(cfg.epsilon_clamp);

    let loss = cfg.loss.resolve(train)?;
    let is_peer_sampled = matches!(loss, ResolvedLoss::PeerSampled);
    let mut opt = OptState::new(&cfg.optimizer, model.num_params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        train_accuracy: Vec::with_capacity(cfg.epochs),
        test_accuracy: Vec::with_capacity(cfg.epochs),
        expected_mc: Vec::with_capacity(cfg.epochs),
        model: model.clone(),
    };

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, streams::SHUFFLE, epoch as u64));
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if is_peer_sampled && batch.len() < 2 {
                continue;
            }
            let pair_seed = derive_seed(cfg.seed, streams::PEER, ((epoch as u64) << 32) | b as u64);
            let (l, grad) = batch_loss_and_grad(&model, train, batch, &loss, pair_seed)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss: l });
            }
            epoch_loss += l * batch.len() as f64;
            seen += batch.len();
            opt.step(&cfg.optimizer, &mut model.params, &grad, lr);
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        report.train_loss.push(epoch_loss / seen.max(1) as f64);
        report.train_accuracy.push(predict_and_accuracy(&model, train)?.accuracy);
        let test_preds = model.predict_proba(test)?;
        let refs = test.reference_labels();
        let correct = test_preds
            .iter()
            .zip(refs)
            .filter(|(p, &y)| p.argmax() == y)
            .count();
        report.test_accuracy.push(correct as f64 / test.len() as f64);
        let mc: f64 = test_preds
            .iter()
            .zip(refs)
            .map(|(p, &y)| model_confidence(p, y))
            .sum::<f64>()
            / test.len() as f64;
        report.expected_mc.push(mc);
    }
    report.model = model;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub accuracy: f64,
    /// Whether accuracy was measured against hidden clean labels.
    pub against_clean: bool,
}

/// Argmax predictions (ties to the smallest class) and accuracy against the
/// clean labels when the dataset carries them, otherwise its labels.
pub fn predict_and_accuracy(model: &MlpModel, ds: &LabeledDataset) -> Result<Predictions> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset("cannot score an empty dataset".into()));
    }
    let labels: Vec<usize> = (0..ds.len())
        .map(|i| model.forward(ds.row(i)).map(|p| p.argmax()))
        .collect::<Result<_>>()?;
    let refs = ds.reference_labels();
    let correct = labels.iter().zip(refs).filter(|(a, b)| a == b).count();
    Ok(Predictions {
        accuracy: correct as f64 / ds.len() as f64,
        labels,
        against_clean: ds.clean_labels().is_some(),
    })
}
