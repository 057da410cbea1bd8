//! Non-traditional classifier: a probabilistic model trained to separate the
//! positive sample from the unlabeled one.
//!
//! With class-balanced logistic loss the optimum is `f_p / (f_p + f_u)`.
//! Networks are plain fully connected ReLU stacks with a sigmoid output,
//! trained with Adam and L2 weight decay folded into the gradient.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{split_folds, DataError, PuDataset, PuLabel};
use crate::stats::derive_seed;

/// Predictions are clipped to `[CLIP, 1 - CLIP]` so their logits stay finite.
pub const CLIP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NtcError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("model expects {expected} features, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("prediction {value} is not a probability in (0, 1)")]
    InvalidPrediction { value: f64 },
    #[error("no candidate classifiers supplied")]
    NoCandidates,
    #[error("every candidate classifier failed; first error: {0}")]
    AllCandidatesFailed(Box<NtcError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NtcKind {
    /// No hidden layers, zero-initialised, full-batch updates.
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NtcConfig {
    pub kind: NtcKind,
    pub hidden_sizes: Vec<usize>,
    /// Zero epochs yields the untrained initialisation.
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NtcConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl NtcConfig {
    /// 1-16-1 network for one-dimensional synthetic data.
    pub fn synthetic() -> Self {
        Self {
            kind: NtcKind::Mlp,
            hidden_sizes: vec![16],
            epochs: 200,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }

    /// dim-128-128-1 network for tabular data.
    pub fn tabular() -> Self {
        Self {
            hidden_sizes: vec![128, 128],
            epochs: 50,
            ..Self::synthetic()
        }
    }

    pub fn logistic() -> Self {
        Self {
            kind: NtcKind::Logistic,
            hidden_sizes: Vec::new(),
            epochs: 300,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            batch_size: 0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), NtcError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NtcError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NtcError::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.kind == NtcKind::Mlp {
            if self.batch_size == 0 {
                return Err(NtcError::InvalidConfig("batch_size must be positive".into()));
            }
            if self.hidden_sizes.contains(&0) {
                return Err(NtcError::InvalidConfig("hidden layers cannot be empty".into()));
            }
        }
        Ok(())
    }

    fn hidden(&self) -> &[usize] {
        match self.kind {
            NtcKind::Logistic => &[],
            NtcKind::Mlp => &self.hidden_sizes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out × n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` for weights and biases.
    fn uniform<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let w = (0..n_in * n_out).map(|_| draw()).collect();
        let b = (0..n_out).map(|_| draw()).collect();
        Self { n_in, n_out, w, b }
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            *out_o = self.b[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// A fitted classifier. Immutable once trained.
#[derive(Debug, Clone, PartialEq)]
pub struct NtcModel {
    shift: Vec<f64>,
    scale: Vec<f64>,
    layers: Vec<Dense>,
}

impl NtcModel {
    pub fn n_features(&self) -> usize {
        self.shift.len()
    }

    /// A logistic model with the given coefficients on raw features.
    pub fn logistic(weights: Vec<f64>, bias: f64) -> Self {
        let d = weights.len();
        Self {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
            layers: vec![Dense {
                n_in: d,
                n_out: 1,
                w: weights,
                b: vec![bias],
            }],
        }
    }

    fn logit(&self, x: &[f64], buffers: &mut [Vec<f64>]) -> f64 {
        for (j, v) in buffers[0].iter_mut().enumerate() {
            *v = (x[j] - self.shift[j]) / self.scale[j];
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = buffers.split_at_mut(l + 1);
            layer.forward(&head[l], &mut tail[0]);
            if l + 1 < self.layers.len() {
                tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        buffers[self.layers.len()][0]
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        std::iter::once(self.n_features())
            .chain(self.layers.iter().map(|l| l.n_out))
            .map(|n| vec![0.0; n])
            .collect()
    }

    /// Probabilities of the positive class, clipped to `[1e-6, 1 - 1e-6]`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, NtcError> {
        if x.ncols() != self.n_features() {
            return Err(NtcError::ArityMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        let mut buf = self.buffers();
        let mut row = vec![0.0; x.ncols()];
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                row.iter_mut().zip(r.iter()).for_each(|(d, s)| *d = *s);
                sigmoid(self.logit(&row, &mut buf)).clamp(CLIP, 1.0 - CLIP)
            })
            .collect())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[t ln σ(z) + (1 - t) ln(1 - σ(z))]` without overflow.
fn logistic_loss(z: f64, target: f64) -> f64 {
    z.max(0.0) - target * z + (-z.abs()).exp().ln_1p()
}

struct Adam {
    lr: f64,
    decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[&mut Vec<f64>], lr: f64, decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            lr,
            decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] + self.decay * p[j];
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * gj;
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * gj * gj;
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Fits a classifier separating positive (target 1) from unlabeled (target 0)
/// rows. Per-row loss weights give both classes equal total weight.
pub fn fit_ntc(train: &PuDataset, cfg: &NtcConfig) -> Result<NtcModel, NtcError> {
    let x = train.feature_matrix()?;
    fit_matrix(x.view(), train.pu_labels(), cfg)
}

/// [`fit_ntc`] on a raw feature matrix and per-row labels.
pub fn fit_matrix(
    x: ArrayView2<f64>,
    labels: &[PuLabel],
    cfg: &NtcConfig,
) -> Result<NtcModel, NtcError> {
    cfg.validate()?;
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(DataError::LengthMismatch {
            what: "labels",
            expected: n,
            found: labels.len(),
        }
        .into());
    }
    let n_pos = labels.iter().filter(|&&l| l == PuLabel::Positive).count();
    if n_pos == 0 {
        return Err(DataError::NoPositives.into());
    }
    if n_pos == n {
        return Err(DataError::NoUnlabeled.into());
    }

    let mut shift = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for (j, col) in x.columns().into_iter().enumerate() {
        let v = col.to_vec();
        shift[j] = crate::stats::mean(&v);
        let sd = crate::stats::population_variance(&v).sqrt();
        scale[j] = if sd > 1e-12 { sd } else { 1.0 };
    }
    let xs: Vec<f64> = x
        .rows()
        .into_iter()
        .flat_map(|r| {
            r.iter()
                .zip(shift.iter().zip(&scale))
                .map(|(v, (m, s))| (v - m) / s)
                .collect::<Vec<_>>()
        })
        .collect();
    let targets: Vec<f64> = labels
        .iter()
        .map(|&l| if l == PuLabel::Positive { 1.0 } else { 0.0 })
        .collect();
    let w_pos = n as f64 / (2.0 * n_pos as f64);
    let w_unl = n as f64 / (2.0 * (n - n_pos) as f64);
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| if t == 1.0 { w_pos } else { w_unl })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = std::iter::once(d)
        .chain(cfg.hidden().iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let mut layers: Vec<Dense> = sizes
        .windows(2)
        .map(|s| match cfg.kind {
            NtcKind::Logistic => Dense::zeros(s[0], s[1]),
            NtcKind::Mlp => Dense::uniform(s[0], s[1], &mut rng),
        })
        .collect();

    let batch = match cfg.kind {
        NtcKind::Logistic => n,
        NtcKind::Mlp => cfg.batch_size.min(n),
    };
    let n_layers = layers.len();
    let mut acts: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut deltas: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut grads: Vec<Vec<f64>> = layers
        .iter()
        .flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]])
        .collect();
    let mut adam = {
        let params: Vec<&mut Vec<f64>> = layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect();
        Adam::new(&params, cfg.learning_rate, cfg.weight_decay)
    };
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        if cfg.kind == NtcKind::Mlp {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for &i in chunk {
                acts[0].copy_from_slice(&xs[i * d..(i + 1) * d]);
                for (l, layer) in layers.iter().enumerate() {
                    let (head, tail) = acts.split_at_mut(l + 1);
                    layer.forward(&head[l], &mut tail[0]);
                    if l + 1 < n_layers {
                        tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                let z = acts[n_layers][0];
                epoch_loss += weights[i] * logistic_loss(z, targets[i]);
                deltas[n_layers][0] = weights[i] * (sigmoid(z) - targets[i]);
                for l in (0..n_layers).rev() {
                    let layer = &layers[l];
                    let (gw, rest) = grads[2 * l..].split_at_mut(1);
                    let gb = &mut rest[0];
                    let (lower, upper) = deltas.split_at_mut(l + 1);
                    let delta_out = &upper[0];
                    for o in 0..layer.n_out {
                        let dlt = delta_out[o];
                        if dlt == 0.0 {
                            continue;
                        }
                        gb[o] += dlt;
                        let row = &mut gw[0][o * layer.n_in..(o + 1) * layer.n_in];
                        for (g, a) in row.iter_mut().zip(&acts[l]) {
                            *g += dlt * a;
                        }
                    }
                    if l > 0 {
                        let delta_in = &mut lower[l];
                        for (j, di) in delta_in.iter_mut().enumerate() {
                            if acts[l][j] <= 0.0 {
                                *di = 0.0;
                                continue;
                            }
                            *di = (0..layer.n_out)
                                .map(|o| layer.w[o * layer.n_in + j] * delta_out[o])
                                .sum();
                        }
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= inv));
            let mut params: Vec<&mut Vec<f64>> = layers
                .iter_mut()
                .flat_map(|l| [&mut l.w, &mut l.b])
                .collect();
            adam.update(&mut params, &grads);
        }
        if !epoch_loss.is_finite() {
            return Err(NtcError::Diverged { epoch });
        }
    }

    Ok(NtcModel {
        shift,
        scale,
        layers,
    })
}

pub fn predict(model: &NtcModel, x: ArrayView2<f64>) -> Result<Vec<f64>, NtcError> {
    model.predict(x)
}

/// Out-of-fold classifier outputs, split by PU label, each in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtcPredictions {
    pub y_p: Vec<f64>,
    pub y_u: Vec<f64>,
}

impl NtcPredictions {
    /// Validates that every value lies in `(0, 1)` and clips to
    /// `[1e-6, 1 - 1e-6]`.
    pub fn new(y_p: Vec<f64>, y_u: Vec<f64>) -> Result<Self, NtcError> {
        let clip = |v: Vec<f64>| -> Result<Vec<f64>, NtcError> {
            v.into_iter()
                .map(|y| {
                    if y > 0.0 && y < 1.0 {
                        Ok(y.clamp(CLIP, 1.0 - CLIP))
                    } else {
                        Err(NtcError::InvalidPrediction { value: y })
                    }
                })
                .collect()
        };
        let (y_p, y_u) = (clip(y_p)?, clip(y_u)?);
        if y_p.is_empty() {
            return Err(DataError::NoPositives.into());
        }
        if y_u.is_empty() {
            return Err(DataError::NoUnlabeled.into());
        }
        Ok(Self { y_p, y_u })
    }

    /// Splits a full per-row prediction vector by the dataset's PU labels.
    pub fn from_rows(ds: &PuDataset, per_row: &[f64]) -> Result<Self, NtcError> {
        let (mut y_p, mut y_u) = (Vec::new(), Vec::new());
        for (&y, &l) in per_row.iter().zip(ds.pu_labels()) {
            match l {
                PuLabel::Positive => y_p.push(y),
                PuLabel::Unlabeled => y_u.push(y),
            }
        }
        Self::new(y_p, y_u)
    }
}

/// Out-of-fold per-row predictions. Fold `f` trains with seed
/// `derive_seed(cfg.seed, f)`; folds train independently.
pub fn cv_predict_rows(ds: &PuDataset, k: usize, cfg: &NtcConfig) -> Result<Vec<f64>, NtcError> {
    cfg.validate()?;
    let x = ds.feature_matrix()?;
    let folds = split_folds(ds, k, cfg.seed)?;
    type FoldOutput = Result<(Vec<usize>, Vec<f64>), NtcError>;
    let per_fold: Vec<FoldOutput> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = folds.split(fold);
            let fold_cfg = NtcConfig {
                seed: derive_seed(cfg.seed, fold as u64),
                ..cfg.clone()
            };
            let train_labels: Vec<PuLabel> = train.iter().map(|&i| ds.pu_labels()[i]).collect();
            let model = fit_matrix(select(&x, &train).view(), &train_labels, &fold_cfg)?;
            let preds = model.predict(select(&x, &test).view())?;
            Ok((test, preds))
        })
        .collect();
    let mut out = vec![f64::NAN; ds.n_rows()];
    for r in per_fold {
        let (rows, preds) = r?;
        for (i, p) in rows.into_iter().zip(preds) {
            out[i] = p;
        }
    }
    Ok(out)
}

/// Out-of-fold predictions grouped into the positive and unlabeled samples.
pub fn cv_predict(ds: &PuDataset, k: usize, cfg: &NtcConfig) -> Result<NtcPredictions, NtcError> {
    let rows = cv_predict_rows(ds, k, cfg)?;
    NtcPredictions::from_rows(ds, &rows)
}

fn select(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtcSelection {
    pub index: usize,
    pub config: NtcConfig,
    /// Out-of-fold positive-vs-unlabeled ROC-AUC per candidate; `None` when
    /// the candidate failed to train.
    pub roc_auc: Vec<Option<f64>>,
}

/// Picks the candidate with the highest out-of-fold ROC-AUC on the
/// positive-vs-unlabeled task. Ties go to the earliest candidate.
pub fn select_ntc_by_rocauc(
    ds: &PuDataset,
    candidates: &[NtcConfig],
    k: usize,
) -> Result<NtcSelection, NtcError> {
    if candidates.is_empty() {
        return Err(NtcError::NoCandidates);
    }
    let is_pos: Vec<bool> = ds
        .pu_labels()
        .iter()
        .map(|&l| l == PuLabel::Positive)
        .collect();
    let mut first_err = None;
    let roc_auc: Vec<Option<f64>> = candidates
        .iter()
        .map(|cfg| match cv_predict_rows(ds, k, cfg) {
            Ok(rows) => crate::eval::roc_auc(&rows, &is_pos),
            Err(e) => {
                log::warn!("candidate classifier failed: {e}");
                first_err.get_or_insert(e);
                None
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, auc) in roc_auc.iter().enumerate() {
        if let Some(a) = *auc {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
    }
    match best {
        Some((index, _)) => Ok(NtcSelection {
            index,
            config: candidates[index].clone(),
            roc_auc,
        }),
        None => Err(NtcError::AllCandidatesFailed(Box::new(
            first_err.unwrap_or(NtcError::NoCandidates),
        ))),
    }
}
