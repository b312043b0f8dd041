//! Joint training of the classification and masked-reconstruction routes,
//! Adam, and leave-one-subject-out folds.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{combine, combined_loss, cross_entropy, masked_mse, one_hot, LossWeights};
use crate::masking::{MaskError, MaskSpec, MASK_RATIO, PATCH_LEN};
use crate::model::{InputScaler, Model, ModelError, ParamStore, Session, SignalWindow};
use crate::synth::{windowize, LabeledWindow, Recording, SynthError};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training windows")]
    NoData,
    #[error("LOSOCV needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("non-finite loss at step {step}: ce={ce}, mse={mse}")]
    NonFinite { step: usize, ce: f64, mse: f64 },
    #[error("label {label} outside 0..{n_classes}")]
    Label { label: usize, n_classes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mask_ratio: f64,
    pub eta: f64,
    pub patch_len: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    /// Fraction of training windows held in for early stopping.
    pub validation_fraction: f64,
    /// Inverse-frequency class weights in the cross-entropy.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            mask_ratio: MASK_RATIO,
            eta: crate::loss::DEFAULT_ETA,
            patch_len: PATCH_LEN,
            patience: None,
            validation_fraction: 0.1,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, so a bad config can be reported in full
    /// before any training starts.
    pub fn violations(&self, window_len: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            out.push("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            out.push("epsilon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            out.push(format!(
                "mask_ratio must lie in [0, 1], got {}",
                self.mask_ratio
            ));
        }
        if LossWeights::new(self.eta).is_none() {
            out.push(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            ));
        }
        if self.patch_len == 0 || window_len % self.patch_len != 0 {
            out.push(format!(
                "patch_len {} must divide window length {window_len}",
                self.patch_len
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            out.push("validation_fraction must lie in [0, 1)".into());
        }
        if self.patience == Some(0) {
            out.push("patience must be at least 1 when set".into());
        }
        out
    }

    pub fn validate(&self, window_len: usize) -> Result<(), TrainError> {
        let v = self.violations(window_len);
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(v.join("; ")))
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { eta: self.eta }
    }
}

/// Bias-corrected adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Self::new(c.learning_rate, c.beta1, c.beta2, c.epsilon)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter slice in place from its gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a mut [f64], &'a [f64])>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.into_iter().enumerate() {
            assert_eq!(p.len(), g.len(), "parameter and gradient shapes differ");
            if self.m.len() <= i {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
            }
        }
    }

    /// One update of a model's parameters.
    pub fn step_params(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        let pairs = params
            .values_mut()
            .zip(grads)
            .map(|(p, g)| (p.data_mut(), g.data()));
        self.step(pairs);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out: String,
    pub train: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// One fold per subject in sorted id order.
pub fn make_losocv(subject_ids: &[String]) -> Result<FoldPlan, TrainError> {
    let ids: BTreeSet<&String> = subject_ids.iter().collect();
    if ids.len() < 2 {
        return Err(TrainError::TooFewSubjects(ids.len()));
    }
    let folds = ids
        .iter()
        .map(|held| Fold {
            held_out: (*held).clone(),
            train: ids
                .iter()
                .filter(|s| *s != held)
                .map(|s| (*s).clone())
                .collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Training and held-out windows of one fold, selected by subject tag.
pub fn split_fold<'a>(
    windows: &'a [LabeledWindow],
    fold: &Fold,
) -> (Vec<&'a LabeledWindow>, Vec<&'a LabeledWindow>) {
    let train = windows
        .iter()
        .filter(|w| fold.train.contains(&w.subject_id))
        .collect();
    let test = windows
        .iter()
        .filter(|w| w.subject_id == fold.held_out)
        .collect();
    (train, test)
}

/// Loss components of one optimizer step, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
    pub validation_ce: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept when early stopping was active.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Gradients of every parameter plus batch-mean loss components.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub grads: Vec<Tensor>,
    pub ce: f64,
    pub mse: f64,
}

impl BatchGradients {
    pub fn loss(&self, weights: LossWeights) -> f64 {
        combine(self.ce, self.mse, weights)
    }
}

fn class_weights(windows: &[&LabeledWindow], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for w in windows {
        for &l in &w.labels {
            counts[l] += 1;
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                total as f64 / (present * c as f64)
            }
        })
        .collect()
}

/// Forward both routes for every window and accumulate `∂L/∂θ` of the
/// batch-mean loss `η·L_CE + L_MSE`. Inputs must already be scaled.
///
/// A window whose mask hides nothing skips the reconstruction route: its
/// masked MSE is identically zero.
pub fn batch_gradients(
    model: &Model,
    batch: &[(&Tensor, &[usize], &MaskSpec)],
    weights: LossWeights,
    class_weights: Option<&[f64]>,
    dropout_rng: &mut dyn RngCore,
) -> Result<BatchGradients, TrainError> {
    let n_classes = model.config().n_classes;
    let mut grads: Vec<Tensor> = model
        .params()
        .iter()
        .map(|(_, _, t)| Tensor::zeros(t.shape()))
        .collect();
    let (mut ce_sum, mut mse_sum) = (0.0, 0.0);
    let inv_b = 1.0 / batch.len() as f64;

    for &(x, labels, mask) in batch {
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(TrainError::Label { label, n_classes });
        }
        let mut tape = Tape::new();
        let mut s = Session::train(&mut tape, model, dropout_rng);
        let out = model.classify(&mut s, x)?;
        let target = s.tape.constant(one_hot(labels, n_classes, class_weights));
        let ce = cross_entropy(s.tape, out.probs, target)?;
        let (loss, mse) = if mask.n_masked() > 0 {
            let masked = mask.apply_to(x)?;
            let recon = model.reconstruct_window(&mut s, &masked)?;
            let m = s.tape.constant(mask.sample_mask(x.cols()));
            let clean = s.tape.constant(x.clone());
            let mse = masked_mse(s.tape, clean, recon, m)?;
            (combined_loss(s.tape, ce, mse, weights)?, Some(mse))
        } else {
            (s.tape.scale(ce, weights.eta), None)
        };
        let loss = s.tape.scale(loss, inv_b);
        let vars = s.vars().to_vec();
        ce_sum += s.tape.value(ce).data()[0];
        mse_sum += mse.map_or(0.0, |m| s.tape.value(m).data()[0]);
        tape.backward(loss)?;
        for (g, v) in grads.iter_mut().zip(vars) {
            if let Some(d) = tape.grad(v) {
                for (a, b) in g.data_mut().iter_mut().zip(d.data()) {
                    *a += b;
                }
            }
        }
    }
    Ok(BatchGradients {
        grads,
        ce: ce_sum * inv_b,
        mse: mse_sum * inv_b,
    })
}

/// Forward-only `(L_CE, L_MSE)` of one scaled window with dropout off.
pub fn window_loss(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    mask: &MaskSpec,
) -> Result<(f64, f64), TrainError> {
    let n_classes = model.config().n_classes;
    let mut tape = Tape::new();
    let mut s = Session::eval(&mut tape, model);
    let out = model.classify(&mut s, x)?;
    let target = s.tape.constant(one_hot(labels, n_classes, None));
    let ce = cross_entropy(s.tape, out.probs, target)?;
    let mse = if mask.n_masked() > 0 {
        let masked = mask.apply_to(x)?;
        let recon = model.reconstruct_window(&mut s, &masked)?;
        let m = s.tape.constant(mask.sample_mask(x.cols()));
        let clean = s.tape.constant(x.clone());
        let mse = masked_mse(s.tape, clean, recon, m)?;
        s.tape.value(mse).data()[0]
    } else {
        0.0
    };
    Ok((s.tape.value(ce).data()[0], mse))
}

fn validation_ce(model: &Model, windows: &[&LabeledWindow]) -> Result<f64, TrainError> {
    let n_classes = model.config().n_classes;
    let mut total = 0.0;
    for w in windows {
        let probs = model.predict_proba(&w.window)?;
        total += crate::loss::cross_entropy_value(&probs, &one_hot(&w.labels, n_classes, None))?;
    }
    Ok(total / windows.len() as f64)
}

/// Trains `model` in place on `windows`.
///
/// The input scaler is refitted on the training windows first. Each epoch
/// shuffles the windows, and each step draws fresh masks and takes one Adam
/// step on all parameters.
pub fn train_fold(
    model: &mut Model,
    windows: &[LabeledWindow],
    config: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    train_fold_with(model, windows, config, |_| {})
}

/// [`train_fold`] with a callback after every epoch.
pub fn train_fold_with(
    model: &mut Model,
    windows: &[LabeledWindow],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::NoData);
    }
    let window_len = model.config().window_len;
    config.validate(window_len)?;
    let channels = model.config().n_channels;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut all: Vec<&LabeledWindow> = windows.iter().collect();
    let (train, val): (Vec<&LabeledWindow>, Vec<&LabeledWindow>) = if config.patience.is_some() {
        all.shuffle(&mut rng);
        let n_val = ((all.len() as f64 * config.validation_fraction).round() as usize)
            .min(all.len().saturating_sub(1));
        let val = all.split_off(all.len() - n_val);
        (all, val)
    } else {
        (all, Vec::new())
    };

    model.set_scaler(InputScaler::fit(
        train.iter().map(|w| &w.window.samples),
        channels,
    ));
    let scaled: Vec<Tensor> = train
        .iter()
        .map(|w| model.scaler().apply(&w.window.samples))
        .collect();
    let weights = config
        .class_weighting
        .then(|| class_weights(&train, model.config().n_classes));

    let mut adam = Adam::from_config(config);
    let mut history = TrainHistory {
        steps: Vec::new(),
        epochs: Vec::new(),
        best_epoch: None,
        stopped_early: false,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_ce, mut sum_mse, mut n_steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let masks = chunk
                .iter()
                .map(|_| {
                    MaskSpec::sample(window_len, config.patch_len, config.mask_ratio, &mut rng)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let batch: Vec<(&Tensor, &[usize], &MaskSpec)> = chunk
                .iter()
                .zip(&masks)
                .map(|(&i, m)| (&scaled[i], train[i].labels.as_slice(), m))
                .collect();
            let g = batch_gradients(
                model,
                &batch,
                config.weights(),
                weights.as_deref(),
                &mut dropout_rng,
            )?;
            let step = history.steps.len();
            let loss = g.loss(config.weights());
            if !loss.is_finite() || g.grads.iter().any(|t| !t.is_finite()) {
                return Err(TrainError::NonFinite {
                    step,
                    ce: g.ce,
                    mse: g.mse,
                });
            }
            adam.step_params(model.params_mut(), &g.grads);
            history.steps.push(StepRecord {
                step,
                epoch,
                loss,
                ce: g.ce,
                mse: g.mse,
            });
            sum_ce += g.ce;
            sum_mse += g.mse;
            n_steps += 1;
        }
        let (ce, mse) = (sum_ce / n_steps as f64, sum_mse / n_steps as f64);
        let validation_ce = if val.is_empty() {
            None
        } else {
            Some(validation_ce(model, &val)?)
        };
        let record = EpochRecord {
            epoch,
            loss: combine(ce, mse, config.weights()),
            ce,
            mse,
            validation_ce,
        };
        on_epoch(&record);
        history.epochs.push(record);

        if let (Some(patience), Some(v)) = (config.patience, validation_ce) {
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, model.params().clone()));
                history.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(history)
}

/// Per-sample argmax of a `T×C` probability matrix; ties go to the lower
/// class.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let c = probs.cols();
    probs
        .data()
        .chunks_exact(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
                )
                .0
        })
        .collect()
}

/// Labels for each window from unmasked input with dropout off.
pub fn predict(model: &Model, windows: &[SignalWindow]) -> Result<Vec<Vec<usize>>, TrainError> {
    windows
        .iter()
        .map(|w| Ok(argmax_rows(&model.predict_proba(w)?)))
        .collect()
}

/// Labels for a whole recording, cut into non-overlapping windows; the
/// tail that does not fill a window is dropped.
pub fn predict_recording(model: &Model, rec: &Recording) -> Result<Vec<usize>, TrainError> {
    let t = model.config().window_len;
    let windows: Vec<SignalWindow> = windowize(rec, t, t)?
        .into_iter()
        .map(|w| w.window)
        .collect();
    Ok(predict(model, &windows)?.concat())
}
