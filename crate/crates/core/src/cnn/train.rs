//! Mini-batch training loop with seeded shuffling and early stopping.

use super::adam::{AdamConfig, AdamState};
use super::loss::mae_loss;
use super::model::CnnModel;
use super::tensor::Scalar;
use crate::dataset::{GridConfig, Sample};
use crate::rng::{split, SplitMix64};
use crate::{Error, Result};

/// Arithmetic used for training. Checkpoints always store f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 64, adam: AdamConfig::default(), seed: 0, patience: 5, precision: Precision::F64 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be positive".into()));
        }
        if !(a.lr > 0.0 && a.eps > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config(format!("invalid optimiser settings {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub train_mae: Vec<f64>,
    /// Empty when no validation set was given.
    pub val_mae: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean absolute error in normalised units over `samples`.
pub fn evaluate_mae<F: Scalar>(model: &CnnModel<F>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = model.batch(chunk.iter().map(|s| &s.features))?;
        let out = model.forward(&x)?;
        let (loss, _) = mae_loss(&out, &targets(chunk.iter()));
        sum += loss * chunk.len() as f64;
    }
    Ok(sum / samples.len() as f64)
}

/// Labels as a `2 × batch` buffer.
fn targets<'a, F: Scalar>(samples: impl ExactSizeIterator<Item = &'a Sample>) -> Vec<F> {
    let n = samples.len();
    let mut t = vec![F::zero(); 2 * n];
    for (i, s) in samples.enumerate() {
        t[i] = F::from_f64(s.label[0]);
        t[n + i] = F::from_f64(s.label[1]);
    }
    t
}

/// One optimiser step on a batch; returns the batch loss before the step.
pub fn train_step<F: Scalar>(model: &mut CnnModel<F>, adam: &mut AdamState<F>, batch: &[&Sample]) -> Result<f64> {
    let x = model.batch(batch.iter().map(|s| &s.features))?;
    let (out, caches) = model.net.forward_train(&x)?;
    let (loss, grad) = mae_loss(&out, &targets(batch.iter().copied()));
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {loss}")));
    }
    let (_, grads) = model.net.backward(&caches, grad)?;
    adam.step(&mut model.net.params_mut(), &grads);
    if !model.net.all_finite() {
        return Err(Error::Divergence("non-finite parameters after an optimiser step".into()));
    }
    Ok(loss)
}

/// Trains a freshly initialised model. Initial weights come from
/// `split(seed, 0)` and the shuffle stream from `split(seed, 1)`.
pub fn train<F: Scalar>(
    train_set: &[Sample],
    val_set: &[Sample],
    grid: &GridConfig,
    cfg: &TrainConfig,
) -> Result<(CnnModel<F>, History)> {
    let model = CnnModel::new(grid, split(cfg.seed, 0))?;
    train_from(model, train_set, val_set, cfg)
}

/// Continues training `model`. With a validation set the parameters of the
/// best validation epoch are returned; without one, the final parameters.
pub fn train_from<F: Scalar>(
    mut model: CnnModel<F>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(CnnModel<F>, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut adam = AdamState::new(cfg.adam, model.net.param_sizes());
    let mut rng = SplitMix64::new(split(cfg.seed, 1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, CnnModel<F>)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            sum += train_step(&mut model, &mut adam, &batch)? * batch.len() as f64;
        }
        history.train_mae.push(sum / train_set.len() as f64);
        if val_set.is_empty() {
            history.best_epoch = epoch;
            continue;
        }
        let val = evaluate_mae(&model, val_set, cfg.batch_size)?;
        if !val.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.val_mae.push(val);
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, model.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.map_or(model, |(_, m)| m), history))
}
