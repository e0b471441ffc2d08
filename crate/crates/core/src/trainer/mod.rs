//! Mini-batch Adam training with validation-loss early stopping.

mod checkpoint;
mod split;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use split::{split_dataset, split_sizes, Split, SplitFractions};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState};
use crate::detsim::{DatasetEntry, PixelMap};
use crate::model::{Mode, Model, ModelError};

/// Validation loss must drop below the best so far by more than this.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("no training samples")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, batch {batch}: {what} = {value}")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: &'static str,
        value: f64,
    },
    #[error("{file}: format error at offset {offset}: {reason}")]
    Format { file: String, offset: usize, reason: String },
    #[error("{file}: incompatible checkpoint: {reason}")]
    Version { file: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Keys missing from a config file take the desk values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "TrainConfig::desk")]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split: SplitFractions,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            batch_size: 16,
            max_epochs: 300,
            patience: 10,
            split: SplitFractions::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the 64 x 64 toy dataset.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut errs = self.split.violations();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            errs.push("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            errs.push("max epochs must be at least 1".into());
        }
        if self.patience == 0 {
            errs.push("patience must be at least 1".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(errs))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Labelled `(XZ, YZ)` pairs borrowed from a loaded dataset.
#[derive(Clone, Debug, Default)]
pub struct Samples<'a> {
    pub pairs: Vec<(&'a PixelMap, &'a PixelMap)>,
    pub labels: Vec<usize>,
}

impl<'a> Samples<'a> {
    pub fn from_entries(entries: &'a [DatasetEntry], indices: &[usize]) -> Self {
        Self {
            pairs: indices.iter().map(|&i| (&entries[i].xz, &entries[i].yz)).collect(),
            labels: indices.iter().map(|&i| entries[i].record.class.index()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Produces `(loss, accuracy)` on held-out data after each epoch.
pub trait Validator {
    fn validate(&mut self, model: &Model, epoch: usize) -> Result<(f64, f64), TrainError>;
}

/// Eval-mode cross-entropy and accuracy on a fixed sample set.
pub struct SampleValidator<'a>(pub Samples<'a>);

impl Validator for SampleValidator<'_> {
    fn validate(&mut self, model: &Model, _epoch: usize) -> Result<(f64, f64), TrainError> {
        Ok(model.evaluate(&self.0.pairs, &self.0.labels)?)
    }
}

/// Patience counter over validation losses.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = val_loss < self.best - IMPROVEMENT_TOLERANCE;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

/// Wall-clock time is ignored so identical runs compare equal.
impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.val_accuracy.to_bits() == other.val_accuracy.to_bits()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
}

impl TrainHistory {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serialises") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| TrainError::io(path, e))
    }
}

/// Trains with Adam, keeping the parameters from the epoch with the lowest
/// validation loss.
pub fn train(
    model: Model,
    data: &Samples<'_>,
    validator: &mut dyn Validator,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    train_with(model, data, validator, config, &mut |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    mut model: Model,
    data: &Samples<'_>,
    validator: &mut dyn Validator,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory), TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam(), model.parameters());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut early_stopped = false;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<_> = batch.iter().map(|&i| data.pairs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let mode = Mode::Train {
                dropout_seed: rng.next_u64(),
            };
            let (loss, grads) = model.loss_and_gradients(&pairs, &labels, mode)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    what: "train loss",
                    value: loss,
                });
            }
            if let Some(bad) = grads.iter().flat_map(|g| g.data()).find(|v| !v.is_finite()) {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    what: "gradient",
                    value: *bad,
                });
            }
            adam.step(model.parameters_mut(), &grads)
                .map_err(|e| TrainError::Model(e.into()))?;
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_accuracy) = validator.validate(&model, epoch)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                batch: 0,
                what: "validation loss",
                value: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            val_loss,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = model.clone();
        }
        if decision.stop {
            early_stopped = true;
            break;
        }
    }
    let history = TrainHistory {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        early_stopped,
        epochs,
    };
    Ok((best, history))
}
