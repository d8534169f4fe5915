//! The epoch loop with validation, model selection and early stopping.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{
    load_split, AugmentConfig, Batches, DatasetManifest, ImageBatch, Sample, Split, DEFAULT_RESCALE,
};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Forward, Mode, Model};
use crate::rng;

use super::checkpoint::save_checkpoint;
use super::evaluate::{argmax, evaluate};
use super::metrics::EvalReport;
use super::optim::{Optimizer, OptimizerKind};

// stream tags for seed derivation
const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_AUGMENT: u64 = 3;
const TAG_DROPOUT: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    /// Where the best model is written whenever it improves.
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many epochs without a better validation result.
    pub patience: Option<usize>,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::SqueezeNet,
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::default(),
            lr: 1e-3,
            seed: 0,
            checkpoint: None,
            patience: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn new(arch: Architecture) -> Self {
        TrainConfig {
            arch,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Optimizer::<f32>::new(self.optimizer, self.lr).map(|_| ())
    }

    /// Augmentation settings for training batches, if enabled.
    pub fn augment_config(&self) -> Option<AugmentConfig> {
        self.augment.then(|| {
            AugmentConfig::default().with_seed(rng::derive_seed(self.seed, &[TAG_AUGMENT]))
        })
    }

    pub fn init_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[TAG_INIT])
    }

    pub fn shuffle_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[TAG_SHUFFLE])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// One `epoch,train_loss,train_acc,val_loss,val_acc` line per epoch.
    pub fn to_log(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            );
        }
        s
    }

    pub fn parse_log(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("history line {}: {line:?}", i + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_loss: num(f[3])?,
                val_acc: num(f[4])?,
            });
        }
        Ok(History { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_log()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

pub struct TrainOutcome {
    /// Best model by validation accuracy, then validation loss.
    pub model: Model<f32>,
    pub history: History,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub stopped_early: bool,
}

/// Owns a model and its optimizer state.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model<f32>,
    opt: Optimizer<f32>,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::build(cfg.arch, cfg.init_seed())?;
        Trainer::with_model(cfg, model)
    }

    pub fn with_model(cfg: TrainConfig, model: Model<f32>) -> Result<Self> {
        cfg.validate()?;
        let opt = Optimizer::new(cfg.optimizer, cfg.lr)?;
        Ok(Trainer {
            cfg,
            model,
            opt,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    /// Forward, loss, backward and one optimizer update on `batch`.
    ///
    /// A non-finite loss aborts before any parameter is touched.
    pub fn step(&mut self, batch: &ImageBatch, batch_index: usize) -> Result<StepOutcome> {
        let dropout_seed = rng::derive_seed(self.cfg.seed, &[TAG_DROPOUT, self.opt.steps()]);
        let (loss, correct, grads) = {
            let mut f = Forward::new(self.model.store(), Mode::Train, dropout_seed);
            let x = f.input(batch.pixels.clone());
            let logits = self.model.forward(&mut f, x)?;
            let loss = f.tape.softmax_cross_entropy(logits, &batch.labels)?;
            let value = f.tape.value(loss).item().expect("scalar loss") as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: value,
                    epoch: self.epoch,
                    batch: batch_index,
                    lr: self.cfg.lr,
                });
            }
            let out = f.tape.value(logits);
            let k = out.shape()[1];
            let correct = out
                .data()
                .chunks(k)
                .zip(&batch.labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            f.tape.backward(loss)?;
            (value, correct, f.param_grads())
        };
        let store = self.model.store_mut();
        store.zero_grads();
        store.accumulate_grads(grads)?;
        self.opt.step(store)?;
        Ok(StepOutcome {
            loss,
            correct,
            count: batch.len(),
        })
    }

    /// One pass over `train`; returns mean loss and accuracy.
    pub fn run_epoch(&mut self, train: &Batches) -> Result<(f64, f64)> {
        let (mut loss, mut correct, mut count) = (0.0, 0usize, 0usize);
        for (b, batch) in train.epoch(self.epoch).enumerate() {
            let s = self.step(&batch?, b)?;
            loss += s.loss * s.count as f64;
            correct += s.correct;
            count += s.count;
        }
        self.epoch += 1;
        Ok((loss / count as f64, correct as f64 / count as f64))
    }

    /// Trains for up to `cfg.epochs`, validating after each epoch.
    pub fn fit(self, train: &Batches, val: &[Sample]) -> Result<TrainOutcome> {
        self.fit_with(train, val, |_| {})
    }

    /// [`Trainer::fit`] with a callback after every epoch.
    pub fn fit_with(
        mut self,
        train: &Batches,
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainOutcome> {
        if val.is_empty() {
            return Err(Error::Contract(
                "training needs a non-empty validation split".into(),
            ));
        }
        let mut history = History::default();
        let mut best: Option<(Model<f32>, EvalReport, usize)> = None;
        let mut stale = 0;
        let mut stopped_early = false;
        for epoch in 1..=self.cfg.epochs {
            let (train_loss, train_acc) = self.run_epoch(train)?;
            let report = evaluate(&self.model, val)?;
            let record = EpochRecord {
                epoch,
                train_loss,
                train_acc,
                val_loss: report.mean_loss,
                val_acc: report.accuracy,
            };
            on_epoch(&record);
            history.records.push(record);
            let improved = match &best {
                None => true,
                Some((_, b, _)) => {
                    report.accuracy > b.accuracy
                        || (report.accuracy == b.accuracy && report.mean_loss < b.mean_loss)
                }
            };
            if improved {
                if let Some(path) = &self.cfg.checkpoint {
                    save_checkpoint(&self.model, path)?;
                }
                best = Some((self.model.clone(), report, epoch));
                stale = 0;
            } else {
                stale += 1;
                if self.cfg.patience.is_some_and(|p| stale >= p) {
                    stopped_early = epoch < self.cfg.epochs;
                    break;
                }
            }
        }
        let (model, best_val, best_epoch) = best.expect("at least one epoch ran");
        Ok(TrainOutcome {
            model,
            history,
            best_epoch,
            best_val,
            stopped_early,
        })
    }
}

/// Loads the train and validation splits and runs [`Trainer::fit`].
pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<TrainOutcome> {
    train_with(cfg, manifest, |_| {})
}

pub fn train_with(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    manifest.validate()?;
    let aug = cfg.augment_config();
    let rescale = aug.map(|a| a.rescale).unwrap_or(DEFAULT_RESCALE);
    let train_samples = load_split(manifest, Split::Train, rescale)?;
    let val_samples = load_split(manifest, Split::Val, rescale)?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::Contract(format!(
            "manifest needs train and val images, has {} and {}",
            train_samples.len(),
            val_samples.len()
        )));
    }
    let batches = Batches::for_split(
        train_samples,
        Split::Train,
        cfg.batch_size,
        aug,
        cfg.shuffle_seed(),
    )?;
    Trainer::new(cfg.clone())?.fit_with(&batches, &val_samples, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(Trainer::new(cfg).is_err());
    }

    #[test]
    fn history_log_round_trip() {
        let h = History {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: 0.25,
                val_acc: 1.0,
            }],
        };
        assert_eq!(h.to_log(), "1,0.5,0.75,0.25,1\n");
        assert_eq!(History::parse_log(&h.to_log()).unwrap(), h);
        assert!(History::parse_log("epoch,train_loss\n").is_err());
    }
}
