//! Adam optimization over patch datasets with checkpointing and resume.

mod adam;
mod checkpoint;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{NormStats, PatchDataset};
use crate::error::{Error, Result};
use crate::model::{loss_l2, Mode, StnModel, BN_MOMENTUM};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// save every k epochs; 0 saves only at the end
    pub checkpoint_every: usize,
    /// stop after this many epochs without a validation improvement
    pub patience: Option<usize>,
    /// global gradient-norm cap
    pub clip_norm: Option<f64>,
    /// cap on batches per epoch
    pub max_batches: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 5e-4,
            seed: 0,
            checkpoint_every: 1,
            patience: None,
            clip_norm: Some(10.0),
            max_batches: None,
        }
    }
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v.trim() {
        "" | "none" | "off" => Ok(None),
        s => s
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl TrainConfig {
    pub const KEYS: [&'static str; 8] = [
        "epochs",
        "batch_size",
        "lr",
        "seed",
        "checkpoint_every",
        "patience",
        "clip_norm",
        "max_batches",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Config(format!("{key}: cannot parse '{value}'"));
        match key {
            "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
            "lr" => self.lr = v.parse().map_err(|_| bad())?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "checkpoint_every" => self.checkpoint_every = v.parse().map_err(|_| bad())?,
            "patience" => self.patience = parse_opt(key, v)?,
            "clip_norm" => self.clip_norm = parse_opt(key, v)?,
            "max_batches" => self.max_batches = parse_opt(key, v)?,
            _ => return Err(Error::Config(format!("unknown train key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let vals = [
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.seed.to_string(),
            self.checkpoint_every.to_string(),
            opt_str(&self.patience),
            opt_str(&self.clip_norm),
            opt_str(&self.max_batches),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and ≥ 0", self.lr)));
        }
        if self.patience == Some(0) || self.max_batches == Some(0) {
            return Err(Error::Config("patience and max_batches must be positive when set".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Writes `epoch,train_loss,val_loss` rows.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of [`Trainer::fit`].
#[derive(Clone, Debug)]
pub struct FitSummary {
    pub best_epoch: usize,
    pub best_val: f64,
    pub final_val: f64,
    /// final validation loss minus the best one
    pub gap: f64,
    pub stopped_early: bool,
    /// state at the best validation epoch of this run
    pub best: Option<Box<Trainer>>,
}

/// Complete training state: everything a checkpoint stores.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: StnModel<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    pub stats: NormStats,
    pub history: Vec<EpochRecord>,
    /// completed epochs
    pub epoch: usize,
    pub step: u64,
    /// free-form manifest entries carried through checkpoints
    pub meta: Vec<(String, String)>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl Trainer {
    pub fn new(model: StnModel<f32>, config: TrainConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: AdamState::new(&model.params),
            model,
            config,
            stats,
            history: Vec::new(),
            epoch: 0,
            step: 0,
            meta: Vec::new(),
        })
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn train_step(&mut self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
        let tape = Tape::new();
        let p = self.model.params.bind(&tape);
        let out = self.model.forward(&p, x, Mode::Train)?;
        let loss = loss_l2(&out.prediction, y)?;
        let value = Scalar::to_f64(loss.value().item());
        if !value.is_finite() {
            return Err(Error::Training(format!(
                "loss is {value} at epoch {} step {}",
                self.epoch + 1,
                self.step + 1
            )));
        }
        let grads = tape.backward(loss)?;
        let mut g = p.grads(&grads);
        if let Some(c) = self.config.clip_norm {
            clip_global_norm(&mut g, c);
        }
        self.adam.step(&mut self.model.params, &g, &self.config.adam())?;
        self.model.update_running_stats(&out.batch_stats, BN_MOMENTUM);
        self.step += 1;
        Ok(value)
    }

    /// Sample order of the next epoch.
    pub fn epoch_order(&self, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut epoch_rng(self.config.seed, self.epoch));
        order
    }

    /// Runs one epoch over shuffled batches and returns the sample-weighted
    /// mean training loss. Does not advance `epoch`.
    pub fn run_epoch(&mut self, train: &PatchDataset) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        let order = self.epoch_order(train.len());
        let limit = self.config.max_batches.unwrap_or(usize::MAX);
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in order.chunks(self.config.batch_size).take(limit) {
            let (x, y) = train.batch(idx)?;
            total += self.train_step(&x, &y)? * idx.len() as f64;
            count += idx.len();
        }
        Ok(total / count as f64)
    }

    /// Infer-mode mean squared error; touches no state.
    pub fn validate(&self, ds: &PatchDataset) -> Result<f64> {
        evaluate_loss(&self.model, ds, self.config.batch_size)
    }

    /// Trains until `config.epochs` epochs are complete (resuming from
    /// `self.epoch`). `on_epoch` sees the state after each finished epoch.
    /// On a non-finite loss or gradient the state rolls back to the end of
    /// the last finished epoch and a training error is returned.
    pub fn fit(
        &mut self,
        train: &PatchDataset,
        val: &PatchDataset,
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<FitSummary> {
        if val.is_empty() {
            return Err(Error::Config("validation dataset is empty".into()));
        }
        let mut last_good = self.clone();
        let mut best: Option<Box<Trainer>> = None;
        let mut best_val = self.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        let mut since_best = 0usize;
        let mut stopped_early = false;
        while self.epoch < self.config.epochs {
            let outcome = self.run_epoch(train).and_then(|tl| {
                let vl = self.validate(val)?;
                if vl.is_finite() {
                    Ok((tl, vl))
                } else {
                    Err(Error::Training(format!("validation loss is {vl} at epoch {}", self.epoch + 1)))
                }
            });
            let (train_loss, val_loss) = match outcome {
                Ok(v) => v,
                Err(Error::Training(msg)) => {
                    *self = last_good;
                    return Err(Error::Training(format!(
                        "{msg}; state restored to epoch {}",
                        self.epoch
                    )));
                }
                Err(e) => return Err(e),
            };
            self.epoch += 1;
            self.history.push(EpochRecord {
                epoch: self.epoch,
                train_loss,
                val_loss,
            });
            log::info!(
                "epoch {}/{} train {train_loss:.6} val {val_loss:.6}",
                self.epoch,
                self.config.epochs
            );
            if val_loss < best_val {
                best_val = val_loss;
                since_best = 0;
                best = Some(Box::new(self.clone()));
            } else {
                since_best += 1;
            }
            on_epoch(self)?;
            last_good = self.clone();
            if self.config.patience.is_some_and(|p| since_best >= p) {
                stopped_early = true;
                break;
            }
        }
        let final_val = self.history.last().map_or(f64::NAN, |r| r.val_loss);
        let best_epoch = self
            .history
            .iter()
            .filter(|r| r.val_loss == best_val)
            .map(|r| r.epoch)
            .next()
            .unwrap_or(0);
        Ok(FitSummary {
            best_epoch,
            best_val,
            final_val,
            gap: final_val - best_val,
            stopped_early,
            best,
        })
    }
}

/// Sample-weighted infer-mode MSE over a dataset in normalized units.
pub fn evaluate_loss<T: Scalar>(model: &StnModel<T>, ds: &PatchDataset, batch: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = ds.batch(chunk)?;
        let pred = model.predict(&x.cast())?;
        total += pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, t)| (Scalar::to_f64(*p) - *t as f64).powi(2))
            .sum::<f64>();
    }
    Ok(total / (ds.len() * ds.horizon) as f64)
}
