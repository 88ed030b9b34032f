//! Seeded mini-batch training with resumable checkpoints.

mod optim;
mod persist;

pub use optim::{optimizer_step, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use persist::{decode_weights, encode_weights, load_weights, save_weights, MAGIC, VERSION};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess_to, Dataset, Label};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{ExpressNet, ExpressNetConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mixed into the seed for the batch-order generator so it never coincides
/// with the initialisation stream.
const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Write a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 250,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train", format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train", "batch size must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("train", "epochs must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Fraction correct, measured on the train-mode scores seen during the epoch.
    pub train_acc: f64,
    pub val_ace: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_acc,val_ace\n");
        for r in &self.records {
            let val = r.val_ace.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.train_acc, val));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn total_steps(&self) -> usize {
        self.records.iter().map(|r| r.steps).sum()
    }
}

/// Index groups for one epoch. A trailing batch of one sample is folded into
/// the previous batch because batch statistics need at least two samples.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Sidecar metadata stored next to a checkpoint's tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub step: u64,
    pub train: TrainConfig,
    pub model: ExpressNetConfig,
    pub history: TrainHistory,
}

const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

pub fn checkpoint_paths(dir: &Path, epoch: usize) -> (PathBuf, PathBuf) {
    let stem = format!("epoch_{epoch:04}");
    (dir.join(format!("{stem}.exnw")), dir.join(format!("{stem}.json")))
}

pub struct Trainer<T: Scalar> {
    pub model: ExpressNet<T>,
    pub config: TrainConfig,
    pub state: OptimizerState<T>,
    pub history: TrainHistory,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ExpressNet<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { model, config, state: OptimizerState::new(), history: TrainHistory::default() })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.records.len()
    }

    /// Runs one epoch over preprocessed inputs and returns its record.
    pub fn train_epoch(&mut self, inputs: &[Tensor<T>], labels: &[Label], validation: Option<&Dataset>) -> Result<EpochRecord> {
        let epoch = self.epochs_done() + 1;
        let batches = batch_order(inputs.len(), self.config.batch_size, self.config.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in &batches {
            let x = Tensor::stack_batch(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y = Tensor::new([batch.len(), 1], batch.iter().map(|&i| T::of(labels[i].value())).collect())?;
            self.model.params.zero_grads();
            let out = self.model.train_step_grads(&x, &y)?;
            optimizer_step(&mut self.model.params, &mut self.state, self.config.optimizer, self.config.learning_rate)?;
            loss_sum += out.loss * batch.len() as f64;
            correct += batch
                .iter()
                .zip(&out.scores)
                .filter(|&(&i, &s)| Label::from_score(s, self.model.threshold) == labels[i])
                .count();
        }
        let val_ace = match validation {
            Some(v) => Some(evaluate(&self.model, v, self.model.threshold)?.ace),
            None => None,
        };
        let n = inputs.len() as f64;
        let record = EpochRecord { epoch, loss: loss_sum / n, train_acc: correct as f64 / n, val_ace, steps: batches.len() };
        self.history.records.push(record.clone());
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete, writing periodic and
    /// final checkpoints to `checkpoint_dir` when given.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        validation: Option<&Dataset>,
        checkpoint_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        dataset.require_both_classes()?;
        let size = self.model.config.input_size;
        let inputs: Vec<Tensor<T>> = dataset.samples().iter().map(|s| preprocess_to(&s.image, size)).collect();
        let labels = dataset.labels();
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.epochs_done() < self.config.epochs {
            let record = self.train_epoch(&inputs, &labels, validation)?;
            on_epoch(&record);
            let every = self.config.checkpoint_every;
            let last = record.epoch == self.config.epochs;
            if let Some(dir) = checkpoint_dir {
                if last || (every > 0 && record.epoch % every == 0) {
                    self.save_checkpoint(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let (tensors, meta) = checkpoint_paths(dir, self.epochs_done());
        let mut store = ParamStore::new();
        for (name, t) in self.model.params.iter() {
            store.insert(name, t.clone());
            for (prefix, moments) in [(FIRST_MOMENT, &self.state.first_moment), (SECOND_MOMENT, &self.state.second_moment)] {
                if let Some(m) = moments.get(name) {
                    store.insert(format!("{prefix}{name}"), Tensor::new(t.shape().to_vec(), m.clone())?);
                }
            }
        }
        save_weights(&store, &tensors)?;
        let info = CheckpointMeta {
            epoch: self.epochs_done(),
            step: self.state.step,
            train: self.config.clone(),
            model: self.model.config.clone(),
            history: self.history.clone(),
        };
        let json = serde_json::to_string_pretty(&info).expect("metadata serializes");
        std::fs::write(&meta, json).map_err(|e| Error::io(&meta, e))?;
        Ok((tensors, meta))
    }

    /// Restores model, optimizer moments and history. `epochs` in the stored
    /// config is replaced by `target_epochs` when given.
    pub fn resume(tensors: &Path, meta: &Path, target_epochs: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(meta).map_err(|e| Error::io(meta, e))?;
        let info: CheckpointMeta =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: meta.to_path_buf(), source })?;
        let mut stored: ParamStore<T> = load_weights(tensors)?;
        let mut state = OptimizerState::new();
        state.step = info.step;
        let names: Vec<String> = stored.iter().map(|(n, _)| n.to_string()).collect();
        let mut model_params = ParamStore::new();
        for name in names {
            let t = stored.get_mut(&name)?.clone();
            if let Some(p) = name.strip_prefix(FIRST_MOMENT) {
                state.first_moment.insert(p.to_string(), t.into_data());
            } else if let Some(p) = name.strip_prefix(SECOND_MOMENT) {
                state.second_moment.insert(p.to_string(), t.into_data());
            } else {
                model_params.insert(name, t);
            }
        }
        let model = ExpressNet::from_params(info.model, model_params)?;
        let mut config = info.train;
        if let Some(e) = target_epochs {
            config.epochs = e;
        }
        config.validate()?;
        if info.history.records.len() != info.epoch {
            return Err(Error::Malformed(format!("{}: history does not match epoch {}", meta.display(), info.epoch)));
        }
        Ok(Trainer { model, config, state, history: info.history })
    }
}

/// Trains a freshly seeded model on `dataset`.
pub fn train<T: Scalar>(
    model_config: ExpressNetConfig,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    config: TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(ExpressNet<T>, TrainHistory)> {
    let model = ExpressNet::new(model_config, config.seed);
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(dataset, validation, checkpoint_dir, |_| {})?;
    Ok((trainer.model, trainer.history))
}

/// Eval-mode report used for end-of-training summaries.
pub fn final_report<T: Scalar>(model: &ExpressNet<T>, dataset: &Dataset) -> Result<EvalReport> {
    evaluate(model, dataset, model.threshold)
}
