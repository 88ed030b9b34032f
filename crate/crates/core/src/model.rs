//! End-to-end assembly: heatmap generator feeding the residual classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess_to, Label, SampleRecord, INPUT_SIZE};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, HeatmapGenerator};
use crate::graph::{Eval, Graph};
use crate::mode::{apply_bn_updates, BnUpdate, Mode};
use crate::params::ParamStore;
use crate::resnet::{ClassifierConfig, SlimResNet, StageConfig};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Samples scored per eager forward pass.
const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressNetConfig {
    /// Side of the square network input.
    pub input_size: usize,
    pub generator: GeneratorConfig,
    pub classifier: ClassifierConfig,
}

impl Default for ExpressNetConfig {
    fn default() -> Self {
        ExpressNetConfig {
            input_size: INPUT_SIZE,
            generator: GeneratorConfig::default(),
            classifier: ClassifierConfig::slim(),
        }
    }
}

impl ExpressNetConfig {
    /// Full-size model: 512 × 512 input, f = 32, slim ResNet-50 widths.
    pub fn full() -> Self {
        Self::default()
    }

    /// Reduced widths and a 128 × 128 input so a CPU can train it in minutes.
    pub fn desk() -> Self {
        ExpressNetConfig {
            input_size: 128,
            generator: GeneratorConfig {
                encoder_channels: [4, 8],
                decoder_channels: [8, 8],
                reduction: 2,
                ..GeneratorConfig::default()
            },
            classifier: ClassifierConfig {
                stages: StageConfig {
                    repetitions: [2, 2, 4, 2],
                    widths: [(4, 16), (8, 32), (16, 64), (32, 128)],
                    stem_channels: 8,
                    stem_kernel: 7,
                },
                head: [32, 16],
                in_channels: 1,
            },
        }
    }

    /// Smallest useful model, for gradient checks at 32 × 32.
    pub fn micro() -> Self {
        ExpressNetConfig {
            input_size: 32,
            generator: GeneratorConfig {
                encoder_channels: [2, 4],
                decoder_channels: [4, 4],
                reduction: 2,
                ..GeneratorConfig::default()
            },
            classifier: ClassifierConfig {
                stages: StageConfig {
                    repetitions: [1, 1, 1, 1],
                    widths: [(2, 4), (2, 4), (2, 6), (3, 8)],
                    stem_channels: 3,
                    stem_kernel: 3,
                },
                head: [6, 4],
                in_channels: 1,
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "micro" => Some(Self::micro()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

/// Output of a training-mode forward/backward pass.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressNet<T> {
    pub config: ExpressNetConfig,
    pub params: ParamStore<T>,
    /// `live` iff score ≥ threshold.
    pub threshold: f64,
}

impl<T: Scalar> ExpressNet<T> {
    /// Fresh model with He-normal weights drawn from `seed`.
    pub fn new(config: ExpressNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        HeatmapGenerator::new(config.generator.clone()).init(&mut params, &mut rng);
        SlimResNet::new(config.classifier.clone()).init(&mut params, &mut rng);
        ExpressNet { config, params, threshold: 0.5 }
    }

    /// Wraps loaded weights after checking every name and shape against `config`.
    pub fn from_params(config: ExpressNetConfig, loaded: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0);
        model.params.check_compatible(&loaded)?;
        for (name, t) in model.params.iter_mut() {
            let src = loaded.get(name)?;
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(model)
    }

    pub fn generator(&self) -> HeatmapGenerator {
        HeatmapGenerator::new(self.config.generator.clone())
    }

    pub fn classifier(&self) -> SlimResNet {
        SlimResNet::new(self.config.classifier.clone())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.input_size;
        match shape {
            [_, 1, h, w] if *h == s && *w == s => Ok(()),
            _ => Err(Error::shape(
                "forward",
                format!("expected a preprocessed N×1×{s}×{s} batch, got {shape:?}"),
            )),
        }
    }

    /// Generator then classifier; the classifier sees only the heatmap.
    pub fn forward_graph<'p, G: Graph<'p, T>>(
        &'p self,
        g: &mut G,
        x: &G::Value,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<G::Value> {
        self.check_input(g.shape(x))?;
        let heatmap = self.generator().forward(g, &self.params, x)?;
        self.classifier().classify(g, &self.params, &heatmap, mode, updates)
    }

    /// Eval-mode scores `N×1` for a preprocessed batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Eval;
        let x = g.constant(batch.clone());
        let y = self.forward_graph(&mut g, &x, Mode::Eval, &mut Vec::new())?;
        Ok(y.into_owned())
    }

    pub fn heatmap(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch.shape())?;
        let mut g = Eval;
        let x = g.constant(batch.clone());
        Ok(self.generator().forward(&mut g, &self.params, &x)?.into_owned())
    }

    /// Records a training-mode pass, back-propagates the mean BCE loss, stores
    /// gradients in the parameter grad slots and updates batchnorm running statistics.
    pub fn train_step_grads(&mut self, batch: &Tensor<T>, labels: &Tensor<T>) -> Result<StepOutput> {
        let mut updates = Vec::new();
        let (loss, scores, grads) = {
            let mut tape = Tape::new();
            let x = tape.constant(batch.clone());
            let y = tape.constant(labels.clone());
            let scores = self.forward_graph(&mut tape, &x, Mode::Train, &mut updates)?;
            let loss = tape.bce_loss(&scores, &y)?;
            tape.backward(loss)?;
            let loss_value = tape.tensor(loss).item().as_f64();
            let score_values = tape.tensor(scores).data().iter().map(|s| s.as_f64()).collect();
            (loss_value, score_values, tape.into_param_grads())
        };
        self.params.set_grads(grads)?;
        apply_bn_updates(&mut self.params, &updates)?;
        Ok(StepOutput { loss, scores })
    }

    /// Preprocesses and scores samples in eval mode, in batches of eight.
    pub fn score_samples(&self, samples: &[SampleRecord]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let inputs: Vec<Tensor<T>> = chunk.iter().map(|s| preprocess_to(&s.image, self.config.input_size)).collect();
            let batch = Tensor::stack_batch(&inputs.iter().collect::<Vec<_>>())?;
            out.extend(self.forward(&batch)?.data().iter().map(|s| s.as_f64()));
        }
        Ok(out)
    }

    pub fn predict(&self, sample: &SampleRecord) -> Result<Prediction> {
        let score = self.score_samples(std::slice::from_ref(sample))?[0];
        Ok(predict_from_score(score, self.threshold))
    }
}

pub fn predict_from_score(score: f64, threshold: f64) -> Prediction {
    Prediction { label: Label::from_score(score, threshold), score }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_score_identically() {
        let model = ExpressNet::<f32>::new(ExpressNetConfig::micro(), 4);
        let x = Tensor::from_fn([1, 1, 32, 32], |i| ((i * 37) % 101) as f32 / 101.0);
        let batch = Tensor::stack_batch(&[&x, &x]).unwrap();
        let s = model.forward(&batch).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.data()[0], s.data()[1]);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(model.forward(&batch).unwrap(), s);
    }

    #[test]
    fn rejects_unpreprocessed_input() {
        let model = ExpressNet::<f32>::new(ExpressNetConfig::micro(), 4);
        assert!(model.forward(&Tensor::zeros([1, 1, 30, 30])).is_err());
        assert!(model.forward(&Tensor::zeros([1, 3, 32, 32])).is_err());
    }

    #[test]
    fn threshold_tie_goes_live() {
        assert_eq!(predict_from_score(0.7, 0.5).label, Label::Live);
        assert_eq!(predict_from_score(0.5, 0.5).label, Label::Live);
        assert_eq!(predict_from_score(0.49, 0.5).label, Label::Spoof);
    }

    #[test]
    fn train_step_populates_every_gradient_and_running_stats() {
        let mut model = ExpressNet::<f32>::new(ExpressNetConfig::micro(), 9);
        let a = Tensor::from_fn([1, 1, 32, 32], |i| (i % 7) as f32 / 7.0);
        let b = Tensor::from_fn([1, 1, 32, 32], |i| (i % 5) as f32 / 5.0);
        let batch = Tensor::stack_batch(&[&a, &b]).unwrap();
        let labels = Tensor::new([2, 1], vec![1.0, 0.0]).unwrap();
        let before = model.params.get("cls.stem.bn.running_mean").unwrap().clone();
        let out = model.train_step_grads(&batch, &labels).unwrap();
        assert!(out.loss.is_finite());
        for (name, t) in model.params.trainable() {
            let g = t.grad.as_ref().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(g.iter().all(|v| v.is_finite()), "{name}");
        }
        assert_ne!(model.params.get("cls.stem.bn.running_mean").unwrap(), &before);
    }
}
