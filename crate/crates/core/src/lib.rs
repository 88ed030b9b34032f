//! Fingerprint liveness detection: a learned heatmap front end feeding a
//! slim bottleneck residual classifier, with a small reverse-mode autodiff
//! engine, seeded training, and presentation-attack metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). Training and
//! inference default to `f32`; gradient checks run in `f64`.

pub mod data;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod mode;
pub mod model;
pub mod ops;
pub mod params;
pub mod resnet;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{load_dataset, preprocess, Dataset, Label, SampleRecord, Split, INPUT_SIZE};
pub use error::{Error, Result};
pub use generator::{GeneratorConfig, HeatmapGenerator};
pub use graph::{Eval, Graph};
pub use metrics::{det_curve, evaluate, DetCurve, EvalReport};
pub use mode::Mode;
pub use model::{ExpressNet, ExpressNetConfig, Prediction};
pub use params::ParamStore;
pub use resnet::{count_layers, ClassifierConfig, SlimResNet, StageConfig};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{load_weights, save_weights, TrainConfig, TrainHistory, Trainer};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ExpressNet32 = ExpressNet<f32>;
pub type ExpressNet64 = ExpressNet<f64>;
pub type Trainer32 = Trainer<f32>;
