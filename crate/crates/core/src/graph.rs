//! The operator surface shared by eager evaluation and the recording tape.

use std::borrow::Cow;

use crate::error::Result;
use crate::ops::{self, Activation, BatchStats, Conv2dSpec, PoolSpec};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Operators the network is built from. Model code is written once against
/// this trait and runs either eagerly ([`Eval`]) or on a [`Tape`](crate::Tape)
/// for reverse-mode differentiation.
///
/// `'p` is the lifetime of borrowed parameters, which are never copied.
pub trait Graph<'p, T: Scalar> {
    type Value;

    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn param(&mut self, name: &str, t: &'p Tensor<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        spec: Conv2dSpec,
    ) -> Result<Self::Value>;
    fn maxpool2d(&mut self, x: &Self::Value, spec: PoolSpec) -> Result<Self::Value>;
    fn upsample2d(&mut self, x: &Self::Value, factor: usize) -> Result<Self::Value>;
    fn dense(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value>;
    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Self::Value;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn batchnorm_train(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
    ) -> Result<(Self::Value, BatchStats<T>)>;
    fn batchnorm_eval(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mean: &[T],
        var: &[T],
    ) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn broadcast_mul(&mut self, maps: &Self::Value, scale: &Self::Value) -> Result<Self::Value>;
    fn sum(&mut self, x: &Self::Value) -> Self::Value;
    fn mean(&mut self, x: &Self::Value) -> Self::Value;
    fn bce_loss(&mut self, scores: &Self::Value, labels: &Self::Value) -> Result<Self::Value>;

    /// Looks up `name` in `store` and registers it as a parameter.
    fn param_from(&mut self, store: &'p ParamStore<T>, name: &str) -> Result<Self::Value> {
        Ok(self.param(name, store.get(name)?))
    }

    fn shape<'a>(&'a self, v: &'a Self::Value) -> &'a [usize] {
        self.value(v).shape()
    }
}

/// Eager evaluation. Intermediate values are dropped as soon as the caller
/// drops them, which keeps full-resolution inference within memory.
#[derive(Debug, Default)]
pub struct Eval;

impl<'p, T: Scalar> Graph<'p, T> for Eval {
    type Value = Cow<'p, Tensor<T>>;

    fn constant(&mut self, t: Tensor<T>) -> Self::Value {
        Cow::Owned(t)
    }

    fn param(&mut self, _name: &str, t: &'p Tensor<T>) -> Self::Value {
        Cow::Borrowed(t)
    }

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>, spec: Conv2dSpec) -> Result<Self::Value> {
        ops::conv2d(x, w, b.map(|b| &**b), spec).map(Cow::Owned)
    }

    fn maxpool2d(&mut self, x: &Self::Value, spec: PoolSpec) -> Result<Self::Value> {
        ops::maxpool2d(x, spec).map(|(y, _)| Cow::Owned(y))
    }

    fn upsample2d(&mut self, x: &Self::Value, factor: usize) -> Result<Self::Value> {
        ops::upsample2d(x, factor).map(Cow::Owned)
    }

    fn dense(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value> {
        ops::dense(x, w, b.map(|b| &**b)).map(Cow::Owned)
    }

    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Self::Value {
        Cow::Owned(ops::activation(x, kind))
    }

    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::global_avg_pool(x).map(Cow::Owned)
    }

    fn batchnorm_train(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
    ) -> Result<(Self::Value, BatchStats<T>)> {
        ops::batchnorm_train(x, gamma, beta).map(|(y, stats, _)| (Cow::Owned(y), stats))
    }

    fn batchnorm_eval(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mean: &[T],
        var: &[T],
    ) -> Result<Self::Value> {
        ops::batchnorm_eval(x, gamma, beta, mean, var).map(Cow::Owned)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::add(a, b).map(Cow::Owned)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::mul(a, b).map(Cow::Owned)
    }

    fn broadcast_mul(&mut self, maps: &Self::Value, scale: &Self::Value) -> Result<Self::Value> {
        ops::broadcast_mul(maps, scale).map(Cow::Owned)
    }

    fn sum(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::sum(x))
    }

    fn mean(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::mean(x))
    }

    fn bce_loss(&mut self, scores: &Self::Value, labels: &Self::Value) -> Result<Self::Value> {
        ops::bce_loss(scores, labels).map(Cow::Owned)
    }
}
