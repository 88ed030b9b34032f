use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named model state: trainable parameters (`requires_grad`) and buffers such
/// as batchnorm running statistics. Names are unique and iterate in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter().filter(|(_, t)| t.requires_grad)
    }

    /// Number of learnable scalars.
    pub fn trainable_numel(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    /// Stores gradients (as produced by [`Tape::into_param_grads`](crate::tape::Tape::into_param_grads)) in the
    /// matching grad slots. Parameters registered more than once have their
    /// gradients summed.
    pub fn set_grads(&mut self, grads: impl IntoIterator<Item = (String, Option<Tensor<T>>)>) -> Result<()> {
        self.zero_grads();
        for (name, grad) in grads {
            let Some(grad) = grad else { continue };
            let t = self.get_mut(&name)?;
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(grad.data()).for_each(|(a, &g)| *a += g),
                slot @ None => *slot = Some(grad.data().to_vec()),
            }
        }
        Ok(())
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore<T>) -> Result<()> {
        for (name, t) in self.iter() {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(Error::ParameterShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: o.shape().to_vec(),
                });
            }
        }
        if let Some((extra, _)) = other.iter().find(|(n, _)| !self.contains(n)) {
            return Err(Error::Malformed(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// He-normal initialisation: `N(0, 2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| T::of(dist.sample(rng))).with_requires_grad(true)
}
