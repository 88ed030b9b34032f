use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Per-parameter optimizer state. Adam keeps first and second moments;
/// plain SGD keeps nothing but the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<T>>,
    pub second_moment: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState { step: 0, first_moment: BTreeMap::new(), second_moment: BTreeMap::new() }
    }
}

/// Applies one update to every trainable parameter holding a gradient.
/// All gradients are checked before any parameter is touched.
pub fn optimizer_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut OptimizerState<T>,
    kind: OptimizerKind,
    learning_rate: f64,
) -> Result<()> {
    for (name, t) in params.trainable() {
        if t.grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let lr = T::of(learning_rate);
    match kind {
        OptimizerKind::Sgd => {
            for (_, t) in params.iter_mut() {
                if !t.requires_grad {
                    continue;
                }
                let Some(grad) = t.grad.take() else { continue };
                t.data_mut().iter_mut().zip(&grad).for_each(|(p, &g)| *p -= lr * g);
                t.grad = Some(grad);
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2), T::of(ADAM_EPSILON));
            let step = i32::try_from(state.step).unwrap_or(i32::MAX);
            let c1 = T::one() - b1.powi(step);
            let c2 = T::one() - b2.powi(step);
            for (name, t) in params.iter_mut() {
                if !t.requires_grad {
                    continue;
                }
                let Some(grad) = t.grad.take() else { continue };
                let m = state.first_moment.entry(name.to_string()).or_insert_with(|| vec![T::zero(); grad.len()]);
                let v = state.second_moment.entry(name.to_string()).or_insert_with(|| vec![T::zero(); grad.len()]);
                for (((p, &g), m), v) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
                t.grad = Some(grad);
            }
        }
    }
    Ok(())
}
