//! Forward kernels and their vector-Jacobian products.
//!
//! These are plain functions of tensors. [`Tape`](crate::Tape) records them
//! for reverse mode; [`Eval`](crate::Eval) calls them directly.

mod conv;
mod norm;
mod pool;

pub use conv::{conv2d, conv2d_backward, conv_out_len, Conv2dGrads, Conv2dSpec, Padding};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchStats, BatchnormCache, BN_EPSILON, BN_MOMENTUM};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, upsample2d, upsample2d_backward, PoolSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Largest value strictly below one, so saturated sigmoid/tanh outputs stay
/// inside the open interval at any precision.
fn below_one<T: Scalar>() -> T {
    T::one() - T::epsilon() / T::of(2.0)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    y.max(T::min_positive_value()).min(below_one())
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => {
            let hi = below_one::<T>();
            x.map(|v| v.tanh().max(-hi).min(hi))
        }
    }
}

/// Backward of an activation, expressed through its output `y`.
pub fn activation_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&y, &g)| match kind {
            Activation::Relu => {
                if y > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => g * y * (T::one() - y),
            Activation::Tanh => g * (T::one() - y * y),
        })
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

/// `x · w + b` for `x: N×F`, `w: F×G`, `b: G`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, f) = x.dims2("dense")?;
    let (fw, g) = w.dims2("dense")?;
    if f != fw {
        return Err(Error::shape("dense", format!("input {:?} · weight {:?}", x.shape(), w.shape())));
    }
    if let Some(b) = b {
        if b.shape() != [g] {
            return Err(Error::shape("dense", format!("bias {:?} does not match {g} outputs", b.shape())));
        }
    }
    let mut out = vec![T::zero(); n * g];
    T::gemm(n, f, g, T::one(), x.data(), (f as isize, 1), w.data(), (g as isize, 1), T::zero(), &mut out, (g as isize, 1));
    if let Some(b) = b {
        for row in out.chunks_mut(g) {
            row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v += bb);
        }
    }
    Tensor::new([n, g], out)
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let g = w.shape()[1];
    let mut dx = vec![T::zero(); n * f];
    T::gemm(n, g, f, T::one(), dy.data(), (g as isize, 1), w.data(), (1, g as isize), T::zero(), &mut dx, (f as isize, 1));
    let mut dw = vec![T::zero(); f * g];
    T::gemm(f, n, g, T::one(), x.data(), (1, f as isize), dy.data(), (g as isize, 1), T::zero(), &mut dw, (g as isize, 1));
    let mut db = vec![T::zero(); g];
    for row in dy.data().chunks(g) {
        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    (
        Tensor::new([n, f], dx).expect("shape"),
        Tensor::new([f, g], dw).expect("shape"),
        Tensor::new([g], db).expect("shape"),
    )
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect())
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect())
}

fn broadcast_dims<T: Scalar>(maps: &Tensor<T>, scale: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = maps.dims4("broadcast_mul")?;
    if scale.shape() != [n, c] {
        return Err(Error::shape(
            "broadcast_mul",
            format!("scale {:?} must be N×C = {:?}", scale.shape(), [n, c]),
        ));
    }
    Ok((n, c, h * w))
}

/// Scales every H×W plane of `maps` (N×C×H×W) by the matching entry of `scale` (N×C).
pub fn broadcast_mul<T: Scalar>(maps: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, hw) = broadcast_dims(maps, scale)?;
    let mut out = maps.data().to_vec();
    for (plane, &s) in out.chunks_mut(hw).zip(scale.data()) {
        plane.iter_mut().for_each(|v| *v *= s);
    }
    Tensor::new(maps.shape().to_vec(), out)
}

/// Returns `(d_maps, d_scale)`.
pub fn broadcast_mul_backward<T: Scalar>(maps: &Tensor<T>, scale: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let hw = maps.numel() / scale.numel();
    let dmaps = broadcast_mul(dy, scale).expect("validated in forward");
    let dscale = maps
        .data()
        .chunks(hw)
        .zip(dy.data().chunks(hw))
        .map(|(m, g)| m.iter().zip(g).map(|(&a, &b)| a * b).sum())
        .collect();
    (dmaps, Tensor::new(scale.shape().to_vec(), dscale).expect("shape"))
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().copied().sum())
}

pub fn mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64))
}

/// Score clamp applied before taking logarithms in [`bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

fn check_labels<T: Scalar>(scores: &Tensor<T>, labels: &Tensor<T>) -> Result<()> {
    same_shape("bce_loss", scores, labels)?;
    if let Some(&bad) = labels.data().iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(Error::InvalidLabel(bad.as_f64()));
    }
    Ok(())
}

/// Mean binary cross-entropy with scores clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Scalar>(scores: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    check_labels(scores, labels)?;
    let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
    let total: T = scores
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&s, &y)| {
            let s = s.max(lo).min(hi);
            -(y * s.ln() + (T::one() - y) * (T::one() - s).ln())
        })
        .sum();
    Ok(Tensor::scalar(total / T::of(scores.numel() as f64)))
}

/// Gradient of [`bce_loss`] w.r.t. the scores; zero where the clamp is active.
pub fn bce_loss_backward<T: Scalar>(scores: &Tensor<T>, labels: &Tensor<T>, dloss: T) -> Tensor<T> {
    let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
    let n = T::of(scores.numel() as f64);
    let data = scores
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&s, &y)| {
            if s < lo || s > hi {
                T::zero()
            } else {
                dloss * ((T::one() - y) / (T::one() - s) - y / s) / n
            }
        })
        .collect();
    Tensor::new(scores.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn activation_values() {
        let x = Tensor::<f64>::new([3], vec![-3.0, 0.0, 3.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 3.0]);
        assert_eq!(activation(&x, Activation::Sigmoid).data()[1], 0.5);
        assert_eq!(activation(&x, Activation::Tanh).data()[1], 0.0);
        let t = activation(&Tensor::<f64>::scalar(10.0), Activation::Tanh).item();
        assert!(t < 1.0 && t > 0.9999);
    }

    #[test]
    fn saturated_outputs_stay_open_interval_in_f32() {
        let x = Tensor::<f32>::new([4], vec![-200.0, -30.0, 30.0, 200.0]).unwrap();
        for kind in [Activation::Sigmoid, Activation::Tanh] {
            let y = activation(&x, kind);
            let lo = if kind == Activation::Sigmoid { 0.0 } else { -1.0 };
            assert!(y.data().iter().all(|&v| v > lo && v < 1.0), "{kind:?}: {:?}", y.data());
        }
    }

    #[test]
    fn dense_hand_arithmetic() {
        let x = Tensor::<f64>::new([1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new([2, 1], vec![3.0, 4.0]).unwrap();
        let b = Tensor::new([1], vec![5.0]).unwrap();
        assert_eq!(dense(&x, &w, Some(&b)).unwrap().data(), &[16.0]);
        assert!(dense(&x, &Tensor::zeros([3, 1]), None).is_err());
    }

    #[test]
    fn dense_identity_and_batch() {
        let x = Tensor::<f64>::from_fn([5, 3], |i| i as f64 - 4.0);
        let eye = Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = dense(&x, &eye, Some(&Tensor::zeros([3]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn add_and_broadcast_mul() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| i as f64);
        assert_eq!(add(&x, &Tensor::zeros([2, 3, 2, 2])).unwrap(), x);
        assert_eq!(broadcast_mul(&x, &Tensor::ones([2, 3])).unwrap(), x);
        let mut scale = Tensor::ones([2, 3]);
        scale.data_mut()[4] = 2.0; // sample 1, channel 1
        let y = broadcast_mul(&x, &scale).unwrap();
        for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
            let factor = if i / 4 == 4 { 2.0 } else { 1.0 };
            assert_eq!(b, a * factor);
        }
        assert!(add(&x, &Tensor::zeros([2, 3, 2, 1])).is_err());
        assert!(broadcast_mul(&x, &Tensor::ones([2, 2])).is_err());
    }

    #[test]
    fn bce_known_values() {
        let s = Tensor::<f64>::new([2, 1], vec![0.5, 0.5]).unwrap();
        let y = Tensor::new([2, 1], vec![0.0, 1.0]).unwrap();
        assert_relative_eq!(bce_loss(&s, &y).unwrap().item(), std::f64::consts::LN_2, epsilon = 1e-12);
        let perfect = Tensor::new([2, 1], vec![0.0, 1.0]).unwrap();
        assert!(bce_loss(&perfect, &y).unwrap().item() <= 1e-6 + 1e-7);
        let bad = Tensor::new([2, 1], vec![0.0, 0.5]).unwrap();
        assert!(matches!(bce_loss(&s, &bad), Err(Error::InvalidLabel(_))));
    }
}
