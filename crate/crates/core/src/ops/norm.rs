use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running value in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch statistics (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Values the batchnorm backward pass needs from the training forward pass.
#[derive(Debug, Clone)]
pub struct BatchnormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn check_affine<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batchnorm2d")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "batchnorm2d",
            format!("gamma {:?}/beta {:?} must both have {c} entries", gamma.shape(), beta.shape()),
        ));
    }
    Ok((n, c, h * w))
}

fn plane_iter<T>(data: &[T], c: usize, hw: usize, ch: usize) -> impl Iterator<Item = &[T]> {
    data.chunks(hw).skip(ch).step_by(c)
}

/// Normalizes each channel by its batch statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchStats<T>, BatchnormCache<T>)> {
    let (n, c, hw) = check_affine(x, gamma, beta)?;
    let m = T::of((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mu = plane_iter(x.data(), c, hw, ch).flatten().copied().sum::<T>() / m;
        let v = plane_iter(x.data(), c, hw, ch).flatten().map(|&v| (v - mu) * (v - mu)).sum::<T>() / m;
        mean[ch] = mu;
        var[ch] = v;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(BN_EPSILON)).sqrt()).collect();
    let mut normalized = x.clone();
    let mut y = x.clone();
    for (i, (xh, yv)) in normalized.data_mut().chunks_mut(hw).zip(y.data_mut().chunks_mut(hw)).enumerate() {
        let ch = i % c;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for (a, o) in xh.iter_mut().zip(yv.iter_mut()) {
            *a = (*a - mean[ch]) * inv_std[ch];
            *o = g * *a + b;
        }
    }
    Ok((y, BatchStats { mean, var }, BatchnormCache { normalized, inv_std }))
}

/// Normalizes with fixed (running) statistics; an affine map per channel.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
) -> Result<Tensor<T>> {
    let (_, c, hw) = check_affine(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batchnorm2d", format!("running stats must have {c} entries")));
    }
    let mut y = x.clone();
    for (i, plane) in y.data_mut().chunks_mut(hw).enumerate() {
        let ch = i % c;
        let scale = gamma.data()[ch] / (var[ch] + T::of(BN_EPSILON)).sqrt();
        let shift = beta.data()[ch] - mean[ch] * scale;
        plane.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(y)
}

/// Returns `(dx, dgamma, dbeta)` for the training-mode forward pass.
pub fn batchnorm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &BatchnormCache<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let shape = cache.normalized.shape();
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::of((n * hw) as f64);
    let xh = cache.normalized.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (xp, gp)) in xh.chunks(hw).zip(dy.data().chunks(hw)).enumerate() {
        let ch = i % c;
        for (&a, &g) in xp.iter().zip(gp) {
            dgamma[ch] += g * a;
            dbeta[ch] += g;
        }
    }
    let mut dx = Tensor::zeros(shape.to_vec());
    for (i, ((dp, xp), gp)) in dx.data_mut().chunks_mut(hw).zip(xh.chunks(hw)).zip(dy.data().chunks(hw)).enumerate() {
        let ch = i % c;
        let k = gamma.data()[ch] * cache.inv_std[ch] / m;
        for ((d, &a), &g) in dp.iter_mut().zip(xp).zip(gp) {
            *d = k * (m * g - dbeta[ch] - a * dgamma[ch]);
        }
    }
    (
        dx,
        Tensor::new([c], dgamma).expect("shape"),
        Tensor::new([c], dbeta).expect("shape"),
    )
}
