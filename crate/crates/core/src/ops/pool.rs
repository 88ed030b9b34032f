use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::conv::conv_out_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub const fn new(window: usize, stride: usize) -> Self {
        PoolSpec { window, stride, padding: 0 }
    }

    pub const fn padded(window: usize, stride: usize, padding: usize) -> Self {
        PoolSpec { window, stride, padding }
    }
}

/// Max pooling. Padding cells never win. Returns the output and, per output
/// cell, the flat input index of the first maximum in row-major window order.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4("maxpool2d")?;
    if spec.window == 0 || spec.stride == 0 {
        return Err(Error::invalid("maxpool2d", "window and stride must be at least 1"));
    }
    if spec.padding >= spec.window {
        return Err(Error::invalid("maxpool2d", "padding must be smaller than the window"));
    }
    let p = spec.padding;
    if spec.window > h + 2 * p || spec.window > w + 2 * p {
        return Err(Error::shape("maxpool2d", format!("window {} exceeds spatial dims {h}×{w}", spec.window)));
    }
    let ho = conv_out_len(h, spec.window, spec.stride, p);
    let wo = conv_out_len(w, spec.window, spec.stride, p);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best: Option<(T, usize)> = None;
                for i in 0..spec.window {
                    let Some(ih) = (oh * spec.stride + i).checked_sub(p).filter(|&v| v < h) else { continue };
                    for j in 0..spec.window {
                        let Some(iw) = (ow * spec.stride + j).checked_sub(p).filter(|&v| v < w) else { continue };
                        let idx = base + ih * w + iw;
                        let v = x.data()[idx];
                        if best.is_none_or(|(b, _)| v > b) {
                            best = Some((v, idx));
                        }
                    }
                }
                let (v, idx) = best.expect("window overlaps input");
                out.push(v);
                argmax.push(idx);
            }
        }
    }
    Ok((Tensor::new([n, c, ho, wo], out)?, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[idx] += g;
    }
    dx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample2d<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("upsample2d")?;
    if factor == 0 {
        return Err(Error::invalid("upsample2d", "factor must be at least 1"));
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks(h * w) {
        for oh in 0..ho {
            let row = &plane[(oh / factor) * w..(oh / factor + 1) * w];
            out.extend((0..wo).map(|ow| row[ow / factor]));
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub fn upsample2d_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let wo = w * factor;
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (plane, g) in dx.data_mut().chunks_mut(h * w).zip(dy.data().chunks(h * w * factor * factor)) {
        for (i, &v) in g.iter().enumerate() {
            let (oh, ow) = (i / wo, i % wo);
            plane[(oh / factor) * w + ow / factor] += v;
        }
    }
    dx
}

/// Per-channel spatial mean: N×C×H×W → N×C.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let inv = T::one() / T::of((h * w) as f64);
    let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new([n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::of(hw as f64);
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        plane.fill(g * inv);
    }
    dx
}
