use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `k / 2` on each side; requires odd kernels. Stride 1 preserves H×W,
    /// stride `s` yields `ceil(H / s)`.
    Same,
    Valid,
    Explicit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2dSpec {
    pub const fn same(stride: usize) -> Self {
        Conv2dSpec { stride, padding: Padding::Same }
    }

    pub const fn valid(stride: usize) -> Self {
        Conv2dSpec { stride, padding: Padding::Valid }
    }
}

/// Upper bound on im2col scratch elements per chunk of output rows.
const COL_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    pub(crate) fn new<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: Conv2dSpec) -> Result<Self> {
        let (n, c, h, wd) = x.dims4("conv2d")?;
        let (o, ci, kh, kw) = match w.shape()[..] {
            [o, ci, kh, kw] => (o, ci, kh, kw),
            _ => return Err(Error::shape("conv2d", format!("weight must be O×I×Kh×Kw, got {:?}", w.shape()))),
        };
        if ci != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but weight {:?} expects {ci}", w.shape()),
            ));
        }
        if spec.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        let (ph, pw) = match spec.padding {
            Padding::Valid => (0, 0),
            Padding::Explicit(p) => (p, p),
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::invalid("conv2d", format!("same padding needs odd kernels, got {kh}×{kw}")));
                }
                (kh / 2, kw / 2)
            }
        };
        if h + 2 * ph < kh || wd + 2 * pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}×{kw} larger than padded input {}×{}", h + 2 * ph, wd + 2 * pw),
            ));
        }
        let ho = (h + 2 * ph - kh) / spec.stride + 1;
        let wo = (wd + 2 * pw - kw) / spec.stride + 1;
        Ok(ConvGeom { n, c, h, w: wd, o, kh, kw, stride: spec.stride, ph, pw, ho, wo })
    }

    pub(crate) fn out_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.ho, self.wo]
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.k() * self.wo).max(1)).clamp(1, self.ho)
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let step = self.rows_per_chunk();
        (0..self.ho).step_by(step).map(move |r0| (r0, step.min(self.ho - r0)))
    }

    /// Input coordinate for output index `out` and kernel tap `tap`, if not in the padding.
    #[inline]
    fn src(out: usize, tap: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (out * stride + tap).checked_sub(pad).filter(|&i| i < len)
    }

    fn im2col<T: Scalar>(&self, x_n: &[T], row0: usize, rows: usize, col: &mut [T]) {
        let cp = rows * self.wo;
        for ci in 0..self.c {
            let plane = &x_n[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let kidx = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[kidx * cp..(kidx + 1) * cp];
                    for r in 0..rows {
                        let d = &mut dst[r * self.wo..(r + 1) * self.wo];
                        match Self::src(row0 + r, ki, self.stride, self.ph, self.h) {
                            None => d.fill(T::zero()),
                            Some(ih) => {
                                let src = &plane[ih * self.w..(ih + 1) * self.w];
                                for (ow, v) in d.iter_mut().enumerate() {
                                    *v = match Self::src(ow, kj, self.stride, self.pw, self.w) {
                                        Some(iw) => src[iw],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], row0: usize, rows: usize, dx_n: &mut [T]) {
        let cp = rows * self.wo;
        for ci in 0..self.c {
            let plane = &mut dx_n[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let kidx = (ci * self.kh + ki) * self.kw + kj;
                    let src = &col[kidx * cp..(kidx + 1) * cp];
                    for r in 0..rows {
                        let Some(ih) = Self::src(row0 + r, ki, self.stride, self.ph, self.h) else {
                            continue;
                        };
                        let s = &src[r * self.wo..(r + 1) * self.wo];
                        let dst = &mut plane[ih * self.w..(ih + 1) * self.w];
                        for (ow, &v) in s.iter().enumerate() {
                            if let Some(iw) = Self::src(ow, kj, self.stride, self.pw, self.w) {
                                dst[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(b: Option<&Tensor<T>>, o: usize) -> Result<()> {
    match b {
        Some(b) if b.numel() != o || b.rank() != 1 => {
            Err(Error::shape("conv2d", format!("bias {:?} does not match {o} output channels", b.shape())))
        }
        _ => Ok(()),
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w, spec)?;
    check_bias(b, g.o)?;
    let (k, p) = (g.k(), g.p());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.o * p];
    out.par_chunks_mut(g.o * p).enumerate().for_each(|(ni, out_n)| {
        let x_n = &x.data()[ni * in_len..(ni + 1) * in_len];
        if g.pointwise() {
            T::gemm(g.o, k, p, T::one(), w.data(), (k as isize, 1), x_n, (p as isize, 1), T::zero(), out_n, (p as isize, 1));
        } else {
            let mut col = vec![T::zero(); k * g.rows_per_chunk() * g.wo];
            for (r0, rows) in g.chunks() {
                let cp = rows * g.wo;
                g.im2col(x_n, r0, rows, &mut col[..k * cp]);
                let p0 = r0 * g.wo;
                T::gemm(
                    g.o,
                    k,
                    cp,
                    T::one(),
                    w.data(),
                    (k as isize, 1),
                    &col[..k * cp],
                    (cp as isize, 1),
                    T::zero(),
                    &mut out_n[p0..],
                    (p as isize, 1),
                );
            }
        }
        if let Some(b) = b {
            for (row, &bo) in out_n.chunks_mut(p).zip(b.data()) {
                row.iter_mut().for_each(|v| *v += bo);
            }
        }
    });
    Tensor::new(g.out_shape(), out)
}

pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Per-sample (weight, bias) gradient contributions.
type Partial<T> = (Vec<T>, Vec<T>);

/// Gradients of `conv2d` given the upstream gradient `dy`. Per-sample
/// weight gradients are reduced in sample order, so results do not depend
/// on the worker count.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: Conv2dSpec,
    need: (bool, bool, bool),
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeom::new(x, w, spec)?;
    if dy.shape() != g.out_shape() {
        return Err(Error::shape("conv2d_backward", format!("dy {:?} vs {:?}", dy.shape(), g.out_shape())));
    }
    let (need_dx, need_dw, need_db) = need;
    let (k, p) = (g.k(), g.p());
    let in_len = g.c * g.h * g.w;
    let mut dx = vec![T::zero(); if need_dx { x.numel() } else { 0 }];

    let per_sample = |ni: usize, dx_n: Option<&mut [T]>| -> (Vec<T>, Vec<T>) {
        let x_n = &x.data()[ni * in_len..(ni + 1) * in_len];
        let dy_n = &dy.data()[ni * g.o * p..(ni + 1) * g.o * p];
        let mut dw = vec![T::zero(); if need_dw { g.o * k } else { 0 }];
        let db = if need_db { dy_n.chunks(p).map(|r| r.iter().copied().sum()).collect() } else { Vec::new() };
        if g.pointwise() {
            if need_dw {
                T::gemm(g.o, p, k, T::one(), dy_n, (p as isize, 1), x_n, (1, p as isize), T::zero(), &mut dw, (k as isize, 1));
            }
            if let Some(dx_n) = dx_n {
                T::gemm(k, g.o, p, T::one(), w.data(), (1, k as isize), dy_n, (p as isize, 1), T::zero(), dx_n, (p as isize, 1));
            }
            return (dw, db);
        }
        let mut col = vec![T::zero(); k * g.rows_per_chunk() * g.wo];
        let mut dx_n = dx_n;
        for (r0, rows) in g.chunks() {
            let cp = rows * g.wo;
            let p0 = r0 * g.wo;
            if need_dw {
                g.im2col(x_n, r0, rows, &mut col[..k * cp]);
                T::gemm(
                    g.o,
                    cp,
                    k,
                    T::one(),
                    &dy_n[p0..],
                    (p as isize, 1),
                    &col[..k * cp],
                    (1, cp as isize),
                    T::one(),
                    &mut dw,
                    (k as isize, 1),
                );
            }
            if let Some(dx_n) = dx_n.as_deref_mut() {
                T::gemm(
                    k,
                    g.o,
                    cp,
                    T::one(),
                    w.data(),
                    (1, k as isize),
                    &dy_n[p0..],
                    (p as isize, 1),
                    T::zero(),
                    &mut col[..k * cp],
                    (cp as isize, 1),
                );
                g.col2im_add(&col[..k * cp], r0, rows, dx_n);
            }
        }
        (dw, db)
    };

    let partials: Vec<Partial<T>> = if need_dx {
        dx.par_chunks_mut(in_len).enumerate().map(|(ni, dx_n)| per_sample(ni, Some(dx_n))).collect()
    } else {
        (0..g.n).into_par_iter().map(|ni| per_sample(ni, None)).collect()
    };

    let reduce = |select: fn(&Partial<T>) -> &Vec<T>, len: usize| {
        let mut acc = vec![T::zero(); len];
        for part in &partials {
            acc.iter_mut().zip(select(part)).for_each(|(a, &v)| *a += v);
        }
        acc
    };
    Ok(Conv2dGrads {
        input: need_dx.then(|| Tensor::new(x.shape().to_vec(), dx)).transpose()?,
        weight: need_dw.then(|| Tensor::new(w.shape().to_vec(), reduce(|p| &p.0, g.o * k))).transpose()?,
        bias: need_db.then(|| Tensor::new([g.o], reduce(|p| &p.1, g.o))).transpose()?,
    })
}

/// Output spatial size of a convolution or pooling window along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as an independent reference.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4("t").unwrap();
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = conv_out_len(h, kh, stride, pad);
        let wo = conv_out_len(wd, kw, stride, pad);
        Tensor::from_fn([n, o, ho, wo], |idx| {
            let ow = idx % wo;
            let oh = (idx / wo) % ho;
            let oc = (idx / (wo * ho)) % o;
            let ni = idx / (wo * ho * o);
            let mut s = b.map_or(0.0, |b| b.data()[oc]);
            for ci in 0..c {
                for i in 0..kh {
                    for j in 0..kw {
                        let ih = (oh * stride + i) as isize - pad as isize;
                        let iw = (ow * stride + j) as isize - pad as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                            s += x.data()[((ni * c + ci) * h + ih as usize) * wd + iw as usize]
                                * w.data()[((oc * c + ci) * kh + i) * kw + j];
                        }
                    }
                }
            }
            s
        })
    }

    fn pseudo(shape: &[usize], salt: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| (i as f64 * 0.7311 + salt).sin() * 1.3)
    }

    #[test]
    fn identity_kernel_returns_input() {
        let x = Tensor::<f32>::from_fn([1, 1, 3, 3], |i| i as f32);
        let w = Tensor::ones([1, 1, 1, 1]);
        let b = Tensor::zeros([1]);
        let y = conv2d(&x, &w, Some(&b), Conv2dSpec::same(1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_valid_convolution_sums_nine() {
        let x = Tensor::<f32>::ones([1, 1, 4, 4]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, Conv2dSpec::valid(1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[9.0; 4]);
    }

    #[test]
    fn matches_naive_reference_across_geometries() {
        for &(c, o, h, w, k, stride, pad) in &[
            (2, 3, 5, 6, 3, 1, 1),
            (3, 2, 7, 7, 3, 2, 1),
            (1, 4, 9, 8, 7, 2, 3),
            (4, 2, 6, 6, 1, 2, 0),
            (4, 5, 6, 6, 1, 1, 0),
            (2, 2, 5, 5, 3, 1, 0),
        ] {
            let x = pseudo(&[2, c, h, w], 0.3);
            let wt = pseudo(&[o, c, k, k], 1.1);
            let b = pseudo(&[o], 2.0);
            let got = conv2d(&x, &wt, Some(&b), Conv2dSpec { stride, padding: Padding::Explicit(pad) }).unwrap();
            let want = naive(&x, &wt, Some(&b), stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "geometry {:?}", (c, o, h, w, k, stride, pad));
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let err = conv2d(&x, &w, None, Conv2dSpec::same(1)).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 2, 2]), None, Conv2dSpec::same(1)).is_err());
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 3, 3]), None, Conv2dSpec::same(0)).is_err());
    }

    #[test]
    fn same_padding_preserves_large_extent() {
        let x = Tensor::<f32>::zeros([1, 32, 512, 512]);
        let w = Tensor::zeros([32, 32, 3, 3]);
        let y = conv2d(&x, &w, Some(&Tensor::zeros([32])), Conv2dSpec::same(1)).unwrap();
        assert_eq!(y.shape(), &[1, 32, 512, 512]);
    }
}
