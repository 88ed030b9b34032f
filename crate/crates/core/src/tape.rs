//! Reverse-mode automatic differentiation over a linear operation record.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{self, Activation, BatchStats, BatchnormCache, Conv2dSpec, PoolSpec, BN_EPSILON};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    Dense { x: Var, w: Var, b: Option<Var> },
    Activation { x: Var, kind: Activation },
    GlobalAvgPool { x: Var },
    BatchnormTrain { gamma: Var, beta: Var, x: Var, cache: BatchnormCache<T> },
    BatchnormEval { x: Var, gamma: Var, beta: Var, mean: Vec<T>, var: Vec<T> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    BroadcastMul { maps: Var, scale: Var },
    Sum { x: Var },
    Mean { x: Var },
    Bce { scores: Var, labels: Var },
}

#[derive(Debug)]
struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records every operation of a forward pass; [`Tape::backward`] replays
/// them in reverse, accumulating gradients for every value that depends on
/// a parameter.
#[derive(Debug, Default)]
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        self.val(v)
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Registered parameters and their gradients (`None` if unreached).
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, Option<&Tensor<T>>)> {
        self.params.iter().map(|(name, v)| (name.as_str(), self.grad(*v)))
    }

    /// Consumes the tape, returning each registered parameter's gradient.
    pub fn into_param_grads(mut self) -> Vec<(String, Option<Tensor<T>>)> {
        let params = std::mem::take(&mut self.params);
        params.into_iter().map(|(name, v)| (name, self.grads.get_mut(v.0).and_then(Option::take))).collect()
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.val(loss).shape().to_vec();
        if self.val(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::ones(shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else { continue };
            self.backprop_node(i, &dy)?;
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, dy: &Tensor<T>) -> Result<()> {
        let mut out: Vec<(Var, Tensor<T>)> = Vec::new();
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, spec } => {
                let need = (self.needs(x), self.needs(w), b.is_some_and(|b| self.needs(b)));
                let grads = ops::conv2d_backward(self.val(x), self.val(w), dy, spec, need)?;
                out.extend(grads.input.map(|g| (x, g)));
                out.extend(grads.weight.map(|g| (w, g)));
                if let (Some(b), Some(g)) = (b, grads.bias) {
                    out.push((b, g));
                }
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, ops::maxpool2d_backward(self.val(*x).shape(), argmax, dy)));
            }
            &Op::Upsample { x, factor } => {
                out.push((x, ops::upsample2d_backward(self.val(x).shape(), dy, factor)));
            }
            &Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(self.val(x), self.val(w), dy);
                out.push((x, dx));
                out.push((w, dw));
                if let Some(b) = b {
                    out.push((b, db));
                }
            }
            &Op::Activation { x, kind } => out.push((x, ops::activation_backward(y, dy, kind))),
            &Op::GlobalAvgPool { x } => out.push((x, ops::global_avg_pool_backward(self.val(x).shape(), dy))),
            Op::BatchnormTrain { x, gamma, beta, cache } => {
                let (dx, dg, db) = ops::batchnorm_backward(self.val(*gamma), cache, dy);
                out.extend([(*x, dx), (*gamma, dg), (*beta, db)]);
            }
            Op::BatchnormEval { x, gamma, beta, mean, var } => {
                let xv = self.val(*x);
                let c = mean.len();
                let hw = xv.numel() / (xv.shape()[0] * c);
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(BN_EPSILON)).sqrt()).collect();
                let g = self.val(*gamma).data();
                let mut dx = dy.clone();
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for (p, ((dxp, xp), dyp)) in
                    dx.data_mut().chunks_mut(hw).zip(xv.data().chunks(hw)).zip(dy.data().chunks(hw)).enumerate()
                {
                    let ch = p % c;
                    for ((d, &xx), &gy) in dxp.iter_mut().zip(xp).zip(dyp) {
                        *d = gy * g[ch] * inv[ch];
                        dg[ch] += gy * (xx - mean[ch]) * inv[ch];
                        db[ch] += gy;
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, Tensor::new([c], dg)?));
                out.push((*beta, Tensor::new([c], db)?));
            }
            &Op::Add { a, b } => {
                out.push((a, dy.clone()));
                out.push((b, dy.clone()));
            }
            &Op::Mul { a, b } => {
                out.push((a, ops::mul(dy, self.val(b))?));
                out.push((b, ops::mul(dy, self.val(a))?));
            }
            &Op::BroadcastMul { maps, scale } => {
                let (dm, ds) = ops::broadcast_mul_backward(self.val(maps), self.val(scale), dy);
                out.push((maps, dm));
                out.push((scale, ds));
            }
            &Op::Sum { x } => out.push((x, Tensor::full(self.val(x).shape().to_vec(), dy.item()))),
            &Op::Mean { x } => {
                let xv = self.val(x);
                out.push((x, Tensor::full(xv.shape().to_vec(), dy.item() / T::of(xv.numel() as f64))));
            }
            &Op::Bce { scores, labels } => {
                out.push((scores, ops::bce_loss_backward(self.val(scores), self.val(labels), dy.item())));
            }
        }
        for (v, g) in out {
            self.accumulate(v, g);
        }
        Ok(())
    }
}

impl<'p, T: Scalar> Graph<'p, T> for Tape<'p, T> {
    type Value = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t.with_requires_grad(false)), Op::Leaf, &[])
    }

    fn param(&mut self, name: &str, t: &'p Tensor<T>) -> Var {
        let v = self.push(Cow::Borrowed(t), Op::Leaf, &[]);
        self.params.push((name.to_string(), v));
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, spec: Conv2dSpec) -> Result<Var> {
        let y = ops::conv2d(self.val(*x), self.val(*w), b.map(|b| self.val(*b)), spec)?;
        let mut inputs = vec![*x, *w];
        inputs.extend(b.copied());
        Ok(self.push(Cow::Owned(y), Op::Conv2d { x: *x, w: *w, b: b.copied(), spec }, &inputs))
    }

    fn maxpool2d(&mut self, x: &Var, spec: PoolSpec) -> Result<Var> {
        let (y, argmax) = ops::maxpool2d(self.val(*x), spec)?;
        Ok(self.push(Cow::Owned(y), Op::MaxPool { x: *x, argmax }, &[*x]))
    }

    fn upsample2d(&mut self, x: &Var, factor: usize) -> Result<Var> {
        let y = ops::upsample2d(self.val(*x), factor)?;
        Ok(self.push(Cow::Owned(y), Op::Upsample { x: *x, factor }, &[*x]))
    }

    fn dense(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = ops::dense(self.val(*x), self.val(*w), b.map(|b| self.val(*b)))?;
        let mut inputs = vec![*x, *w];
        inputs.extend(b.copied());
        Ok(self.push(Cow::Owned(y), Op::Dense { x: *x, w: *w, b: b.copied() }, &inputs))
    }

    fn activation(&mut self, x: &Var, kind: Activation) -> Var {
        let y = ops::activation(self.val(*x), kind);
        self.push(Cow::Owned(y), Op::Activation { x: *x, kind }, &[*x])
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.val(*x))?;
        Ok(self.push(Cow::Owned(y), Op::GlobalAvgPool { x: *x }, &[*x]))
    }

    fn batchnorm_train(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Result<(Var, BatchStats<T>)> {
        let (y, stats, cache) = ops::batchnorm_train(self.val(*x), self.val(*gamma), self.val(*beta))?;
        let op = Op::BatchnormTrain { x: *x, gamma: *gamma, beta: *beta, cache };
        Ok((self.push(Cow::Owned(y), op, &[*x, *gamma, *beta]), stats))
    }

    fn batchnorm_eval(&mut self, x: &Var, gamma: &Var, beta: &Var, mean: &[T], var: &[T]) -> Result<Var> {
        let y = ops::batchnorm_eval(self.val(*x), self.val(*gamma), self.val(*beta), mean, var)?;
        let op = Op::BatchnormEval { x: *x, gamma: *gamma, beta: *beta, mean: mean.to_vec(), var: var.to_vec() };
        Ok(self.push(Cow::Owned(y), op, &[*x, *gamma, *beta]))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::add(self.val(*a), self.val(*b))?;
        Ok(self.push(Cow::Owned(y), Op::Add { a: *a, b: *b }, &[*a, *b]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::mul(self.val(*a), self.val(*b))?;
        Ok(self.push(Cow::Owned(y), Op::Mul { a: *a, b: *b }, &[*a, *b]))
    }

    fn broadcast_mul(&mut self, maps: &Var, scale: &Var) -> Result<Var> {
        let y = ops::broadcast_mul(self.val(*maps), self.val(*scale))?;
        Ok(self.push(Cow::Owned(y), Op::BroadcastMul { maps: *maps, scale: *scale }, &[*maps, *scale]))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let y = ops::sum(self.val(*x));
        self.push(Cow::Owned(y), Op::Sum { x: *x }, &[*x])
    }

    fn mean(&mut self, x: &Var) -> Var {
        let y = ops::mean(self.val(*x));
        self.push(Cow::Owned(y), Op::Mean { x: *x }, &[*x])
    }

    fn bce_loss(&mut self, scores: &Var, labels: &Var) -> Result<Var> {
        let y = ops::bce_loss(self.val(*scores), self.val(*labels))?;
        Ok(self.push(Cow::Owned(y), Op::Bce { scores: *scores, labels: *labels }, &[*scores, *labels]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::from_fn([2, 3, 4], |i| i as f64).with_requires_grad(true);
        let mut tape = Tape::new();
        let v = tape.param("x", &x);
        let loss = tape.sum(&v);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[1.0; 24]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let x = Tensor::<f64>::new([2], vec![1.0, 2.0]).unwrap().with_requires_grad(true);
        let mut tape = Tape::new();
        let v = tape.param("x", &x);
        let sq = tape.mul(&v, &v).unwrap();
        let loss = tape.sum(&sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::<f32>::ones([2]).with_requires_grad(true);
        let mut tape = Tape::new();
        let v = tape.param("x", &x);
        assert!(matches!(tape.backward(v), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let x = Tensor::<f64>::ones([3]).with_requires_grad(true);
        let c = Tensor::<f64>::full([3], 2.0);
        let mut tape = Tape::new();
        let xv = tape.param("x", &x);
        let cv = tape.param("c", &c);
        let prod = tape.mul(&xv, &cv).unwrap();
        let loss = tape.sum(&prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(xv).unwrap().data(), &[2.0; 3]);
        assert!(tape.grad(cv).is_none());
    }
}
