use crate::error::Result;
use crate::graph::Graph;
use crate::ops::{BatchStats, BN_MOMENTUM};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batchnorm behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated afterwards.
    Train,
    /// Running statistics; the forward pass is a pure function of its inputs.
    Eval,
}

/// Batch statistics observed by one batchnorm layer during a training pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub prefix: String,
    pub stats: BatchStats<T>,
}

pub(crate) fn bn_names(prefix: &str) -> [String; 4] {
    ["gamma", "beta", "running_mean", "running_var"].map(|s| format!("{prefix}.{s}"))
}

pub(crate) fn init_batchnorm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) {
    let [g, b, m, v] = bn_names(prefix);
    store.insert(g, Tensor::ones([channels]).with_requires_grad(true));
    store.insert(b, Tensor::zeros([channels]).with_requires_grad(true));
    store.insert(m, Tensor::zeros([channels]));
    store.insert(v, Tensor::ones([channels]));
}

pub(crate) fn batchnorm<'p, T: Scalar, G: Graph<'p, T>>(
    g: &mut G,
    store: &'p ParamStore<T>,
    prefix: &str,
    x: &G::Value,
    mode: Mode,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<G::Value> {
    let [gn, bn, mn, vn] = bn_names(prefix);
    let gamma = g.param_from(store, &gn)?;
    let beta = g.param_from(store, &bn)?;
    match mode {
        Mode::Train => {
            let (y, stats) = g.batchnorm_train(x, &gamma, &beta)?;
            updates.push(BnUpdate { prefix: prefix.to_string(), stats });
            Ok(y)
        }
        Mode::Eval => g.batchnorm_eval(x, &gamma, &beta, store.get(&mn)?.data(), store.get(&vn)?.data()),
    }
}

/// `running = 0.9 · running + 0.1 · batch` for every recorded layer.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) -> Result<()> {
    let keep = T::of(BN_MOMENTUM);
    let take = T::one() - keep;
    for u in updates {
        let [_, _, mn, vn] = bn_names(&u.prefix);
        for (name, batch) in [(mn, &u.stats.mean), (vn, &u.stats.var)] {
            let running = store.get_mut(&name)?;
            running.data_mut().iter_mut().zip(batch).for_each(|(r, &b)| *r = keep * *r + take * b);
        }
    }
    Ok(())
}
