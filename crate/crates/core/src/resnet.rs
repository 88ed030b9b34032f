//! Bottleneck residual classifier with configurable stage repetitions.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mode::{batchnorm, init_batchnorm, BnUpdate, Mode};
use crate::ops::{conv_out_len, Activation, Conv2dSpec, PoolSpec};
use crate::params::{he_normal, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bottleneck stage layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub repetitions: [usize; 4],
    /// `(mid, out)` channels of the bottleneck blocks in each stage.
    pub widths: [(usize, usize); 4],
    pub stem_channels: usize,
    pub stem_kernel: usize,
}

impl StageConfig {
    /// ResNet-50 repetitions `[3, 4, 6, 3]`.
    pub fn original() -> Self {
        StageConfig {
            repetitions: [3, 4, 6, 3],
            widths: [(64, 256), (128, 512), (256, 1024), (512, 2048)],
            stem_channels: 64,
            stem_kernel: 7,
        }
    }

    /// Reduced repetitions `[2, 2, 4, 2]` with unchanged widths.
    pub fn slim() -> Self {
        StageConfig { repetitions: [2, 2, 4, 2], ..Self::original() }
    }

    pub fn stride(stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            2
        }
    }

    /// Iterates `(stage, block, in_channels, stride, project)`.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize, usize, bool)> + '_ {
        let mut in_ch = self.stem_channels;
        (0..4).flat_map(move |s| {
            let out = self.widths[s].1;
            (0..self.repetitions[s])
                .map(|b| {
                    let stride = if b == 0 { Self::stride(s) } else { 1 };
                    let item = (s, b, in_ch, stride, stride != 1 || in_ch != out);
                    in_ch = out;
                    item
                })
                .collect::<Vec<_>>()
        })
    }

    pub fn out_channels(&self) -> usize {
        self.widths[3].1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub stages: StageConfig,
    /// Hidden widths of the dense head; a single sigmoid unit follows.
    pub head: [usize; 2],
    pub in_channels: usize,
}

impl ClassifierConfig {
    pub fn slim() -> Self {
        ClassifierConfig { stages: StageConfig::slim(), head: [512, 256], in_channels: 1 }
    }

    pub fn original() -> Self {
        ClassifierConfig { stages: StageConfig::original(), ..Self::slim() }
    }
}

/// Convolution and parameter totals of a classifier configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCount {
    /// Convolutions on the residual paths (three per block); excludes stem and projections.
    pub conv_in_blocks: usize,
    /// Learnable scalars of the whole classifier (stem, blocks, projections, head).
    pub params_total: usize,
}

pub fn count_layers(cfg: &ClassifierConfig) -> LayerCount {
    let st = &cfg.stages;
    let bn = |c: usize| 2 * c;
    let mut params = st.stem_kernel * st.stem_kernel * cfg.in_channels * st.stem_channels + bn(st.stem_channels);
    let mut convs = 0;
    for (s, _, in_ch, _, project) in st.blocks() {
        let (mid, out) = st.widths[s];
        convs += 3;
        params += in_ch * mid + bn(mid) + 9 * mid * mid + bn(mid) + mid * out + bn(out);
        if project {
            params += in_ch * out + bn(out);
        }
    }
    let mut prev = st.out_channels();
    for width in cfg.head.into_iter().chain([1]) {
        params += prev * width + width;
        prev = width;
    }
    LayerCount { conv_in_blocks: convs, params_total: params }
}

fn block_prefix(stage: usize, block: usize) -> String {
    format!("cls.s{}.b{}", stage + 1, block)
}

fn conv_weight(prefix: &str) -> String {
    format!("{prefix}.weight")
}

/// Stateless view over the `cls.*` entries of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlimResNet {
    pub config: ClassifierConfig,
}

impl SlimResNet {
    pub fn new(config: ClassifierConfig) -> Self {
        SlimResNet { config }
    }

    /// He-normal convolutions and dense layers (no conv bias), unit batchnorm.
    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let st = &self.config.stages;
        let conv = |store: &mut ParamStore<T>, rng: &mut _, prefix: &str, o: usize, i: usize, k: usize| {
            store.insert(conv_weight(prefix), he_normal(&[o, i, k, k], i * k * k, rng));
        };
        let (sk, sc) = (st.stem_kernel, st.stem_channels);
        conv(store, rng, "cls.stem.conv", sc, self.config.in_channels, sk);
        init_batchnorm(store, "cls.stem.bn", sc);
        for (s, b, in_ch, _, project) in st.blocks() {
            let (mid, out) = st.widths[s];
            let p = block_prefix(s, b);
            conv(store, rng, &format!("{p}.conv1"), mid, in_ch, 1);
            init_batchnorm(store, &format!("{p}.bn1"), mid);
            conv(store, rng, &format!("{p}.conv2"), mid, mid, 3);
            init_batchnorm(store, &format!("{p}.bn2"), mid);
            conv(store, rng, &format!("{p}.conv3"), out, mid, 1);
            init_batchnorm(store, &format!("{p}.bn3"), out);
            if project {
                conv(store, rng, &format!("{p}.proj.conv"), out, in_ch, 1);
                init_batchnorm(store, &format!("{p}.proj.bn"), out);
            }
        }
        let mut prev = st.out_channels();
        for (i, width) in self.config.head.into_iter().chain([1]).enumerate() {
            store.insert(format!("cls.head.fc{}.weight", i + 1), he_normal(&[prev, width], prev, rng));
            store.insert(format!("cls.head.fc{}.bias", i + 1), Tensor::zeros([width]).with_requires_grad(true));
            prev = width;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn<'p, T: Scalar, G: Graph<'p, T>>(
        g: &mut G,
        store: &'p ParamStore<T>,
        conv: &str,
        bn: &str,
        x: &G::Value,
        spec: Conv2dSpec,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<G::Value> {
        let w = g.param_from(store, &conv_weight(conv))?;
        let y = g.conv2d(x, &w, None, spec)?;
        batchnorm(g, store, bn, &y, mode, updates)
    }

    /// 1×1 → 3×3 (stride) → 1×1 with batchnorm, plus identity or projection shortcut.
    #[allow(clippy::too_many_arguments)]
    pub fn bottleneck_block<'p, T: Scalar, G: Graph<'p, T>>(
        g: &mut G,
        store: &'p ParamStore<T>,
        prefix: &str,
        x: &G::Value,
        stride: usize,
        project: bool,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<G::Value> {
        if !(1..=2).contains(&stride) {
            return Err(Error::invalid("bottleneck_block", format!("stride must be 1 or 2, got {stride}")));
        }
        let p = prefix;
        let y = Self::conv_bn(g, store, &format!("{p}.conv1"), &format!("{p}.bn1"), x, Conv2dSpec::valid(1), mode, updates)?;
        let y = g.activation(&y, Activation::Relu);
        let y =
            Self::conv_bn(g, store, &format!("{p}.conv2"), &format!("{p}.bn2"), &y, Conv2dSpec::same(stride), mode, updates)?;
        let y = g.activation(&y, Activation::Relu);
        let y = Self::conv_bn(g, store, &format!("{p}.conv3"), &format!("{p}.bn3"), &y, Conv2dSpec::valid(1), mode, updates)?;
        let sum = if project {
            let short = Self::conv_bn(
                g,
                store,
                &format!("{p}.proj.conv"),
                &format!("{p}.proj.bn"),
                x,
                Conv2dSpec::valid(stride),
                mode,
                updates,
            )?;
            g.add(&y, &short)?
        } else {
            if g.shape(x) != g.shape(&y) {
                return Err(Error::shape(
                    "bottleneck_block",
                    format!(
                        "identity shortcut {:?} cannot be added to residual {:?}; use a projection (project = true)",
                        g.shape(x),
                        g.shape(&y)
                    ),
                ));
            }
            g.add(&y, x)?
        };
        Ok(g.activation(&sum, Activation::Relu))
    }

    /// Stem and four stages: N×1×H×W → N×2048×H/32×W/32.
    pub fn features<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        x: &G::Value,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<G::Value> {
        let (_, c, _, _) = g.value(x).dims4("classify")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "classify",
                format!("expected {} input channel(s), got {c}", self.config.in_channels),
            ));
        }
        let y = Self::conv_bn(g, store, "cls.stem.conv", "cls.stem.bn", x, Conv2dSpec::same(2), mode, updates)?;
        let y = g.activation(&y, Activation::Relu);
        let mut cur = g.maxpool2d(&y, PoolSpec::padded(3, 2, 1))?;
        for (s, b, _, stride, project) in self.config.stages.blocks() {
            cur = Self::bottleneck_block(g, store, &block_prefix(s, b), &cur, stride, project, mode, updates)?;
        }
        Ok(cur)
    }

    /// Pooled features → dense head → liveness score N×1 in (0, 1).
    pub fn head<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        features: &G::Value,
    ) -> Result<G::Value> {
        let mut cur = g.global_avg_pool(features)?;
        let layers = self.config.head.len() + 1;
        for i in 1..=layers {
            let w = g.param_from(store, &format!("cls.head.fc{i}.weight"))?;
            let b = g.param_from(store, &format!("cls.head.fc{i}.bias"))?;
            let y = g.dense(&cur, &w, Some(&b))?;
            let act = if i == layers { Activation::Sigmoid } else { Activation::Relu };
            cur = g.activation(&y, act);
        }
        Ok(cur)
    }

    pub fn classify<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        x: &G::Value,
        mode: Mode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<G::Value> {
        let f = self.features(g, store, x, mode, updates)?;
        self.head(g, store, &f)
    }
}

/// Spatial side after the stem and each stage for a square input.
pub fn spatial_schedule(cfg: &StageConfig, input: usize) -> [usize; 5] {
    let stem = conv_out_len(input, cfg.stem_kernel, 2, cfg.stem_kernel / 2);
    let mut side = conv_out_len(stem, 3, 2, 1);
    let mut out = [side; 5];
    for (s, slot) in out.iter_mut().skip(1).enumerate() {
        side = conv_out_len(side, 3, StageConfig::stride(s), 1);
        *slot = side;
    }
    out
}

/// Plain-text comparison of the original and slim classifiers.
pub fn arch_report(input: usize) -> String {
    let mut out = String::new();
    for (label, cfg) in [("original (ResNet-50)", ClassifierConfig::original()), ("slim", ClassifierConfig::slim())] {
        let counts = count_layers(&cfg);
        let sched = spatial_schedule(&cfg.stages, input);
        let _ = writeln!(out, "== {label} ==");
        let _ = writeln!(out, "{:<8}{:>8}{:>10}{:>18}{:>8}", "stage", "blocks", "channels", "output", "convs");
        let _ = writeln!(
            out,
            "{:<8}{:>8}{:>10}{:>18}{:>8}",
            "stem",
            "-",
            cfg.stages.stem_channels,
            format!("{}x{}", sched[0], sched[0]),
            1
        );
        for s in 0..4 {
            let reps = cfg.stages.repetitions[s];
            let _ = writeln!(
                out,
                "{:<8}{:>8}{:>10}{:>18}{:>8}",
                format!("conv{}", s + 2),
                reps,
                cfg.stages.widths[s].1,
                format!("{}x{}", sched[s + 1], sched[s + 1]),
                3 * reps
            );
        }
        let _ = writeln!(out, "input: 1x{input}x{input}");
        let _ = writeln!(out, "pooled features: {}", cfg.stages.out_channels());
        let _ = writeln!(out, "head: {} -> {} -> 1", cfg.head[0], cfg.head[1]);
        let _ = writeln!(out, "block convs: {}", counts.conv_in_blocks);
        let _ = writeln!(out, "parameters: {}", counts.params_total);
        out.push('\n');
    }
    out
}
