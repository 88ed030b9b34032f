//! Encoder–decoder with channel attention producing a single-channel heatmap.

use std::path::Path;

use image::GrayImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{Activation, Conv2dSpec, PoolSpec};
use crate::params::{he_normal, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Activations of the two attention MLP layers, applied after `W0` and `W1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionActivations {
    pub inner: Activation,
    pub outer: Activation,
}

impl AttentionActivations {
    /// ReLU hidden layer, sigmoid gate in (0, 1).
    pub const GATED: Self = AttentionActivations { inner: Activation::Relu, outer: Activation::Sigmoid };
    /// Sigmoid hidden layer, ReLU output (unbounded above).
    pub const SIGMOID_THEN_RELU: Self = AttentionActivations { inner: Activation::Sigmoid, outer: Activation::Relu };
}

impl Default for AttentionActivations {
    fn default() -> Self {
        Self::GATED
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Output channels of the two encoder stages.
    pub encoder_channels: [usize; 2],
    /// Output channels of the two decoder stages; the last one is `f`.
    pub decoder_channels: [usize; 2],
    pub kernel: usize,
    /// Attention MLP hidden width is `f / reduction`.
    pub reduction: usize,
    pub attention: AttentionActivations,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            encoder_channels: [16, 32],
            decoder_channels: [32, 32],
            kernel: 3,
            reduction: 8,
            attention: AttentionActivations::GATED,
        }
    }
}

impl GeneratorConfig {
    /// Number of decoder feature maps fed to the attention block.
    pub fn feature_maps(&self) -> usize {
        self.decoder_channels[1]
    }

    pub fn hidden(&self) -> usize {
        (self.feature_maps() / self.reduction).max(1)
    }
}

const PREFIX: &str = "gen";

fn name(part: &str) -> String {
    format!("{PREFIX}.{part}")
}

/// Stateless view over the `gen.*` entries of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapGenerator {
    pub config: GeneratorConfig,
}

impl HeatmapGenerator {
    pub fn new(config: GeneratorConfig) -> Self {
        HeatmapGenerator { config }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let c = &self.config;
        let k = c.kernel;
        let mut conv = |store: &mut ParamStore<T>, part: &str, o: usize, i: usize, kk: usize| {
            store.insert(name(&format!("{part}.weight")), he_normal(&[o, i, kk, kk], i * kk * kk, rng));
            store.insert(name(&format!("{part}.bias")), Tensor::zeros([o]).with_requires_grad(true));
        };
        conv(store, "enc1", c.encoder_channels[0], 1, k);
        conv(store, "enc2", c.encoder_channels[1], c.encoder_channels[0], k);
        conv(store, "dec1", c.decoder_channels[0], c.encoder_channels[1], k);
        conv(store, "dec2", c.decoder_channels[1], c.decoder_channels[0], k);
        conv(store, "fuse", 1, c.feature_maps(), 1);
        let (f, h) = (c.feature_maps(), c.hidden());
        store.insert(name("cab.w0"), he_normal(&[f, h], f, rng));
        store.insert(name("cab.b0"), Tensor::zeros([h]).with_requires_grad(true));
        store.insert(name("cab.w1"), he_normal(&[h, f], h, rng));
        store.insert(name("cab.b1"), Tensor::zeros([f]).with_requires_grad(true));
    }

    fn conv<'p, T: Scalar, G: Graph<'p, T>>(
        g: &mut G,
        store: &'p ParamStore<T>,
        part: &str,
        x: &G::Value,
    ) -> Result<G::Value> {
        let w = g.param_from(store, &name(&format!("{part}.weight")))?;
        let b = g.param_from(store, &name(&format!("{part}.bias")))?;
        g.conv2d(x, &w, Some(&b), Conv2dSpec::same(1))
    }

    /// Two stages of conv → ReLU → 2×2 max-pool: N×1×H×W → N×C×H/4×W/4.
    pub fn encode<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        x: &G::Value,
    ) -> Result<G::Value> {
        let (_, c, h, w) = g.value(x).dims4("encode")?;
        if c != 1 {
            return Err(Error::shape("encode", format!("expected a single-channel input, got {c} channels")));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape("encode", format!("spatial dims {h}×{w} must be divisible by 4")));
        }
        let mut cur = None;
        for part in ["enc1", "enc2"] {
            let input = cur.as_ref().unwrap_or(x);
            let y = Self::conv(g, store, part, input)?;
            let y = g.activation(&y, Activation::Relu);
            cur = Some(g.maxpool2d(&y, PoolSpec::new(2, 2))?);
        }
        Ok(cur.expect("two stages"))
    }

    /// Two stages of ×2 nearest upsample → conv → ReLU, restoring the input resolution.
    pub fn decode<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        enc: &G::Value,
    ) -> Result<G::Value> {
        let (_, c, _, _) = g.value(enc).dims4("decode")?;
        if c != self.config.encoder_channels[1] {
            return Err(Error::shape(
                "decode",
                format!("expected {} encoder channels, got {c}", self.config.encoder_channels[1]),
            ));
        }
        let mut cur = None;
        for part in ["dec1", "dec2"] {
            let input = cur.as_ref().unwrap_or(enc);
            let up = g.upsample2d(input, 2)?;
            let y = Self::conv(g, store, part, &up)?;
            cur = Some(g.activation(&y, Activation::Relu));
        }
        Ok(cur.expect("two stages"))
    }

    /// Global average pool followed by the two-layer MLP: N×f×H×W → N×f.
    pub fn channel_attention<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        dec: &G::Value,
    ) -> Result<G::Value> {
        let (_, c, _, _) = g.value(dec).dims4("channel_attention")?;
        if c != self.config.feature_maps() {
            return Err(Error::shape(
                "channel_attention",
                format!("expected {} feature maps, got {c}", self.config.feature_maps()),
            ));
        }
        let pooled = g.global_avg_pool(dec)?;
        let w0 = g.param_from(store, &name("cab.w0"))?;
        let b0 = g.param_from(store, &name("cab.b0"))?;
        let hidden = g.dense(&pooled, &w0, Some(&b0))?;
        let hidden = g.activation(&hidden, self.config.attention.inner);
        let w1 = g.param_from(store, &name("cab.w1"))?;
        let b1 = g.param_from(store, &name("cab.b1"))?;
        let logits = g.dense(&hidden, &w1, Some(&b1))?;
        Ok(g.activation(&logits, self.config.attention.outer))
    }

    /// Scales decoder maps by attention, fuses them with a 1×1 conv and applies tanh.
    pub fn generate_heatmap<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        dec: &G::Value,
        attn: &G::Value,
    ) -> Result<G::Value> {
        let scaled = g.broadcast_mul(dec, attn)?;
        let fused = Self::conv(g, store, "fuse", &scaled)?;
        Ok(g.activation(&fused, Activation::Tanh))
    }

    /// Full generator: N×1×H×W → N×1×H×W heatmap in (−1, 1).
    pub fn forward<'p, T: Scalar, G: Graph<'p, T>>(
        &self,
        g: &mut G,
        store: &'p ParamStore<T>,
        x: &G::Value,
    ) -> Result<G::Value> {
        let enc = self.encode(g, store, x)?;
        let dec = self.decode(g, store, &enc)?;
        let attn = self.channel_attention(g, store, &dec)?;
        self.generate_heatmap(g, store, &dec, &attn)
    }
}

/// Maps heatmap values from [−1, 1] to [0, 255] (round half up).
pub fn heatmap_to_pixel(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5 + 0.5).floor().min(255.0) as u8
}

/// Converts a 1×1×H×W heatmap to an 8-bit grayscale image.
pub fn heatmap_image<T: Scalar>(h: &Tensor<T>) -> Result<GrayImage> {
    let (n, c, hh, ww) = h.dims4("export_heatmap_image")?;
    if n != 1 || c != 1 {
        return Err(Error::shape("export_heatmap_image", format!("expected 1×1×H×W, got {:?}", h.shape())));
    }
    let pixels = h.data().iter().map(|v| heatmap_to_pixel(v.as_f64())).collect();
    Ok(GrayImage::from_raw(ww as u32, hh as u32, pixels).expect("buffer matches dims"))
}

/// Writes a heatmap as an 8-bit grayscale image (format from the extension, PNG recommended).
pub fn export_heatmap_image<T: Scalar>(h: &Tensor<T>, path: &Path) -> Result<()> {
    heatmap_image(h)?
        .save(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
