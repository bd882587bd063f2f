//! Convolutional encoder, fixed positional embedding and key/value projection.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{uniform, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Encoder output on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    /// `[B, h, w, d]`
    pub features: Var,
    /// `[B, N, d]` with `N = h·w`.
    pub flat: Var,
    /// `[B, d]` spatial mean.
    pub pooled: Var,
    pub grid: (usize, usize),
}

#[derive(Clone, Copy, Debug)]
pub struct KvPair {
    /// `[B, N, d_k]`
    pub keys: Var,
    /// `[B, N, d_v]`
    pub values: Var,
}

/// 2-D sinusoidal embedding of shape `[h, w, d]`. The first `d/2` channels
/// encode the row, the rest the column.
pub fn positional_embed(h: usize, w: usize, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::arg(
            "positional_embed",
            format!("channel count must be even and positive, got {d}"),
        ));
    }
    let half = d / 2;
    let mut data = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            for (pos, _) in [(r, 0), (c, 1)] {
                for i in 0..half {
                    let pair = (i / 2) as f64;
                    let freq = 1.0 / libm::pow(10_000.0, 2.0 * pair / half as f64);
                    let angle = pos as f64 * freq;
                    data.push(if i % 2 == 0 {
                        libm::sin(angle)
                    } else {
                        libm::cos(angle)
                    });
                }
            }
        }
    }
    Ok(Tensor::new(&[h, w, d], data)?)
}

/// Output side length of a 3×3, stride-2, pad-1 convolution.
fn downsample(n: usize) -> usize {
    (n - 1) / 2 + 1
}

/// Keys and values from the flattened feature map.
pub fn project_kv(tape: &mut Tape, flat: Var, w_k: Var, w_v: Var) -> Result<KvPair> {
    let keys = tape.matmul(flat, w_k)?;
    let values = tape.matmul(flat, w_v)?;
    Ok(KvPair { keys, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvBlock {
    weight: ParamId,
    bias: ParamId,
    ln_gain: ParamId,
    ln_shift: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perception {
    blocks: Vec<ConvBlock>,
    pub w_k: ParamId,
    pub w_v: ParamId,
    feature_dim: usize,
    ln_eps: f64,
}

impl Perception {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let widths = [cfg.backbone_widths[0], cfg.backbone_widths[1], cfg.feature_dim];
        let mut blocks = Vec::with_capacity(3);
        let mut inputs = cfg.channels;
        for (i, &out) in widths.iter().enumerate() {
            let fan_in = 9 * inputs;
            let bound = libm::sqrt(6.0 / fan_in as f64);
            blocks.push(ConvBlock {
                weight: store.add(
                    format!("backbone.{i}.weight"),
                    uniform(rng, &[fan_in, out], bound),
                ),
                bias: store.add(format!("backbone.{i}.bias"), Tensor::zeros(&[out])),
                ln_gain: store.add(format!("backbone.{i}.ln_gain"), Tensor::full(&[out], 1.0)),
                ln_shift: store.add(format!("backbone.{i}.ln_shift"), Tensor::zeros(&[out])),
            });
            inputs = out;
        }
        let d = cfg.feature_dim;
        let bound = 1.0 / libm::sqrt(d as f64);
        let w_k = store.add("perception.w_k", uniform(rng, &[d, cfg.key_dim], bound));
        let w_v = store.add("perception.w_v", uniform(rng, &[d, cfg.value_dim], bound));
        Perception {
            blocks,
            w_k,
            w_v,
            feature_dim: d,
            ln_eps: cfg.layernorm_eps,
        }
    }

    /// Feature grid for an `h×w` input.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let min = 1usize << self.blocks.len();
        if h < min || w < min {
            return Err(Error::arg(
                "encode",
                format!("input {h}x{w} is smaller than the backbone minimum {min}x{min}"),
            ));
        }
        let (mut h, mut w) = (h, w);
        for _ in &self.blocks {
            h = downsample(h);
            w = downsample(w);
        }
        Ok((h, w))
    }

    /// Encodes `[B, H, W, C]` pixels into an embedded feature map.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, pixels: Var) -> Result<FeatureMap> {
        let shape = tape.shape(pixels).to_vec();
        if shape.len() != 4 {
            return Err(Error::arg(
                "encode",
                format!("expected [B, H, W, C] pixels, got {shape:?}"),
            ));
        }
        let (b, grid) = (shape[0], self.grid(shape[1], shape[2])?);
        let mut x = pixels;
        for block in &self.blocks {
            x = tape.conv2d(x, p[block.weight], 3, 2, 1)?;
            x = tape.add(x, p[block.bias])?;
            x = tape.relu(x);
            x = tape.layernorm(x, self.ln_eps);
            x = tape.mul(x, p[block.ln_gain])?;
            x = tape.add(x, p[block.ln_shift])?;
        }
        let pos = tape.constant(positional_embed(grid.0, grid.1, self.feature_dim)?);
        let features = tape.add(x, pos)?;
        let flat = tape.reshape(features, &[b, grid.0 * grid.1, self.feature_dim])?;
        let pooled = tape.mean_pool(flat)?;
        Ok(FeatureMap {
            features,
            flat,
            pooled,
            grid,
        })
    }

    pub fn project_kv(&self, tape: &mut Tape, p: &Bound, fmap: &FeatureMap) -> Result<KvPair> {
        project_kv(tape, fmap.flat, p[self.w_k], p[self.w_v])
    }
}
