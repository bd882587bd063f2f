#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripartite_core::numerics::Tensor;
use tripartite_core::{Flags, ModelConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Small model on 16×16 inputs: a 2×2 feature grid, so N = 4 positions.
pub fn tiny_config(flags: Flags) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        classes: 3,
        backbone_widths: [4, 6],
        feature_dim: 8,
        key_dim: 8,
        value_dim: 8,
        neurons: 16,
        sync_pairs: 24,
        memory_len: 4,
        gamma_hidden: 8,
        omega_hidden: 6,
        deep_width: 12,
        dropout: 0.0,
        layernorm_eps: 1e-3,
        init_seed: 5,
        pair_seed: 6,
        flags,
        ..ModelConfig::default()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Naive `[m, k] × [k, n]` product.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    out
}
