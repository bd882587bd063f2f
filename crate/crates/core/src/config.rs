//! Hyperparameters, ablation switches and the stopping policy.

use alloc::format;

use crate::error::{Error, Result};

/// Component switches used by ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flags {
    /// Oscillator bank feeding the combined state and phase-weighted sync.
    pub oscillation: bool,
    /// Modulation network driving the bank, FiLM gains and attention temperature.
    pub neuromodulation: bool,
    /// Complexity-gated deep/shallow mixture. Off means shallow pathway only.
    pub sda: bool,
    /// Attention temperature from the mean amplitude signal.
    pub attention_modulation: bool,
    /// Gains on the first hidden layer of both pathways.
    pub film: bool,
    /// Queries read the combined state instead of the raw state.
    pub query_from_combined: bool,
    /// One oscillator bank per sample. When off, a single bank is driven by
    /// batch-averaged signals.
    pub per_sample_bank: bool,
}

impl Flags {
    pub const ALL_ON: Flags = Flags {
        oscillation: true,
        neuromodulation: true,
        sda: true,
        attention_modulation: true,
        film: true,
        query_from_combined: true,
        per_sample_bank: true,
    };

    /// Plain recurrent path: no oscillators, modulation, mixture or gains.
    pub const ALL_OFF: Flags = Flags {
        oscillation: false,
        neuromodulation: false,
        sda: false,
        attention_modulation: false,
        film: false,
        query_from_combined: false,
        per_sample_bank: true,
    };
}

impl Default for Flags {
    fn default() -> Self {
        Flags::ALL_ON
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub classes: usize,
    /// Widths of the first two backbone blocks; the third is `feature_dim`.
    pub backbone_widths: [usize; 2],
    pub feature_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    /// Neuron count D.
    pub neurons: usize,
    pub sync_pairs: usize,
    pub memory_len: usize,
    pub gamma_hidden: usize,
    pub omega_hidden: usize,
    /// Widest layer of the deep pathway.
    pub deep_width: usize,
    pub dropout: f64,
    pub tick_ms: f64,
    pub lambda: f64,
    pub kappa_freq: f64,
    pub kappa_phase: f64,
    pub kappa_amp: f64,
    /// Weight of entropy certainty in the combined certainty.
    pub beta: f64,
    pub z0_std: f64,
    /// Range of the initial log decay rates.
    pub decay_init: [f64; 2],
    /// Init gain of the pathway output layers.
    pub update_gain: f64,
    pub layernorm_eps: f64,
    pub init_seed: u64,
    pub pair_seed: u64,
    pub flags: Flags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            channels: 3,
            classes: 10,
            backbone_widths: [16, 32],
            feature_dim: 32,
            key_dim: 32,
            value_dim: 32,
            heads: 1,
            neurons: 128,
            sync_pairs: 512,
            memory_len: 8,
            gamma_hidden: 64,
            omega_hidden: 32,
            deep_width: 256,
            dropout: 0.1,
            tick_ms: 10.0,
            lambda: 0.1,
            kappa_freq: 0.1,
            kappa_phase: 0.1,
            kappa_amp: 0.1,
            beta: 0.5,
            z0_std: 0.02,
            decay_init: [-3.0, 0.0],
            update_gain: 0.5,
            layernorm_eps: 1e-5,
            init_seed: 0,
            pair_seed: 0,
            flags: Flags::ALL_ON,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(key: &'static str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
            Ok(())
        }
        positive("model.channels", self.channels)?;
        positive("model.backbone_widths", self.backbone_widths[0])?;
        positive("model.backbone_widths", self.backbone_widths[1])?;
        positive("model.feature_dim", self.feature_dim)?;
        positive("model.key_dim", self.key_dim)?;
        positive("model.value_dim", self.value_dim)?;
        positive("model.heads", self.heads)?;
        positive("model.sync_pairs", self.sync_pairs)?;
        positive("model.gamma_hidden", self.gamma_hidden)?;
        positive("model.omega_hidden", self.omega_hidden)?;
        if self.deep_width < 2 {
            return Err(Error::config("model.deep_width", "must be at least 2"));
        }
        if self.image_size < 8 {
            return Err(Error::config("model.image_size", "must be at least 8"));
        }
        if self.classes < 2 {
            return Err(Error::config("model.classes", "need at least 2 classes"));
        }
        if self.feature_dim % 2 != 0 {
            return Err(Error::config("model.feature_dim", "must be even"));
        }
        if self.neurons < 4 {
            return Err(Error::config("model.neurons", "need at least 4 neurons"));
        }
        if self.key_dim % self.heads != 0 || self.value_dim % self.heads != 0 {
            return Err(Error::config(
                "model.heads",
                format!(
                    "{} heads do not divide key_dim {} and value_dim {}",
                    self.heads, self.key_dim, self.value_dim
                ),
            ));
        }
        let max_pairs = self.neurons * (self.neurons + 1) / 2;
        if self.sync_pairs > max_pairs {
            return Err(Error::config(
                "model.sync_pairs",
                format!("{} exceeds the {max_pairs} available pairs", self.sync_pairs),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        if !(self.tick_ms > 0.0 && self.tick_ms.is_finite()) {
            return Err(Error::config("osc.tick_ms", "must be positive"));
        }
        for (key, v) in [
            ("osc.lambda", self.lambda),
            ("osc.kappa_freq", self.kappa_freq),
            ("osc.kappa_phase", self.kappa_phase),
            ("osc.kappa_amp", self.kappa_amp),
            ("model.z0_std", self.z0_std),
            ("model.update_gain", self.update_gain),
            ("model.layernorm_eps", self.layernorm_eps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, "must be finite and non-negative"));
            }
        }
        let [lo, hi] = self.decay_init;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("sync.decay_init", "needs finite lo <= hi"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("certainty.beta", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Certainty-gated termination rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopPolicy {
    pub epsilon: f64,
    pub tau: f64,
    pub window: usize,
    pub t_min: usize,
    pub t_max: usize,
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy {
            epsilon: 0.01,
            tau: 0.75,
            window: 2,
            t_min: 5,
            t_max: 50,
        }
    }
}

impl StopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::config("policy.t_max", "must be positive"));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::config("policy.t_min", "must satisfy 1 <= t_min <= t_max"));
        }
        if self.window == 0 {
            return Err(Error::config("policy.window", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("policy.epsilon", "must be positive"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("policy.tau", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub policy: StopPolicy,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds data order and dropout; model init uses `model.init_seed`.
    pub seed: u64,
    /// Optional global gradient-norm cap.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            policy: StopPolicy::default(),
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.policy.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::config("train.max_grad_norm", "must be positive"));
            }
        }
        Ok(())
    }
}
