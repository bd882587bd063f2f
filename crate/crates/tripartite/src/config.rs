//! Text experiment configuration: `key = value` lines with dotted keys and
//! `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tripartite_core::{ModelConfig, StopPolicy, TrainConfig};

use crate::error::AppError;

/// Version of the config text, echoed into every output.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Generated shapes.
    Synth,
    /// Binary record files.
    Binary,
}

/// Where the train and evaluation sets come from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Seeds the generated sets; validation uses `seed + 100`.
    pub seed: u64,
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub human_probs: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            train_samples: 900,
            val_samples: 300,
            seed: 100,
            train_file: None,
            test_file: None,
            human_probs: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertaintySource {
    /// Combined certainty at each sample's stop tick.
    Stop,
    /// Combined certainty at the last tick run.
    Final,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub early_exit: bool,
    pub noise_seed: u64,
    pub human_certainty: CertaintySource,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: 100,
            early_exit: true,
            noise_seed: 7,
            human_certainty: CertaintySource::Stop,
        }
    }
}

/// Everything a command needs besides its own flags.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub name: String,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, AppError> {
    v.parse()
        .map_err(|_| AppError::config(key, format!("cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, AppError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(AppError::config(key, format!("expected on/off, got `{v}`"))),
    }
}

fn parse_pair<T: FromStr + Copy>(key: &str, v: &str) -> Result<[T; 2], AppError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(AppError::config(key, format!("expected two comma-separated values, got `{v}`")));
    }
    Ok([parse(key, parts[0])?, parse(key, parts[1])?])
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".into(), |p| p.display().to_string())
}

fn show_bool(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Floats render with `{:?}` so they parse back bit-exactly.
fn f(v: f64) -> String {
    format!("{v:?}")
}

/// Every key in render order.
pub const KEYS: &[&str] = &[
    "name",
    "model.image_size",
    "model.channels",
    "model.classes",
    "model.backbone_widths",
    "model.feature_dim",
    "model.key_dim",
    "model.value_dim",
    "model.heads",
    "model.neurons",
    "model.sync_pairs",
    "model.memory_len",
    "model.gamma_hidden",
    "model.omega_hidden",
    "model.deep_width",
    "model.dropout",
    "model.z0_std",
    "model.update_gain",
    "model.layernorm_eps",
    "model.init_seed",
    "model.pair_seed",
    "osc.tick_ms",
    "osc.lambda",
    "osc.kappa_freq",
    "osc.kappa_phase",
    "osc.kappa_amp",
    "certainty.beta",
    "sync.decay_init",
    "flags.oscillation",
    "flags.neuromodulation",
    "flags.sda",
    "flags.attention_modulation",
    "flags.film",
    "flags.query_from_combined",
    "flags.per_sample_bank",
    "policy.epsilon",
    "policy.tau",
    "policy.window",
    "policy.t_min",
    "policy.t_max",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.seed",
    "train.max_grad_norm",
    "data.source",
    "data.train_samples",
    "data.val_samples",
    "data.seed",
    "data.train_file",
    "data.test_file",
    "data.human_probs",
    "eval.batch_size",
    "eval.early_exit",
    "eval.noise_seed",
    "eval.human_certainty",
];

impl ExperimentConfig {
    pub fn model(&self) -> &ModelConfig {
        &self.train.model
    }

    pub fn policy(&self) -> &StopPolicy {
        &self.train.policy
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), AppError> {
        let v = v.trim();
        let m = &mut self.train.model;
        let p = &mut self.train.policy;
        let d = &mut self.data;
        let e = &mut self.eval;
        match key {
            "name" => self.name = v.to_string(),
            "model.image_size" => m.image_size = parse(key, v)?,
            "model.channels" => m.channels = parse(key, v)?,
            "model.classes" => m.classes = parse(key, v)?,
            "model.backbone_widths" => m.backbone_widths = parse_pair(key, v)?,
            "model.feature_dim" => m.feature_dim = parse(key, v)?,
            "model.key_dim" => m.key_dim = parse(key, v)?,
            "model.value_dim" => m.value_dim = parse(key, v)?,
            "model.heads" => m.heads = parse(key, v)?,
            "model.neurons" => m.neurons = parse(key, v)?,
            "model.sync_pairs" => m.sync_pairs = parse(key, v)?,
            "model.memory_len" => m.memory_len = parse(key, v)?,
            "model.gamma_hidden" => m.gamma_hidden = parse(key, v)?,
            "model.omega_hidden" => m.omega_hidden = parse(key, v)?,
            "model.deep_width" => m.deep_width = parse(key, v)?,
            "model.dropout" => m.dropout = parse(key, v)?,
            "model.z0_std" => m.z0_std = parse(key, v)?,
            "model.update_gain" => m.update_gain = parse(key, v)?,
            "model.layernorm_eps" => m.layernorm_eps = parse(key, v)?,
            "model.init_seed" => m.init_seed = parse(key, v)?,
            "model.pair_seed" => m.pair_seed = parse(key, v)?,
            "osc.tick_ms" => m.tick_ms = parse(key, v)?,
            "osc.lambda" => m.lambda = parse(key, v)?,
            "osc.kappa_freq" => m.kappa_freq = parse(key, v)?,
            "osc.kappa_phase" => m.kappa_phase = parse(key, v)?,
            "osc.kappa_amp" => m.kappa_amp = parse(key, v)?,
            "certainty.beta" => m.beta = parse(key, v)?,
            "sync.decay_init" => m.decay_init = parse_pair(key, v)?,
            "flags.oscillation" => m.flags.oscillation = parse_bool(key, v)?,
            "flags.neuromodulation" => m.flags.neuromodulation = parse_bool(key, v)?,
            "flags.sda" => m.flags.sda = parse_bool(key, v)?,
            "flags.attention_modulation" => m.flags.attention_modulation = parse_bool(key, v)?,
            "flags.film" => m.flags.film = parse_bool(key, v)?,
            "flags.query_from_combined" => m.flags.query_from_combined = parse_bool(key, v)?,
            "flags.per_sample_bank" => m.flags.per_sample_bank = parse_bool(key, v)?,
            "policy.epsilon" => p.epsilon = parse(key, v)?,
            "policy.tau" => p.tau = parse(key, v)?,
            "policy.window" => p.window = parse(key, v)?,
            "policy.t_min" => p.t_min = parse(key, v)?,
            "policy.t_max" => p.t_max = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.max_grad_norm" => {
                self.train.max_grad_norm = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "data.source" => {
                d.source = match v {
                    "synth" => DataSource::Synth,
                    "binary" => DataSource::Binary,
                    _ => return Err(AppError::config(key, format!("expected synth or binary, got `{v}`"))),
                }
            }
            "data.train_samples" => d.train_samples = parse(key, v)?,
            "data.val_samples" => d.val_samples = parse(key, v)?,
            "data.seed" => d.seed = parse(key, v)?,
            "data.train_file" => d.train_file = parse_path(v),
            "data.test_file" => d.test_file = parse_path(v),
            "data.human_probs" => d.human_probs = parse_path(v),
            "eval.batch_size" => e.batch_size = parse(key, v)?,
            "eval.early_exit" => e.early_exit = parse_bool(key, v)?,
            "eval.noise_seed" => e.noise_seed = parse(key, v)?,
            "eval.human_certainty" => {
                e.human_certainty = match v {
                    "stop" => CertaintySource::Stop,
                    "final" => CertaintySource::Final,
                    _ => return Err(AppError::config(key, format!("expected stop or final, got `{v}`"))),
                }
            }
            _ => return Err(AppError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.train.model;
        let p = &self.train.policy;
        let d = &self.data;
        let e = &self.eval;
        Some(match key {
            "name" => self.name.clone(),
            "model.image_size" => m.image_size.to_string(),
            "model.channels" => m.channels.to_string(),
            "model.classes" => m.classes.to_string(),
            "model.backbone_widths" => format!("{},{}", m.backbone_widths[0], m.backbone_widths[1]),
            "model.feature_dim" => m.feature_dim.to_string(),
            "model.key_dim" => m.key_dim.to_string(),
            "model.value_dim" => m.value_dim.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.neurons" => m.neurons.to_string(),
            "model.sync_pairs" => m.sync_pairs.to_string(),
            "model.memory_len" => m.memory_len.to_string(),
            "model.gamma_hidden" => m.gamma_hidden.to_string(),
            "model.omega_hidden" => m.omega_hidden.to_string(),
            "model.deep_width" => m.deep_width.to_string(),
            "model.dropout" => f(m.dropout),
            "model.z0_std" => f(m.z0_std),
            "model.update_gain" => f(m.update_gain),
            "model.layernorm_eps" => f(m.layernorm_eps),
            "model.init_seed" => m.init_seed.to_string(),
            "model.pair_seed" => m.pair_seed.to_string(),
            "osc.tick_ms" => f(m.tick_ms),
            "osc.lambda" => f(m.lambda),
            "osc.kappa_freq" => f(m.kappa_freq),
            "osc.kappa_phase" => f(m.kappa_phase),
            "osc.kappa_amp" => f(m.kappa_amp),
            "certainty.beta" => f(m.beta),
            "sync.decay_init" => format!("{},{}", f(m.decay_init[0]), f(m.decay_init[1])),
            "flags.oscillation" => show_bool(m.flags.oscillation).into(),
            "flags.neuromodulation" => show_bool(m.flags.neuromodulation).into(),
            "flags.sda" => show_bool(m.flags.sda).into(),
            "flags.attention_modulation" => show_bool(m.flags.attention_modulation).into(),
            "flags.film" => show_bool(m.flags.film).into(),
            "flags.query_from_combined" => show_bool(m.flags.query_from_combined).into(),
            "flags.per_sample_bank" => show_bool(m.flags.per_sample_bank).into(),
            "policy.epsilon" => f(p.epsilon),
            "policy.tau" => f(p.tau),
            "policy.window" => p.window.to_string(),
            "policy.t_min" => p.t_min.to_string(),
            "policy.t_max" => p.t_max.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lr" => f(self.train.lr),
            "train.seed" => self.train.seed.to_string(),
            "train.max_grad_norm" => self.train.max_grad_norm.map_or("none".into(), f),
            "data.source" => match d.source {
                DataSource::Synth => "synth".into(),
                DataSource::Binary => "binary".into(),
            },
            "data.train_samples" => d.train_samples.to_string(),
            "data.val_samples" => d.val_samples.to_string(),
            "data.seed" => d.seed.to_string(),
            "data.train_file" => show_path(&d.train_file),
            "data.test_file" => show_path(&d.test_file),
            "data.human_probs" => show_path(&d.human_probs),
            "eval.batch_size" => e.batch_size.to_string(),
            "eval.early_exit" => show_bool(e.early_exit).into(),
            "eval.noise_seed" => e.noise_seed.to_string(),
            "eval.human_certainty" => match e.human_certainty {
                CertaintySource::Stop => "stop".into(),
                CertaintySource::Final => "final".into(),
            },
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), AppError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(AppError::config(
                    "config",
                    format!("line {}: expected `key = value`, got `{}`", n + 1, raw.trim()),
                ));
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, AppError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<(), AppError> {
        for s in sets {
            let s = s.as_ref();
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| AppError::config(s.to_string(), "override must look like key=value"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), AppError> {
        self.train.validate()?;
        if self.eval.batch_size == 0 {
            return Err(AppError::config("eval.batch_size", "must be positive"));
        }
        if self.data.source == DataSource::Synth && self.train.model.channels != 3 {
            return Err(AppError::config("model.channels", "generated shapes have 3 channels"));
        }
        Ok(())
    }

    /// Full text form; [`parse`](Self::parse) of it gives back `self`.
    pub fn render(&self) -> String {
        let mut out = format!("# tripartite config v{CONFIG_VERSION}\n");
        let mut section = "";
        for key in KEYS {
            let head = key.split('.').next().unwrap_or("");
            if head != section && key.contains('.') {
                out.push('\n');
                section = head;
            }
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }
}
