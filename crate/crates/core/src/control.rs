//! Entropy tracking, the stopping rule, run traces and the tick-loop driver.

use alloc::format;
use alloc::vec::Vec;

use crate::auxiliary::CertaintyRecord;
use crate::config::StopPolicy;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::numerics::{Tape, Tensor};

const DISTRIBUTION_TOL: f64 = 1e-9;

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution {
            reason: "empty distribution".into(),
        });
    }
    let mut sum = 0.0;
    let mut h = 0.0;
    for &p in probs {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidDistribution {
                reason: format!("entry {p} is not a probability"),
            });
        }
        sum += p;
        if p > 0.0 {
            h -= p * libm::log(p);
        }
    }
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidDistribution {
            reason: format!("entries sum to {sum}"),
        });
    }
    Ok(h.max(0.0))
}

/// `|H^t − H^{t−k}|/k` over an entropy history ending at tick `t`, or
/// `None` while fewer than `k+1` values exist.
pub fn entropy_change(history: &[f64], window: usize) -> Option<f64> {
    if window == 0 || history.len() < window + 1 {
        return None;
    }
    let now = history[history.len() - 1];
    let then = history[history.len() - 1 - window];
    Some((now - then).abs() / window as f64)
}

/// `ΔH < ε`, `C_total > τ` and `t ≥ T_min`. A missing `ΔH` never passes.
pub fn should_stop(dh: Option<f64>, certainty: f64, tick: usize, policy: &StopPolicy) -> bool {
    match dh {
        Some(dh) => dh < policy.epsilon && certainty > policy.tau && tick >= policy.t_min,
        None => false,
    }
}

/// One sample at one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTick {
    pub logits: Vec<f64>,
    pub entropy: f64,
    pub entropy_change: Option<f64>,
    pub certainty: CertaintyRecord,
    /// The stopping rule held at this tick.
    pub gate: bool,
    /// The sample was computed at this tick rather than frozen.
    pub active: bool,
}

/// Optional per-tick internals for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct TickDetail {
    /// Attention over feature positions per sample.
    pub attention: Vec<Vec<f64>>,
    /// `|a^t|` per neuron per sample.
    pub activation: Vec<Vec<f64>>,
    /// Oscillator phases per sample, empty without oscillations.
    pub phases: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub samples: Vec<SampleTick>,
    pub detail: Option<TickDetail>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub batch: usize,
    pub classes: usize,
    pub ticks: Vec<TickRecord>,
    /// Tick whose outputs each sample reports.
    pub stop_tick: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Complexity coefficient per sample, when the mixture is enabled.
    pub alpha: Option<Vec<f64>>,
}

impl RunTrace {
    /// Record of `sample` at its stop tick.
    pub fn at_stop(&self, sample: usize) -> &SampleTick {
        &self.ticks[self.stop_tick[sample] - 1].samples[sample]
    }

    pub fn mean_stop_tick(&self) -> f64 {
        mean(self.stop_tick.iter().map(|&t| t as f64))
    }

    pub fn mean_certainty(&self) -> f64 {
        mean((0..self.batch).map(|s| self.at_stop(s).certainty.total))
    }

    pub fn correct(&self, labels: &[usize]) -> usize {
        self.predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count()
    }

    /// First tick at which the stopping rule held, else the last tick.
    pub fn first_gate(&self, sample: usize) -> usize {
        self.ticks
            .iter()
            .find(|r| r.samples[sample].gate)
            .map_or(self.ticks.len(), |r| r.tick)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Index of the largest entry, earliest on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Runs the tick loop without recording gradients.
pub fn run_ticks(model: &Model, pixels: &Tensor, policy: &StopPolicy, mode: Mode) -> Result<RunTrace> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let fwd = model.forward(&mut tape, &p, pixels, policy, mode, false)?;
    Ok(fwd.trace)
}
