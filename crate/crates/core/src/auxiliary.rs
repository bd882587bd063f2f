//! Oscillator bank, neuromodulatory signals, FiLM gains and certainty.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::control::entropy;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Unary, Var};

/// Frequency band of one neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    Gamma,
    Beta,
    Alpha,
    Theta,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Gamma, Band::Beta, Band::Alpha, Band::Theta];

    pub fn hz(self) -> (f64, f64) {
        match self {
            Band::Gamma => (40.0, 100.0),
            Band::Beta => (13.0, 30.0),
            Band::Alpha => (8.0, 12.0),
            Band::Theta => (4.0, 7.0),
        }
    }

    /// Band limits in cycles per tick.
    pub fn cycles_per_tick(self, tick_ms: f64) -> (f64, f64) {
        let (lo, hi) = self.hz();
        (lo * tick_ms / 1000.0, hi * tick_ms / 1000.0)
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Gamma => "gamma",
            Band::Beta => "beta",
            Band::Alpha => "alpha",
            Band::Theta => "theta",
        }
    }
}

/// Fixed per-neuron band labels and base frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct BandAssignment {
    pub bands: Vec<Band>,
    /// Cycles per tick.
    pub base_freq: Vec<f64>,
}

/// Round-robin band assignment with base frequencies drawn uniformly inside
/// each band.
pub fn assign_bands(neurons: usize, seed: u64, tick_ms: f64) -> Result<BandAssignment> {
    if neurons < 4 {
        return Err(Error::arg(
            "assign_bands",
            format!("need at least 4 neurons, got {neurons}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bands: Vec<Band> = (0..neurons).map(|d| Band::ALL[d % 4]).collect();
    let base_freq = bands
        .iter()
        .map(|b| {
            let (lo, hi) = b.cycles_per_tick(tick_ms);
            rng.gen_range(lo..=hi)
        })
        .collect();
    Ok(BandAssignment { bands, base_freq })
}

/// Learnable oscillator parameters plus the fixed band assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct OscillatorBank {
    pub assignment: BandAssignment,
    /// `δω_d`, starts at zero.
    pub freq_offset: ParamId,
    pub init_phase: ParamId,
    pub init_amplitude: ParamId,
}

/// Phase and amplitude on a tape, `[D]` or `[B, D]`.
#[derive(Clone, Copy, Debug)]
pub struct BankState {
    pub phase: Var,
    pub amplitude: Var,
}

impl OscillatorBank {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let assignment = assign_bands(cfg.neurons, cfg.init_seed ^ 0x6261_6e64, cfg.tick_ms)?;
        let d = cfg.neurons;
        Ok(OscillatorBank {
            assignment,
            freq_offset: store.add("bank.freq_offset", Tensor::zeros(&[d])),
            init_phase: store.add("bank.init_phase", Tensor::zeros(&[d])),
            init_amplitude: store.add("bank.init_amplitude", Tensor::full(&[d], 1.0)),
        })
    }

    /// Initial state and the per-neuron frequency `ω_base + δω`.
    pub fn start(&self, tape: &mut Tape, p: &Bound) -> Result<(BankState, Var)> {
        let base = tape.constant(Tensor::vector(self.assignment.base_freq.clone()));
        let freq = tape.add(base, p[self.freq_offset])?;
        let phase = tape.unary(p[self.init_phase], Unary::WrapPhase);
        Ok((
            BankState {
                phase,
                amplitude: p[self.init_amplitude],
            },
            freq,
        ))
    }
}

/// Modulation signals, each `[B, D]` and inside `[-1, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct ModulationSignals {
    pub dfreq: Var,
    pub dphase: Var,
    pub damp: Var,
    /// All three concatenated, `[B, 3D]`.
    pub joined: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kappas {
    pub freq: f64,
    pub phase: f64,
    pub amp: f64,
}

impl Kappas {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Kappas {
            freq: cfg.kappa_freq,
            phase: cfg.kappa_phase,
            amp: cfg.kappa_amp,
        }
    }
}

/// One tick of phase accumulation with optional modulation.
pub fn advance(
    tape: &mut Tape,
    state: BankState,
    freq: Var,
    mods: Option<&ModulationSignals>,
    kappas: Kappas,
) -> Result<BankState> {
    let Some(m) = mods else {
        let step = tape.scale(freq, TAU);
        let phase = tape.add(state.phase, step)?;
        return Ok(BankState {
            phase: tape.unary(phase, Unary::WrapPhase),
            amplitude: state.amplitude,
        });
    };
    for v in [m.dfreq, m.dphase, m.damp] {
        if !tape.value(v).is_finite() {
            return Err(Error::arg("advance", "non-finite modulation signal"));
        }
    }
    let gain = tape.scale(m.dfreq, kappas.freq);
    let gain = tape.add_scalar(gain, 1.0);
    let omega = tape.mul(gain, freq)?;
    let step = tape.scale(omega, TAU);
    let nudge = tape.scale(m.dphase, kappas.phase);
    let phase = tape.add(step, state.phase)?;
    let phase = tape.add(phase, nudge)?;
    let amp_gain = tape.scale(m.damp, kappas.amp);
    let amp_gain = tape.add_scalar(amp_gain, 1.0);
    let amplitude = tape.mul(amp_gain, state.amplitude)?;
    Ok(BankState {
        phase: tape.unary(phase, Unary::WrapPhase),
        amplitude: tape.relu(amplitude),
    })
}

/// `A ⊙ sin φ`.
pub fn oscillatory_state(tape: &mut Tape, state: BankState) -> Result<Var> {
    let s = tape.sin(state.phase);
    Ok(tape.mul(state.amplitude, s)?)
}

/// `z + λ·z_osc`, broadcasting a `[D]` oscillation over the batch.
pub fn combine_state(tape: &mut Tape, z: Var, z_osc: Var, lambda: f64) -> Result<Var> {
    let scaled = tape.scale(z_osc, lambda);
    Ok(tape.add(z, scaled)?)
}

/// Modulation network `d_v → hidden → 3D` with tanh output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GammaNet {
    pub hidden: Linear,
    pub output: Linear,
    neurons: usize,
}

impl GammaNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        GammaNet {
            hidden: Linear::new(store, rng, "gamma.hidden", cfg.value_dim, cfg.gamma_hidden, 1.0),
            output: Linear::new(store, rng, "gamma.output", cfg.gamma_hidden, 3 * cfg.neurons, 1.0),
            neurons: cfg.neurons,
        }
    }

    /// Signals from the attention output `[B, d_v]`. With `shared` the
    /// batch mean is broadcast back to every row.
    pub fn generate(
        &self,
        tape: &mut Tape,
        p: &Bound,
        o: Var,
        shared: bool,
    ) -> Result<ModulationSignals> {
        let h = self.hidden.forward(tape, p, o)?;
        let h = tape.tanh(h);
        let m = self.output.forward(tape, p, h)?;
        let mut m = tape.tanh(m);
        if shared {
            let b = tape.shape(m)[0];
            let d3 = 3 * self.neurons;
            let stacked = tape.reshape(m, &[1, b, d3])?;
            let mean = tape.mean_pool(stacked)?;
            let mean = tape.reshape(mean, &[d3])?;
            let zeros = tape.constant(Tensor::zeros(&[b, d3]));
            m = tape.add(zeros, mean)?;
        }
        let d = self.neurons;
        Ok(ModulationSignals {
            dfreq: tape.slice_last(m, 0, d)?,
            dphase: tape.slice_last(m, d, d)?,
            damp: tape.slice_last(m, 2 * d, d)?,
            joined: m,
        })
    }
}

/// Gains `1 + M·G` for the first hidden layer of each pathway. `G` starts
/// at zero so the gains start at one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilmNet {
    pub deep: Linear,
    pub shallow: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct FilmGains {
    pub deep: Var,
    pub shallow: Var,
}

impl FilmNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let d3 = 3 * cfg.neurons;
        let film = FilmNet {
            deep: Linear::new(store, rng, "film.deep", d3, cfg.deep_width, 1.0),
            shallow: Linear::new(store, rng, "film.shallow", d3, cfg.neurons, 1.0),
        };
        film.deep.zero(store);
        film.shallow.zero(store);
        film
    }

    pub fn gains(&self, tape: &mut Tape, p: &Bound, mods: &ModulationSignals) -> Result<FilmGains> {
        let deep = self.deep.forward(tape, p, mods.joined)?;
        let shallow = self.shallow.forward(tape, p, mods.joined)?;
        Ok(FilmGains {
            deep: tape.add_scalar(deep, 1.0),
            shallow: tape.add_scalar(shallow, 1.0),
        })
    }
}

/// Per-row attention temperature `1 + mean(δA)`, shape `[B]`.
pub fn attention_temperature(tape: &mut Tape, damp: Var) -> Result<Var> {
    let shape = tape.shape(damp).to_vec();
    let (b, d) = (shape[0], shape[1]);
    let ones = tape.constant(Tensor::full(&[d, 1], 1.0 / d as f64));
    let mean = tape.matmul(damp, ones)?;
    let mean = tape.reshape(mean, &[b])?;
    Ok(tape.add_scalar(mean, 1.0))
}

/// `|mean_d e^{iφ_d}|`. Zero for an empty bank.
pub fn phase_coherence(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return 0.0;
    }
    let (mut re, mut im) = (0.0, 0.0);
    for &p in phases {
        re += libm::cos(p);
        im += libm::sin(p);
    }
    let n = phases.len() as f64;
    libm::hypot(re / n, im / n).min(1.0)
}

/// `1 − H(p)/ln C`, clamped into `[0, 1]`.
pub fn entropy_certainty(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InvalidDistribution {
            reason: format!("need at least 2 classes, got {}", probs.len()),
        });
    }
    let h = entropy(probs)?;
    Ok((1.0 - h / libm::log(probs.len() as f64)).clamp(0.0, 1.0))
}

pub fn total_certainty(entropy_certainty: f64, phase_certainty: f64, beta: f64) -> f64 {
    beta * entropy_certainty + (1.0 - beta) * phase_certainty
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertaintyRecord {
    pub entropy_certainty: f64,
    pub phase_certainty: f64,
    pub total: f64,
    pub beta: f64,
}

impl CertaintyRecord {
    pub fn new(entropy_certainty: f64, phase_certainty: f64, beta: f64) -> Self {
        CertaintyRecord {
            entropy_certainty,
            phase_certainty,
            total: total_certainty(entropy_certainty, phase_certainty, beta),
            beta,
        }
    }
}
