//! Decayed pairwise synchronization with phase weighting, and the output head.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// Sampled neuron pairs `(i, j)` with `i ≤ j`, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncPairs {
    pub pairs: Vec<(usize, usize)>,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl SyncPairs {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let left = pairs.iter().map(|p| p.0).collect();
        let right = pairs.iter().map(|p| p.1).collect();
        SyncPairs { pairs, left, right }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn left(&self) -> &[usize] {
        &self.left
    }

    pub fn right(&self) -> &[usize] {
        &self.right
    }
}

/// Draws `count` distinct pairs from the `D(D+1)/2` pairs with `i ≤ j`.
pub fn sample_pairs(neurons: usize, count: usize, seed: u64) -> Result<SyncPairs> {
    let total = neurons * (neurons + 1) / 2;
    if count > total {
        return Err(Error::arg(
            "sample_pairs",
            format!("{count} pairs requested but only {total} exist for {neurons} neurons"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, count);
    let mut all = Vec::with_capacity(total);
    for i in 0..neurons {
        for j in i..neurons {
            all.push((i, j));
        }
    }
    Ok(SyncPairs::new(picks.iter().map(|k| all[k]).collect()))
}

/// Per-pair decay rate `r = exp(ρ)` with `ρ` learnable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecayParams {
    pub log_rate: ParamId,
}

impl DecayParams {
    /// `ρ` uniform in `[lo, hi]`.
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, pairs: usize, lo: f64, hi: f64) -> Self {
        let data = (0..pairs).map(|_| rng.gen_range(lo..=hi)).collect();
        DecayParams {
            log_rate: store.add("sync.log_rate", Tensor::vector(data)),
        }
    }

    /// Per-tick retention factor `exp(−exp(ρ))`.
    pub fn retention(&self, tape: &mut Tape, log_rate: Var) -> Var {
        let r = tape.exp(log_rate);
        let neg = tape.scale(r, -1.0);
        tape.exp(neg)
    }
}

/// Sync values and their phase factors for one tick.
#[derive(Clone, Copy, Debug)]
pub struct SyncRepresentation {
    /// `[B, N_s]`
    pub values: Var,
    /// `[B, N_s]` or `[N_s]`; absent without oscillations.
    pub phase_weights: Option<Var>,
}

/// Running sums on a tape, updated once per tick.
#[derive(Clone, Debug)]
pub struct SyncAccumulator {
    retention: Var,
    prod: Option<Var>,
    weight: Option<Var>,
    cos_sum: Option<Var>,
    sin_sum: Option<Var>,
    ticks: usize,
}

impl SyncAccumulator {
    pub fn new(retention: Var) -> Self {
        SyncAccumulator {
            retention,
            prod: None,
            weight: None,
            cos_sum: None,
            sin_sum: None,
            ticks: 0,
        }
    }

    pub fn ticks(&self) -> usize {
        self.ticks
    }

    /// Adds tick `t` from the state `[B, D]` and optional phases.
    pub fn update(
        &mut self,
        tape: &mut Tape,
        pairs: &SyncPairs,
        state: Var,
        phase: Option<Var>,
    ) -> Result<()> {
        let zi = tape.gather(state, pairs.left())?;
        let zj = tape.gather(state, pairs.right())?;
        let prod = tape.mul(zi, zj)?;
        self.prod = Some(match self.prod {
            None => prod,
            Some(acc) => {
                let kept = tape.mul(acc, self.retention)?;
                tape.add(kept, prod)?
            }
        });
        self.weight = Some(match self.weight {
            None => tape.constant(Tensor::full(&[pairs.len()], 1.0)),
            Some(acc) => {
                let kept = tape.mul(acc, self.retention)?;
                tape.add_scalar(kept, 1.0)
            }
        });
        if let Some(phase) = phase {
            let pi = tape.gather(phase, pairs.left())?;
            let pj = tape.gather(phase, pairs.right())?;
            let diff = tape.sub(pi, pj)?;
            let c = tape.cos(diff);
            let s = tape.sin(diff);
            self.cos_sum = Some(accumulate(tape, self.cos_sum, c)?);
            self.sin_sum = Some(accumulate(tape, self.sin_sum, s)?);
        }
        self.ticks += 1;
        Ok(())
    }

    pub fn representation(&self, tape: &mut Tape) -> Result<SyncRepresentation> {
        let (Some(prod), Some(weight)) = (self.prod, self.weight) else {
            return Err(Error::arg("sync", "no ticks accumulated"));
        };
        let norm = tape.sqrt(weight);
        let values = tape.div(prod, norm)?;
        let (Some(c), Some(s)) = (self.cos_sum, self.sin_sum) else {
            return Ok(SyncRepresentation {
                values,
                phase_weights: None,
            });
        };
        let mag = tape.magnitude(c, s)?;
        let pw = tape.scale(mag, 1.0 / self.ticks as f64);
        Ok(SyncRepresentation {
            values: tape.mul(values, pw)?,
            phase_weights: Some(pw),
        })
    }

    /// Keeps only the listed batch rows.
    pub fn select_rows(&mut self, tape: &mut Tape, rows: &[usize]) -> Result<()> {
        for slot in [&mut self.prod, &mut self.cos_sum, &mut self.sin_sum] {
            if let Some(v) = *slot {
                if tape.value(v).rank() == 2 {
                    *slot = Some(tape.gather_rows(v, rows)?);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(tape: &mut Tape, acc: Option<Var>, x: Var) -> Result<Var> {
    Ok(match acc {
        None => x,
        Some(a) => tape.add(a, x)?,
    })
}

/// `y = S·W_outᵀ` with `W_out` of shape `[C, N_s]`.
pub fn output_logits(tape: &mut Tape, sync: Var, w_out: Var) -> Result<Var> {
    Ok(tape.matmul_nt(sync, w_out)?)
}

/// Direct evaluation of one sync entry from full histories. Phases are
/// optional; without them the phase factor is 1.
pub fn sync_entry(
    zi: &[f64],
    zj: &[f64],
    rate: f64,
    phases: Option<(&[f64], &[f64])>,
) -> Result<f64> {
    let t = zi.len();
    if t == 0 {
        return Err(Error::arg("sync_entry", "empty history"));
    }
    if zj.len() != t || phases.is_some_and(|(a, b)| a.len() != t || b.len() != t) {
        return Err(Error::arg("sync_entry", "history lengths differ"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for tau in 0..t {
        let w = libm::exp(-rate * (t - 1 - tau) as f64);
        num += w * zi[tau] * zj[tau];
        den += w;
    }
    let factor = match phases {
        None => 1.0,
        Some((pi, pj)) => {
            let (mut re, mut im) = (0.0, 0.0);
            for tau in 0..t {
                re += libm::cos(pi[tau] - pj[tau]);
                im += libm::sin(pi[tau] - pj[tau]);
            }
            libm::hypot(re, im) / t as f64
        }
    };
    Ok(num / libm::sqrt(den) * factor)
}

/// Constant-time-per-tick version of [`sync_entry`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyncEntryAccumulator {
    retention: f64,
    prod: f64,
    weight: f64,
    re: f64,
    im: f64,
    ticks: usize,
    phased: bool,
}

impl SyncEntryAccumulator {
    pub fn new(rate: f64, phased: bool) -> Self {
        SyncEntryAccumulator {
            retention: libm::exp(-rate),
            prod: 0.0,
            weight: 0.0,
            re: 0.0,
            im: 0.0,
            ticks: 0,
            phased,
        }
    }

    pub fn push(&mut self, zi: f64, zj: f64, dphi: f64) {
        self.prod = self.prod * self.retention + zi * zj;
        self.weight = self.weight * self.retention + 1.0;
        self.re += libm::cos(dphi);
        self.im += libm::sin(dphi);
        self.ticks += 1;
    }

    pub fn value(&self) -> Option<f64> {
        if self.ticks == 0 {
            return None;
        }
        let factor = if self.phased {
            libm::hypot(self.re, self.im) / self.ticks as f64
        } else {
            1.0
        };
        Some(self.prod / libm::sqrt(self.weight) * factor)
    }
}
