//! The assembled model and its tick loop.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::auxiliary::{
    advance, attention_temperature, combine_state, oscillatory_state, phase_coherence,
    entropy_certainty, BankState, CertaintyRecord, FilmNet, GammaNet, Kappas, OscillatorBank,
};
use crate::config::{ModelConfig, StopPolicy};
use crate::control::{argmax, entropy, entropy_change, should_stop, RunTrace, SampleTick, TickDetail, TickRecord};
use crate::error::{Error, Result};
use crate::executive::{
    attend, estimate_complexity, make_query, synaptic_update, update_state, ActivationMemory,
    ComplexityNet, SynapsePathways,
};
use crate::layers::Dropout;
use crate::numerics::{kernels, normal, uniform, wrap_phase, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::perception::Perception;
use crate::synchrony::{output_logits, sample_pairs, DecayParams, SyncAccumulator, SyncPairs};

/// How the tick loop runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Full `T` ticks with dropout drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// No dropout. With `early_exit` each sample leaves the batch once the
    /// stopping rule holds.
    Eval { early_exit: bool },
}

/// Everything the loop produced on the tape.
#[derive(Debug)]
pub struct Forward {
    pub trace: RunTrace,
    /// Logits `[B, C]` per tick. Only filled when no sample left early.
    pub logits: Vec<Var>,
    pub memory: ActivationMemory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub perception: Perception,
    pub bank: OscillatorBank,
    pub gamma: GammaNet,
    pub film: FilmNet,
    pub w_q: ParamId,
    pub omega: ComplexityNet,
    pub pathways: SynapsePathways,
    pub z0: ParamId,
    pub pairs: SyncPairs,
    pub decay: DecayParams,
    pub w_out: ParamId,
}

impl Model {
    /// Builds and initializes every parameter from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let cfg = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut params = ParamStore::new();
        let perception = Perception::new(&mut params, &mut rng, cfg);
        let bank = OscillatorBank::new(&mut params, cfg)?;
        let gamma = GammaNet::new(&mut params, &mut rng, cfg);
        let film = FilmNet::new(&mut params, &mut rng, cfg);
        let d = cfg.neurons;
        let w_q = params.add(
            "executive.w_q",
            uniform(&mut rng, &[d, cfg.key_dim], 1.0 / libm::sqrt(d as f64)),
        );
        let omega = ComplexityNet::new(&mut params, &mut rng, cfg);
        let pathways = SynapsePathways::new(&mut params, &mut rng, cfg);
        let z0 = params.add("executive.z0", normal(&mut rng, &[d], cfg.z0_std));
        let pairs = sample_pairs(d, cfg.sync_pairs, cfg.pair_seed)?;
        let decay = DecayParams::new(&mut params, &mut rng, pairs.len(), cfg.decay_init[0], cfg.decay_init[1]);
        let w_out = params.add(
            "sync.w_out",
            uniform(
                &mut rng,
                &[cfg.classes, pairs.len()],
                1.0 / libm::sqrt(pairs.len() as f64),
            ),
        );
        Ok(Model {
            config,
            params,
            perception,
            bank,
            gamma,
            film,
            w_q,
            omega,
            pathways,
            z0,
            pairs,
            decay,
            w_out,
        })
    }

    /// Runs up to `policy.t_max` ticks on `[B, H, W, C]` pixels.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        pixels: &Tensor,
        policy: &StopPolicy,
        mode: Mode,
        detail: bool,
    ) -> Result<Forward> {
        policy.validate()?;
        let cfg = &self.config;
        let flags = cfg.flags;
        let shape = pixels.shape();
        if shape.len() != 4 || shape[3] != cfg.channels {
            return Err(Error::arg(
                "forward",
                alloc::format!("expected [B, H, W, {}] pixels, got {shape:?}", cfg.channels),
            ));
        }
        let b = shape[0];
        let d = cfg.neurons;
        let early_exit = matches!(mode, Mode::Eval { early_exit: true });
        let mut dropout = match mode {
            Mode::Train { dropout_seed } if cfg.dropout > 0.0 => Some(Dropout::new(cfg.dropout, dropout_seed)),
            _ => None,
        };

        let x = tape.constant(pixels.clone());
        let fmap = self.perception.encode(tape, p, x)?;
        let mut kv = self.perception.project_kv(tape, p, &fmap)?;
        let mut alpha = if flags.sda {
            Some(estimate_complexity(tape, p, fmap.pooled, &self.omega)?)
        } else {
            None
        };
        let alpha_values = alpha.map(|a| tape.data(a).to_vec());

        let zeros = tape.constant(Tensor::zeros(&[b, d]));
        let mut z = tape.add(zeros, p[self.z0])?;
        let (mut bank, freq) = if flags.oscillation {
            let (s, f) = self.bank.start(tape, p)?;
            (Some(s), Some(f))
        } else {
            (None, None)
        };
        let mut zc = match bank {
            Some(s) => {
                let osc = oscillatory_state(tape, s)?;
                combine_state(tape, z, osc, cfg.lambda)?
            }
            None => z,
        };
        let mut shadow = FreeBank::new(&self.params, &self.bank);
        let kappas = Kappas::from_config(cfg);
        let retention = self.decay.retention(tape, p[self.decay.log_rate]);
        let mut sync = SyncAccumulator::new(retention);
        let mut prev_damp: Option<Var> = None;
        let mut memory = ActivationMemory::new(cfg.memory_len);

        let mut active: Vec<usize> = (0..b).collect();
        let mut history: Vec<Vec<f64>> = vec![Vec::with_capacity(policy.t_max); b];
        let mut last: Vec<Option<SampleTick>> = vec![None; b];
        let mut last_detail: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![Default::default(); b];
        let mut stop_tick = vec![policy.t_max; b];
        let mut ticks = Vec::with_capacity(policy.t_max);
        let mut logits_per_tick = Vec::new();
        let mut probs = vec![0.0; cfg.classes];

        for t in 1..=policy.t_max {
            let q_in = if flags.query_from_combined { zc } else { z };
            let q = make_query(tape, q_in, p[self.w_q])?;
            let temp = match prev_damp {
                Some(damp) if flags.attention_modulation => Some(attention_temperature(tape, damp)?),
                _ => None,
            };
            let att = attend(tape, q, &kv, temp, cfg.heads)?;
            let mods = if flags.neuromodulation {
                Some(self.gamma.generate(tape, p, att.output, !flags.per_sample_bank)?)
            } else {
                None
            };
            if let (Some(s), Some(f)) = (bank, freq) {
                bank = Some(advance(tape, s, f, mods.as_ref(), kappas)?);
            }
            let film = match mods {
                Some(m) if flags.film => Some(self.film.gains(tape, p, &m)?),
                _ => None,
            };
            let a = synaptic_update(
                tape,
                p,
                zc,
                att.output,
                alpha,
                &self.pathways,
                film.as_ref(),
                dropout.as_mut(),
            )?;
            z = update_state(tape, z, a)?;
            check(tape, z, t, "state")?;
            zc = match bank {
                Some(s) => {
                    let osc = oscillatory_state(tape, s)?;
                    combine_state(tape, z, osc, cfg.lambda)?
                }
                None => z,
            };
            check(tape, zc, t, "combined state")?;
            sync.update(tape, &self.pairs, zc, bank.map(|s| s.phase))?;
            let rep = sync.representation(tape)?;
            check(tape, rep.values, t, "synchronization")?;
            let logits = output_logits(tape, rep.values, p[self.w_out])?;
            check(tape, logits, t, "logits")?;
            prev_damp = mods.map(|m| m.damp);
            memory.push(tape.value(a).detached());
            shadow.step();

            let rows = active.len();
            let phase_rows = bank.map(|s| tape.value(s.phase).clone());
            let mut keep = Vec::with_capacity(rows);
            for (r, &sample) in active.iter().enumerate() {
                let row = tape.value(logits).row(r);
                kernels::softmax_row(row, &mut probs);
                let h = entropy(&probs)?;
                history[sample].push(h);
                let dh = entropy_change(&history[sample], policy.window);
                let ce = entropy_certainty(&probs)?;
                let cp = match &phase_rows {
                    Some(ph) if ph.rank() == 2 => phase_coherence(ph.row(r)),
                    Some(ph) => phase_coherence(ph.data()),
                    None => phase_coherence(&shadow.phase),
                };
                let certainty = CertaintyRecord::new(ce, cp, cfg.beta);
                let gate = should_stop(dh, certainty.total, t, policy);
                last[sample] = Some(SampleTick {
                    logits: row.to_vec(),
                    entropy: h,
                    entropy_change: dh,
                    certainty,
                    gate,
                    active: true,
                });
                if detail {
                    let attn = tape.value(att.weights).row(r).to_vec();
                    let act = tape.value(a).row(r).iter().map(|v| v.abs()).collect();
                    let ph = match &phase_rows {
                        Some(ph) if ph.rank() == 2 => ph.row(r).to_vec(),
                        Some(ph) => ph.data().to_vec(),
                        None => Vec::new(),
                    };
                    last_detail[sample] = (attn, act, ph);
                }
                if early_exit && gate {
                    stop_tick[sample] = t;
                } else {
                    keep.push(r);
                }
            }
            let samples = last
                .iter()
                .map(|s| s.clone().expect("every sample ran at least one tick"))
                .collect();
            let tick_detail = detail.then(|| TickDetail {
                attention: last_detail.iter().map(|x| x.0.clone()).collect(),
                activation: last_detail.iter().map(|x| x.1.clone()).collect(),
                phases: last_detail.iter().map(|x| x.2.clone()).collect(),
            });
            ticks.push(TickRecord {
                tick: t,
                samples,
                detail: tick_detail,
            });
            for s in last.iter_mut().flatten() {
                s.active = false;
            }
            if !early_exit {
                logits_per_tick.push(logits);
            }
            if keep.len() == rows {
                continue;
            }
            if keep.is_empty() {
                break;
            }
            active = keep.iter().map(|&r| active[r]).collect();
            z = tape.gather_rows(z, &keep)?;
            zc = tape.gather_rows(zc, &keep)?;
            kv.keys = tape.gather_rows(kv.keys, &keep)?;
            kv.values = tape.gather_rows(kv.values, &keep)?;
            alpha = alpha.map(|a| tape.gather_rows(a, &keep)).transpose()?;
            prev_damp = prev_damp.map(|v| tape.gather_rows(v, &keep)).transpose()?;
            if let Some(s) = bank {
                bank = Some(BankState {
                    phase: rows_if_batched(tape, s.phase, &keep)?,
                    amplitude: rows_if_batched(tape, s.amplitude, &keep)?,
                });
            }
            sync.select_rows(tape, &keep)?;
        }

        let predictions = (0..b)
            .map(|s| argmax(&ticks[stop_tick[s] - 1].samples[s].logits))
            .collect();
        Ok(Forward {
            trace: RunTrace {
                batch: b,
                classes: cfg.classes,
                ticks,
                stop_tick,
                predictions,
                alpha: alpha_values,
            },
            logits: logits_per_tick,
            memory,
        })
    }
}

fn check(tape: &Tape, v: Var, tick: usize, quantity: &'static str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { tick, quantity })
    }
}

fn rows_if_batched(tape: &mut Tape, v: Var, rows: &[usize]) -> Result<Var> {
    if tape.value(v).rank() == 2 {
        Ok(tape.gather_rows(v, rows)?)
    } else {
        Ok(v)
    }
}

/// Unmodulated copy of the bank that supplies phase coherence when the
/// oscillators are switched off.
struct FreeBank {
    phase: Vec<f64>,
    freq: Vec<f64>,
}

impl FreeBank {
    fn new(params: &ParamStore, bank: &OscillatorBank) -> Self {
        let offset = params.get(bank.freq_offset).data();
        let freq = bank
            .assignment
            .base_freq
            .iter()
            .zip(offset)
            .map(|(b, o)| b + o)
            .collect();
        let phase = params.get(bank.init_phase).data().iter().map(|&p| wrap_phase(p)).collect();
        FreeBank { phase, freq }
    }

    fn step(&mut self) {
        for (p, f) in self.phase.iter_mut().zip(&self.freq) {
            *p = wrap_phase(*p + TAU * f);
        }
    }
}
