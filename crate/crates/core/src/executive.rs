//! Query generation, attention, complexity-gated synaptic update and the
//! activation memory.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::auxiliary::FilmGains;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{Dropout, Linear};
use crate::numerics::{Bound, ParamStore, Tape, Tensor, Var};
use crate::perception::KvPair;

/// `q = z_eff·W_q`.
pub fn make_query(tape: &mut Tape, state: Var, w_q: Var) -> Result<Var> {
    Ok(tape.matmul(state, w_q)?)
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// `[B, d_v]`
    pub output: Var,
    /// `[B, N]`, averaged over heads.
    pub weights: Var,
}

/// Scaled dot-product attention of one query per row over `N` positions.
/// `temperature` (`[B]`) multiplies the logits row-wise.
pub fn attend(
    tape: &mut Tape,
    q: Var,
    kv: &KvPair,
    temperature: Option<Var>,
    heads: usize,
) -> Result<Attention> {
    let qs = tape.shape(q).to_vec();
    let ks = tape.shape(kv.keys).to_vec();
    let vs = tape.shape(kv.values).to_vec();
    if ks.len() != 3 || vs.len() != 3 || qs.len() != 2 {
        return Err(Error::arg(
            "attend",
            format!("expected q [B, d], keys/values [B, N, d]; got {qs:?}, {ks:?}, {vs:?}"),
        ));
    }
    let (b, n) = (ks[0], ks[1]);
    if n == 0 {
        return Err(Error::arg("attend", "no feature positions to attend over"));
    }
    if qs[0] != b || qs[1] != ks[2] || vs[0] != b || vs[1] != n {
        return Err(Error::arg(
            "attend",
            format!("shapes do not conform: q {qs:?}, keys {ks:?}, values {vs:?}"),
        ));
    }
    if heads == 0 || ks[2] % heads != 0 || vs[2] % heads != 0 {
        return Err(Error::arg("attend", format!("{heads} heads do not divide the key/value widths")));
    }
    let (dk, dv) = (ks[2] / heads, vs[2] / heads);
    let scale = 1.0 / libm::sqrt(dk as f64);
    let q3 = tape.reshape(q, &[b, 1, ks[2]])?;
    let mut outputs = Vec::with_capacity(heads);
    let mut weights: Option<Var> = None;
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q3, kv.keys, kv.values)
        } else {
            (
                tape.slice_last(q3, h * dk, dk)?,
                tape.slice_last(kv.keys, h * dk, dk)?,
                tape.slice_last(kv.values, h * dv, dv)?,
            )
        };
        let logits = tape.bmm(qh, kh, true)?;
        let mut logits = tape.scale(logits, scale);
        if let Some(t) = temperature {
            logits = tape.mul_rows(logits, t)?;
        }
        let w = tape.softmax(logits);
        outputs.push(tape.bmm(w, vh, false)?);
        weights = Some(match weights {
            None => w,
            Some(acc) => tape.add(acc, w)?,
        });
    }
    let out = if heads == 1 { outputs[0] } else { tape.concat(&outputs)? };
    let output = tape.reshape(out, &[b, vs[2]])?;
    let w = weights.expect("at least one head");
    let w = tape.scale(w, 1.0 / heads as f64);
    let weights = tape.reshape(w, &[b, n])?;
    Ok(Attention { output, weights })
}

/// Complexity network `Ω: d → hidden → 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityNet {
    pub hidden: Linear,
    pub output: Linear,
}

impl ComplexityNet {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        ComplexityNet {
            hidden: Linear::new(store, rng, "omega.hidden", cfg.feature_dim, cfg.omega_hidden, 1.0),
            output: Linear::new(store, rng, "omega.output", cfg.omega_hidden, 1, 1.0),
        }
    }
}

/// `α = sigmoid(Ω(pooled))`, shape `[B]`.
pub fn estimate_complexity(tape: &mut Tape, p: &Bound, pooled: Var, omega: &ComplexityNet) -> Result<Var> {
    let b = tape.shape(pooled)[0];
    let h = omega.hidden.forward(tape, p, pooled)?;
    let h = tape.relu(h);
    let logit = omega.output.forward(tape, p, h)?;
    let alpha = tape.sigmoid(logit);
    Ok(tape.reshape(alpha, &[b])?)
}

/// U-shaped deep pathway: `in → w → w/2 → w → D`, with the first hidden
/// layer added back before the last projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeepPathway {
    pub down: Linear,
    pub bottleneck: Linear,
    pub up: Linear,
    pub out: Linear,
}

/// One hidden layer with relu and layernorm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShallowPathway {
    pub hidden: Linear,
    pub out: Linear,
    pub ln_eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynapsePathways {
    pub deep: DeepPathway,
    pub shallow: ShallowPathway,
}

impl SynapsePathways {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Self {
        let input = cfg.neurons + cfg.value_dim;
        let w = cfg.deep_width;
        let d = cfg.neurons;
        SynapsePathways {
            deep: DeepPathway {
                down: Linear::new(store, rng, "deep.down", input, w, 1.0),
                bottleneck: Linear::new(store, rng, "deep.bottleneck", w, w / 2, 1.0),
                up: Linear::new(store, rng, "deep.up", w / 2, w, 1.0),
                out: Linear::new(store, rng, "deep.out", w, d, cfg.update_gain),
            },
            shallow: ShallowPathway {
                hidden: Linear::new(store, rng, "shallow.hidden", input, d, 1.0),
                out: Linear::new(store, rng, "shallow.out", d, d, cfg.update_gain),
                ln_eps: cfg.layernorm_eps,
            },
        }
    }
}

impl DeepPathway {
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        gain: Option<Var>,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let h1 = self.down.forward(tape, p, x)?;
        let mut h1 = tape.relu(h1);
        if let Some(g) = gain {
            h1 = tape.mul(h1, g)?;
        }
        let mut dropout = dropout;
        if let Some(d) = dropout.as_deref_mut() {
            h1 = d.apply(tape, h1)?;
        }
        let h2 = self.bottleneck.forward(tape, p, h1)?;
        let mut h2 = tape.relu(h2);
        if let Some(d) = dropout.as_deref_mut() {
            h2 = d.apply(tape, h2)?;
        }
        let h3 = self.up.forward(tape, p, h2)?;
        let h3 = tape.relu(h3);
        let h3 = tape.add(h3, h1)?;
        self.out.forward(tape, p, h3).map_err(Into::into)
    }
}

impl ShallowPathway {
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        gain: Option<Var>,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h);
        let mut h = tape.layernorm(h, self.ln_eps);
        if let Some(g) = gain {
            h = tape.mul(h, g)?;
        }
        if let Some(d) = dropout {
            h = d.apply(tape, h)?;
        }
        self.out.forward(tape, p, h).map_err(Into::into)
    }
}

/// Activation `a = α·deep(x) + (1−α)·shallow(x)` with `x = [z_eff, o]`.
/// Without `alpha` only the shallow pathway runs.
#[allow(clippy::too_many_arguments)]
pub fn synaptic_update(
    tape: &mut Tape,
    p: &Bound,
    state: Var,
    o: Var,
    alpha: Option<Var>,
    pathways: &SynapsePathways,
    film: Option<&FilmGains>,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let x = tape.concat(&[state, o])?;
    let shallow = pathways.shallow.forward(
        tape,
        p,
        x,
        film.map(|f| f.shallow),
        dropout.as_deref_mut(),
    )?;
    let Some(alpha) = alpha else {
        return Ok(shallow);
    };
    if let Some(bad) = tape.data(alpha).iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::arg(
            "synaptic_update",
            format!("mixing coefficient {bad} outside [0, 1]"),
        ));
    }
    let deep = pathways.deep.forward(tape, p, x, film.map(|f| f.deep), dropout)?;
    mix(tape, alpha, deep, shallow)
}

/// Row-wise convex combination `α·deep + (1−α)·shallow`.
pub fn mix(tape: &mut Tape, alpha: Var, deep: Var, shallow: Var) -> Result<Var> {
    let d = tape.mul_rows(deep, alpha)?;
    let rest = tape.scale(alpha, -1.0);
    let rest = tape.add_scalar(rest, 1.0);
    let s = tape.mul_rows(shallow, rest)?;
    Ok(tape.add(d, s)?)
}

/// `z' = z + a`.
pub fn update_state(tape: &mut Tape, z: Var, a: Var) -> Result<Var> {
    Ok(tape.add(z, a)?)
}

/// Ring buffer of the most recent activations.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMemory {
    capacity: usize,
    items: VecDeque<Tensor>,
}

impl ActivationMemory {
    pub fn new(capacity: usize) -> Self {
        ActivationMemory {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, a: Tensor) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(a);
    }

    /// Oldest first.
    pub fn window(&self) -> impl Iterator<Item = &Tensor> {
        self.items.iter()
    }

    pub fn newest(&self) -> Option<&Tensor> {
        self.items.back()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}
