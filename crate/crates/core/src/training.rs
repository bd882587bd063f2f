//! Dual-point loss, Adam, cosine schedule, the training loop and evaluation.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{StopPolicy, TrainConfig};
use crate::control::{run_ticks, RunTrace};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::numerics::{kernels, ParamStore, Tape, Var};

/// Softmax cross-entropy of one logit row.
pub fn tick_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::arg(
            "tick_loss",
            format!("label {label} out of range for {} classes", logits.len()),
        ));
    }
    let mut logp = vec![0.0; logits.len()];
    kernels::log_softmax_row(logits, &mut logp);
    Ok(-logp[label])
}

/// `(t1, t2)` as zero-based tick indices: lowest loss and highest
/// certainty, earliest on ties.
pub fn select_ticks(losses: &[f64], certainties: &[f64]) -> (usize, usize) {
    let mut t1 = 0;
    let mut t2 = 0;
    for t in 1..losses.len() {
        if losses[t] < losses[t1] {
            t1 = t;
        }
        if certainties[t] > certainties[t2] {
            t2 = t;
        }
    }
    (t1, t2)
}

/// `(L_{t1} + L_{t2})/2` for one sample.
pub fn aggregate_loss(losses: &[f64], certainties: &[f64]) -> Result<f64> {
    if losses.is_empty() || losses.len() != certainties.len() {
        return Err(Error::arg(
            "aggregate_loss",
            format!("{} losses and {} certainties", losses.len(), certainties.len()),
        ));
    }
    let (t1, t2) = select_ticks(losses, certainties);
    Ok((losses[t1] + losses[t2]) / 2.0)
}

/// Batch-mean dual-point loss on the tape from per-tick logits and the
/// certainties recorded in `trace`. Returns the loss and the selected ticks.
pub fn dual_point_loss(
    tape: &mut Tape,
    logits: &[Var],
    labels: &[usize],
    trace: &RunTrace,
) -> Result<(Var, Vec<(usize, usize)>)> {
    if logits.is_empty() || logits.len() != trace.ticks.len() {
        return Err(Error::arg("dual_point_loss", "needs a full-length trace"));
    }
    let b = labels.len();
    let mut columns = Vec::with_capacity(logits.len());
    for &l in logits {
        let ce = tape.cross_entropy(l, labels)?;
        columns.push(tape.reshape(ce, &[b, 1])?);
    }
    let table = tape.concat(&columns)?;
    let t = logits.len();
    let values = tape.data(table).to_vec();
    let mut picks = Vec::with_capacity(b);
    for s in 0..b {
        let losses = &values[s * t..(s + 1) * t];
        let cert: Vec<f64> = trace.ticks.iter().map(|r| r.samples[s].certainty.total).collect();
        picks.push(select_ticks(losses, &cert));
    }
    let first: Vec<usize> = picks.iter().map(|p| p.0).collect();
    let second: Vec<usize> = picks.iter().map(|p| p.1).collect();
    let l1 = tape.pick(table, &first)?;
    let l2 = tape.pick(table, &second)?;
    let both = tape.add(l1, l2)?;
    let mean = tape.mean(both);
    Ok((tape.scale(mean, 0.5), picks))
}

/// `lr0·(1 + cos(π·step/total))/2`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr0 * (1.0 + libm::cos(core::f64::consts::PI * frac)) / 2.0
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
    skipped: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    /// Applies one update. Returns `false`, leaving everything untouched,
    /// when any gradient entry is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<bool> {
        if grads.len() != store.len() {
            return Err(Error::arg(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.len() != store.get(id).len() {
                return Err(Error::arg(
                    "adam_step",
                    format!("gradient for `{}` has {} entries", store.name(id), g.len()),
                ));
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        self.steps += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.steps as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.steps as f64);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = store.get_mut(id).data_mut();
            for i in 0..w.len() {
                let g = grads[k][i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        Ok(true)
    }
}

/// Per-epoch log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_mean_certainty: Option<f64>,
    pub val_mean_stop_tick: Option<f64>,
    pub lr: f64,
    pub skipped_steps: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Training stopped on a non-finite loss or state; carries the last model
/// that completed an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Diverged {
    pub epoch: usize,
    pub step: usize,
    pub cause: Error,
    pub last_good: Box<Model>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    Invalid(Error),
    Diverged(Diverged),
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Invalid(e)
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Invalid(e) => e.fmt(f),
            TrainError::Diverged(d) => write!(
                f,
                "training diverged in epoch {} at step {}: {}",
                d.epoch, d.step, d.cause
            ),
        }
    }
}

/// One optimization step on a batch. Returns the batch loss and the number
/// of correct final-tick predictions.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    pixels: &crate::numerics::Tensor,
    labels: &[usize],
    policy: &StopPolicy,
    lr: f64,
    dropout_seed: u64,
    max_grad_norm: Option<f64>,
) -> Result<(f64, usize, bool)> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let fwd = model.forward(&mut tape, &p, pixels, policy, Mode::Train { dropout_seed }, false)?;
    let (loss, _) = dual_point_loss(&mut tape, &fwd.logits, labels, &fwd.trace)?;
    let value = tape.value(loss).item().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            tick: policy.t_max,
            quantity: "loss",
        });
    }
    let correct = fwd.trace.correct(labels);
    let vars: Vec<Var> = p.vars().to_vec();
    let grads = tape.backward(loss)?;
    let mut g: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    for (gi, (_, t)) in g.iter_mut().zip(model.params.iter()) {
        if gi.is_empty() {
            *gi = vec![0.0; t.len()];
        }
    }
    if let Some(cap) = max_grad_norm {
        let norm = libm::sqrt(g.iter().flatten().map(|x| x * x).sum::<f64>());
        if norm.is_finite() && norm > cap {
            let s = cap / norm;
            g.iter_mut().flatten().for_each(|x| *x *= s);
        }
    }
    let applied = adam.step(&mut model.params, &g, lr)?;
    Ok((value, correct, applied))
}

/// Trains from a fresh model built from `cfg.model`.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> core::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone())?;
    train_model(cfg, model, train_set, val_set, on_epoch)
}

/// Trains an existing model.
pub fn train_model(
    cfg: &TrainConfig,
    mut model: Model,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> core::result::Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    for ds in core::iter::once(train_set).chain(val_set) {
        if ds.classes != model.config.classes {
            return Err(Error::config(
                "model.classes",
                format!("model has {} classes, dataset `{}` has {}", model.config.classes, ds.name, ds.classes),
            )
            .into());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut step = 0usize;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut last_good = model.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut lr = cfg.lr;
        for chunk in order.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total_steps, cfg.lr);
            let pixels = train_set.batch(chunk);
            let labels = train_set.labels_of(chunk);
            let dropout_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step as u64;
            let result = train_step(
                &mut model,
                &mut adam,
                &pixels,
                &labels,
                &cfg.policy,
                lr,
                dropout_seed,
                cfg.max_grad_norm,
            );
            let (loss, ok, _) = match result {
                Ok(r) => r,
                Err(cause @ Error::NonFinite { .. }) => {
                    return Err(TrainError::Diverged(Diverged {
                        epoch,
                        step,
                        cause,
                        last_good: Box::new(last_good),
                    }))
                }
                Err(e) => return Err(e.into()),
            };
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            seen += chunk.len();
            step += 1;
        }
        let val = match val_set {
            Some(v) => Some(evaluate(&model, v, &cfg.policy, true, cfg.batch_size.max(1))?),
            None => None,
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_accuracy: val.as_ref().map(|v| v.accuracy),
            val_mean_certainty: val.as_ref().map(|v| v.mean_certainty),
            val_mean_stop_tick: val.as_ref().map(|v| v.mean_stop_tick),
            lr,
            skipped_steps: adam.skipped(),
        };
        on_epoch(&m);
        metrics.push(m);
        last_good = model.clone();
    }
    Ok(TrainOutcome { model, metrics })
}

/// Outcome for one evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub stop_tick: usize,
    pub certainty: f64,
    pub entropy_certainty: f64,
    pub phase_certainty: f64,
    /// Combined certainty at the last tick computed for this sample's run.
    pub final_certainty: f64,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_stop_tick: f64,
    pub mean_certainty: f64,
    pub samples: Vec<SampleOutcome>,
}

/// Runs the model over a dataset in eval mode.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    policy: &StopPolicy,
    early_exit: bool,
    batch_size: usize,
) -> Result<EvalMetrics> {
    if ds.classes != model.config.classes {
        return Err(Error::config(
            "model.classes",
            format!("model has {} classes, dataset has {}", model.config.classes, ds.classes),
        ));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut samples = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let trace = run_ticks(model, &ds.batch(chunk), policy, Mode::Eval { early_exit })?;
        for (k, &i) in chunk.iter().enumerate() {
            let at = trace.at_stop(k);
            samples.push(SampleOutcome {
                index: i,
                label: ds.labels[i],
                prediction: trace.predictions[k],
                stop_tick: trace.stop_tick[k],
                certainty: at.certainty.total,
                entropy_certainty: at.certainty.entropy_certainty,
                phase_certainty: at.certainty.phase_certainty,
                final_certainty: trace.ticks.last().map_or(at.certainty.total, |r| {
                    r.samples[k].certainty.total
                }),
                logits: at.logits.clone(),
            });
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalMetrics {
        accuracy: samples.iter().filter(|s| s.label == s.prediction).count() as f64 / n,
        mean_stop_tick: samples.iter().map(|s| s.stop_tick as f64).sum::<f64>() / n,
        mean_certainty: samples.iter().map(|s| s.certainty).sum::<f64>() / n,
        samples,
    })
}
