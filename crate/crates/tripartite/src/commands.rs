//! Experiment commands. Each writes its files into one output directory
//! and returns what it wrote, so scripts and tests share one code path.

use std::path::Path;

use serde::Serialize;
use tripartite_core::auxiliary::phase_coherence;
use tripartite_core::control::{argmax, run_ticks, RunTrace};
use tripartite_core::data::{add_gaussian_noise, correlation, human_agreement, Dataset};
use tripartite_core::numerics::Tape;
use tripartite_core::training::{train, TrainError};
use tripartite_core::{Mode, Model, StopPolicy};

use crate::checkpoint::Checkpoint;
use crate::config::{CertaintySource, ExperimentConfig, KEYS};
use crate::datasets::{eval_set, train_set};
use crate::error::AppError;
use crate::output::{
    create_dir, csv_writer, mean_std, write_config, write_json, EpochRecord, JsonLines, FORMAT_VERSION,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.tbc";

/// Config for replicate `seed`: training order, initialization, pair
/// sampling and generated data all follow it.
pub fn replicate(base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.train.seed = seed;
    cfg.train.model.init_seed = seed;
    cfg.train.model.pair_seed = seed;
    cfg.data.seed = base.data.seed.wrapping_add(seed);
    cfg
}

/// Keys that change the model's parameters or forward pass and so cannot
/// be overridden on a trained checkpoint.
pub fn is_model_key(key: &str) -> bool {
    ["model.", "osc.", "certainty.", "sync.", "flags."]
        .iter()
        .any(|p| key.starts_with(p))
}

/// Applies overrides to a checkpoint's config, refusing model keys.
pub fn checkpoint_overrides<S: AsRef<str>>(cfg: &mut ExperimentConfig, sets: &[S]) -> Result<(), AppError> {
    for s in sets {
        let key = s.as_ref().split('=').next().unwrap_or("").trim();
        if is_model_key(key) {
            return Err(AppError::config(key, "fixed by the checkpoint"));
        }
    }
    cfg.apply_overrides(sets)?;
    cfg.validate()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub format_version: u32,
    pub seed: u64,
    pub dataset: String,
    pub samples: usize,
    pub early_exit: bool,
    pub t_max: usize,
    pub accuracy: f64,
    pub mean_stop_tick: f64,
    pub mean_certainty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRow {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub stop_tick: usize,
    pub certainty: f64,
    pub entropy_certainty: f64,
    pub phase_certainty: f64,
    pub final_certainty: f64,
    pub logits: Vec<f64>,
}

/// Per-tick aggregates over every sample still running at that tick.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TickAggregate {
    pub active: usize,
    pub gated: usize,
    pub entropy: f64,
    pub entropy_certainty: f64,
    pub phase_certainty: f64,
    pub certainty: f64,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub summary: EvalSummary,
    pub samples: Vec<SampleRow>,
    pub ticks: Vec<TickAggregate>,
}

fn accumulate(ticks: &mut Vec<TickAggregate>, trace: &RunTrace, labels: &[usize]) {
    if ticks.len() < trace.ticks.len() {
        ticks.resize(trace.ticks.len(), TickAggregate::default());
    }
    for (agg, rec) in ticks.iter_mut().zip(&trace.ticks) {
        for (k, s) in rec.samples.iter().enumerate().filter(|(_, s)| s.active) {
            agg.active += 1;
            agg.gated += s.gate as usize;
            agg.entropy += s.entropy;
            agg.entropy_certainty += s.certainty.entropy_certainty;
            agg.phase_certainty += s.certainty.phase_certainty;
            agg.certainty += s.certainty.total;
            agg.correct += (argmax(&s.logits) == labels[k]) as usize;
        }
    }
}

/// Evaluates `model` on `ds` without writing anything.
pub fn evaluate_run(
    model: &Model,
    ds: &Dataset,
    policy: &StopPolicy,
    early_exit: bool,
    batch_size: usize,
    seed: u64,
) -> Result<EvalRun, AppError> {
    if ds.classes != model.config.classes {
        return Err(AppError::config(
            "model.classes",
            format!("checkpoint has {} classes, dataset `{}` has {}", model.config.classes, ds.name, ds.classes),
        ));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut samples = Vec::with_capacity(ds.len());
    let mut ticks = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let labels = ds.labels_of(chunk);
        let trace = run_ticks(model, &ds.batch(chunk), policy, Mode::Eval { early_exit })?;
        accumulate(&mut ticks, &trace, &labels);
        let last = trace.ticks.last().expect("at least one tick");
        for (k, &i) in chunk.iter().enumerate() {
            let at = trace.at_stop(k);
            samples.push(SampleRow {
                index: i,
                label: labels[k],
                prediction: trace.predictions[k],
                stop_tick: trace.stop_tick[k],
                certainty: at.certainty.total,
                entropy_certainty: at.certainty.entropy_certainty,
                phase_certainty: at.certainty.phase_certainty,
                final_certainty: last.samples[k].certainty.total,
                logits: at.logits.clone(),
            });
        }
    }
    for agg in &mut ticks {
        let n = agg.active.max(1) as f64;
        agg.entropy /= n;
        agg.entropy_certainty /= n;
        agg.phase_certainty /= n;
        agg.certainty /= n;
    }
    let n = samples.len().max(1) as f64;
    let summary = EvalSummary {
        format_version: FORMAT_VERSION,
        seed,
        dataset: ds.name.clone(),
        samples: samples.len(),
        early_exit,
        t_max: policy.t_max,
        accuracy: samples.iter().filter(|s| s.label == s.prediction).count() as f64 / n,
        mean_stop_tick: samples.iter().map(|s| s.stop_tick as f64).sum::<f64>() / n,
        mean_certainty: samples.iter().map(|s| s.certainty).sum::<f64>() / n,
    };
    Ok(EvalRun { summary, samples, ticks })
}

/// Writes `eval.json`, `samples.csv` and `ticks.csv`.
pub fn write_eval(dir: &Path, run: &EvalRun) -> Result<(), AppError> {
    create_dir(dir)?;
    let seed = run.summary.seed;
    write_json(&dir.join("eval.json"), &run.summary)?;

    let path = dir.join("samples.csv");
    let mut w = csv_writer(&path, seed)?;
    let classes = run.samples.first().map_or(0, |s| s.logits.len());
    let mut header: Vec<String> = [
        "index",
        "label",
        "prediction",
        "correct",
        "stop_tick",
        "certainty",
        "entropy_certainty",
        "phase_certainty",
        "final_certainty",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..classes).map(|c| format!("logit_{c}")));
    w.write_record(&header)?;
    for s in &run.samples {
        let mut rec = vec![
            s.index.to_string(),
            s.label.to_string(),
            s.prediction.to_string(),
            ((s.label == s.prediction) as u8).to_string(),
            s.stop_tick.to_string(),
            s.certainty.to_string(),
            s.entropy_certainty.to_string(),
            s.phase_certainty.to_string(),
            s.final_certainty.to_string(),
        ];
        rec.extend(s.logits.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;

    let path = dir.join("ticks.csv");
    let mut w = csv_writer(&path, seed)?;
    w.write_record([
        "tick",
        "active",
        "gated",
        "accuracy",
        "mean_entropy",
        "mean_entropy_certainty",
        "mean_phase_certainty",
        "mean_certainty",
    ])?;
    for (t, a) in run.ticks.iter().enumerate() {
        w.write_record([
            (t + 1).to_string(),
            a.active.to_string(),
            a.gated.to_string(),
            (a.correct as f64 / a.active.max(1) as f64).to_string(),
            a.entropy.to_string(),
            a.entropy_certainty.to_string(),
            a.phase_certainty.to_string(),
            a.certainty.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(&path, e))
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub seed: u64,
    pub model: Model,
    pub metrics: Vec<EpochRecord>,
    pub eval: EvalSummary,
}

/// Trains one run into `dir`: `config.cfg`, `metrics.jsonl`, the
/// checkpoint, and the evaluation files of the final model. A diverged run
/// saves its last completed epoch as `last_good.tbc` and fails with a
/// numerical error.
pub fn train_run(cfg: &ExperimentConfig, dir: &Path) -> Result<TrainedRun, AppError> {
    cfg.validate()?;
    let train_ds = train_set(cfg)?;
    let val_ds = eval_set(cfg)?;
    create_dir(dir)?;
    write_config(dir, cfg)?;
    let seed = cfg.train.seed;
    let mut lines = JsonLines::create(&dir.join("metrics.jsonl"))?;
    let mut records = Vec::new();
    let mut write_err = None;
    let result = train(&cfg.train, &train_ds, Some(&val_ds), &mut |m| {
        let r = EpochRecord::new(seed, m);
        if let Err(e) = lines.write(&r) {
            write_err.get_or_insert(e);
        }
        records.push(r);
    });
    lines.finish()?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Diverged(d)) => {
            let done = d.epoch - 1;
            Checkpoint {
                config: cfg.clone(),
                epoch: done,
                metrics: records[..done.min(records.len())].to_vec(),
                model: (*d.last_good).clone(),
            }
            .save(&dir.join("last_good.tbc"))?;
            return Err(TrainError::Diverged(d).into());
        }
        Err(e) => return Err(e.into()),
    };
    Checkpoint {
        config: cfg.clone(),
        epoch: cfg.train.epochs,
        metrics: records.clone(),
        model: outcome.model.clone(),
    }
    .save(&dir.join(CHECKPOINT_FILE))?;
    let run = evaluate_run(
        &outcome.model,
        &val_ds,
        &cfg.train.policy,
        cfg.eval.early_exit,
        cfg.eval.batch_size,
        seed,
    )?;
    write_eval(dir, &run)?;
    Ok(TrainedRun {
        seed,
        model: outcome.model,
        metrics: records,
        eval: run.summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub format_version: u32,
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub mean_stop_tick: Vec<f64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub stop_tick_mean: f64,
    pub stop_tick_std: f64,
}

impl ReplicateSummary {
    pub fn new(runs: &[TrainedRun]) -> Self {
        let accuracy: Vec<f64> = runs.iter().map(|r| r.eval.accuracy).collect();
        let mean_stop_tick: Vec<f64> = runs.iter().map(|r| r.eval.mean_stop_tick).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&accuracy);
        let (stop_tick_mean, stop_tick_std) = mean_std(&mean_stop_tick);
        ReplicateSummary {
            format_version: FORMAT_VERSION,
            seeds: runs.iter().map(|r| r.seed).collect(),
            accuracy,
            mean_stop_tick,
            accuracy_mean,
            accuracy_std,
            stop_tick_mean,
            stop_tick_std,
        }
    }
}

/// Trains once into `dir`, or once per seed into `dir/seed_<s>` with a
/// `summary.json` of mean and standard deviation.
pub fn cmd_train(cfg: &ExperimentConfig, seeds: &[u64], dir: &Path) -> Result<Vec<TrainedRun>, AppError> {
    if seeds.is_empty() {
        return Ok(vec![train_run(cfg, dir)?]);
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        runs.push(train_run(&replicate(cfg, s), &dir.join(format!("seed_{s}")))?);
    }
    write_json(&dir.join("summary.json"), &ReplicateSummary::new(&runs))?;
    Ok(runs)
}

/// Evaluates a checkpoint on the configured eval set.
pub fn cmd_eval(ckpt: &Checkpoint, cfg: &ExperimentConfig, dir: &Path) -> Result<EvalRun, AppError> {
    let ds = eval_set(cfg)?;
    let run = evaluate_run(
        &ckpt.model,
        &ds,
        &cfg.train.policy,
        cfg.eval.early_exit,
        cfg.eval.batch_size,
        cfg.train.seed,
    )?;
    write_config(dir_created(dir)?, cfg)?;
    write_eval(dir, &run)?;
    Ok(run)
}

fn dir_created(dir: &Path) -> Result<&Path, AppError> {
    create_dir(dir)?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub accuracy: f64,
    pub mean_stop_tick: f64,
    pub mean_certainty: f64,
}

/// Accuracy and mean stop tick per noise level; writes `sweep.csv`.
pub fn cmd_noise_sweep(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    sigmas: &[f64],
    dir: &Path,
) -> Result<Vec<SweepRow>, AppError> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(AppError::config("sigmas", format!("noise level {s} must be non-negative")));
    }
    if sigmas.is_empty() {
        return Err(AppError::config("sigmas", "need at least one noise level"));
    }
    let clean = eval_set(cfg)?;
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let ds = add_gaussian_noise(&clean, sigma, cfg.eval.noise_seed)?;
        let run = evaluate_run(
            &ckpt.model,
            &ds,
            &cfg.train.policy,
            cfg.eval.early_exit,
            cfg.eval.batch_size,
            cfg.train.seed,
        )?;
        rows.push(SweepRow {
            sigma,
            accuracy: run.summary.accuracy,
            mean_stop_tick: run.summary.mean_stop_tick,
            mean_certainty: run.summary.mean_certainty,
        });
    }
    write_config(dir_created(dir)?, cfg)?;
    let path = dir.join("sweep.csv");
    let mut w = csv_writer(&path, cfg.train.seed)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;
    Ok(rows)
}

/// One axis of an ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses `key=v1/v2/...`. Bare flag names stand for `flags.<name>` and
/// `D` for `model.neurons`.
pub fn parse_axis(spec: &str, base: &ExperimentConfig) -> Result<GridAxis, AppError> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| AppError::config(spec.to_string(), "grid axis must look like key=v1/v2"))?;
    let k = k.trim();
    let key = if KEYS.contains(&k) {
        k.to_string()
    } else if k == "D" {
        "model.neurons".to_string()
    } else if KEYS.contains(&format!("flags.{k}").as_str()) {
        format!("flags.{k}")
    } else {
        return Err(AppError::config(k, "unknown grid key"));
    };
    if key == "name" || key.starts_with("data.") || key.starts_with("eval.") {
        return Err(AppError::config(key, "not a model or training setting"));
    }
    let values: Vec<String> = v.split('/').map(|s| s.trim().to_string()).collect();
    for val in &values {
        base.clone().set(&key, val)?;
    }
    Ok(GridAxis { key, values })
}

#[derive(Clone, Debug)]
pub struct AblationCell {
    pub index: usize,
    pub settings: Vec<(String, String)>,
    pub runs: Vec<TrainedRun>,
}

/// Trains every grid cell with the same seeds into `dir/cell_<i>` and
/// writes `ablate.csv` (one row per cell and seed) and
/// `ablate_summary.csv` (mean and standard deviation per cell).
pub fn cmd_ablate(
    base: &ExperimentConfig,
    axes: &[GridAxis],
    seeds: &[u64],
    dir: &Path,
) -> Result<Vec<AblationCell>, AppError> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let seeds = if seeds.is_empty() { vec![base.train.seed] } else { seeds.to_vec() };
    let mut cells = Vec::with_capacity(combos.len());
    for (i, settings) in combos.into_iter().enumerate() {
        let mut cfg = base.clone();
        for (k, v) in &settings {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        let cell_dir = dir.join(format!("cell_{i}"));
        let runs = cmd_train(&cfg, &seeds, &cell_dir)?;
        cells.push(AblationCell {
            index: i,
            settings,
            runs,
        });
    }

    let keys: Vec<&str> = axes.iter().map(|a| a.key.as_str()).collect();
    let path = dir.join("ablate.csv");
    let mut w = csv_writer(&path, seeds[0])?;
    let mut header = vec!["cell"];
    header.extend(&keys);
    header.extend(["seed", "accuracy", "mean_stop_tick", "mean_certainty"]);
    w.write_record(&header)?;
    for c in &cells {
        for r in &c.runs {
            let mut rec = vec![c.index.to_string()];
            rec.extend(c.settings.iter().map(|(_, v)| v.clone()));
            rec.extend([
                r.seed.to_string(),
                r.eval.accuracy.to_string(),
                r.eval.mean_stop_tick.to_string(),
                r.eval.mean_certainty.to_string(),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;

    let path = dir.join("ablate_summary.csv");
    let mut w = csv_writer(&path, seeds[0])?;
    let mut header = vec!["cell"];
    header.extend(&keys);
    header.extend(["runs", "accuracy_mean", "accuracy_std", "stop_tick_mean", "stop_tick_std"]);
    w.write_record(&header)?;
    for c in &cells {
        let s = ReplicateSummary::new(&c.runs);
        let mut rec = vec![c.index.to_string()];
        rec.extend(c.settings.iter().map(|(_, v)| v.clone()));
        rec.extend([
            c.runs.len().to_string(),
            s.accuracy_mean.to_string(),
            s.accuracy_std.to_string(),
            s.stop_tick_mean.to_string(),
            s.stop_tick_std.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;
    Ok(cells)
}

/// Per-tick internals for selected eval samples over all `t_max` ticks:
/// `attention.csv`, `activation.csv` and `coherence.csv`, one row per
/// sample per tick.
pub fn cmd_trace(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    indices: &[usize],
    dir: &Path,
) -> Result<RunTrace, AppError> {
    let ds = eval_set(cfg)?;
    if let Some(&i) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(AppError::data(format!("sample {i} out of range for {} samples", ds.len())));
    }
    if indices.is_empty() {
        return Err(AppError::data("no samples selected"));
    }
    let mut tape = Tape::new();
    let p = ckpt.model.params.bind(&mut tape, false);
    let fwd = ckpt.model.forward(
        &mut tape,
        &p,
        &ds.batch(indices),
        &cfg.train.policy,
        Mode::Eval { early_exit: false },
        true,
    )?;
    let trace = fwd.trace;
    create_dir(dir)?;
    write_config(dir, cfg)?;
    let seed = cfg.train.seed;

    let series = |name: &str, prefix: &str, pick: &dyn Fn(usize, usize) -> Vec<f64>| -> Result<(), AppError> {
        let path = dir.join(name);
        let mut w = csv_writer(&path, seed)?;
        let width = pick(0, 0).len();
        let mut header = vec!["sample".to_string(), "tick".to_string()];
        header.extend((0..width).map(|j| format!("{prefix}_{j}")));
        w.write_record(&header)?;
        for (k, &i) in indices.iter().enumerate() {
            for t in 0..trace.ticks.len() {
                let mut rec = vec![i.to_string(), (t + 1).to_string()];
                rec.extend(pick(t, k).iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| AppError::io(&path, e))
    };
    let detail = |t: usize| trace.ticks[t].detail.as_ref().expect("detail requested");
    series("attention.csv", "pos", &|t, k| detail(t).attention[k].clone())?;
    series("activation.csv", "neuron", &|t, k| detail(t).activation[k].clone())?;

    let path = dir.join("coherence.csv");
    let mut w = csv_writer(&path, seed)?;
    w.write_record([
        "sample",
        "tick",
        "coherence",
        "entropy",
        "entropy_certainty",
        "phase_certainty",
        "certainty",
        "gate",
        "prediction",
    ])?;
    for (k, &i) in indices.iter().enumerate() {
        for (t, rec) in trace.ticks.iter().enumerate() {
            let s = &rec.samples[k];
            let phases = &detail(t).phases[k];
            let coherence = if phases.is_empty() {
                String::new()
            } else {
                phase_coherence(phases).to_string()
            };
            w.write_record([
                i.to_string(),
                (t + 1).to_string(),
                coherence,
                s.entropy.to_string(),
                s.certainty.entropy_certainty.to_string(),
                s.certainty.phase_certainty.to_string(),
                s.certainty.total.to_string(),
                (s.gate as u8).to_string(),
                argmax(&s.logits).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignSummary {
    pub format_version: u32,
    pub seed: u64,
    pub samples: usize,
    pub certainty: &'static str,
    pub r: f64,
}

/// Pearson correlation between model certainty and human agreement;
/// writes `align.json` and `align.csv`.
pub fn cmd_human_align(ckpt: &Checkpoint, cfg: &ExperimentConfig, dir: &Path) -> Result<AlignSummary, AppError> {
    if cfg.data.human_probs.is_none() {
        return Err(AppError::config("data.human_probs", "human label file required"));
    }
    let ds = eval_set(cfg)?;
    let human = human_agreement(&ds).expect("human rows attached");
    let run = evaluate_run(
        &ckpt.model,
        &ds,
        &cfg.train.policy,
        cfg.eval.early_exit,
        cfg.eval.batch_size,
        cfg.train.seed,
    )?;
    let certainty: Vec<f64> = run
        .samples
        .iter()
        .map(|s| match cfg.eval.human_certainty {
            CertaintySource::Stop => s.certainty,
            CertaintySource::Final => s.final_certainty,
        })
        .collect();
    let r = correlation(&certainty, &human)?;
    let summary = AlignSummary {
        format_version: FORMAT_VERSION,
        seed: cfg.train.seed,
        samples: ds.len(),
        certainty: match cfg.eval.human_certainty {
            CertaintySource::Stop => "stop",
            CertaintySource::Final => "final",
        },
        r,
    };
    create_dir(dir)?;
    write_config(dir, cfg)?;
    write_json(&dir.join("align.json"), &summary)?;
    let path = dir.join("align.csv");
    let mut w = csv_writer(&path, cfg.train.seed)?;
    w.write_record(["index", "label", "prediction", "stop_tick", "certainty", "human_agreement"])?;
    for (s, (c, h)) in run.samples.iter().zip(certainty.iter().zip(&human)) {
        w.write_record([
            s.index.to_string(),
            s.label.to_string(),
            s.prediction.to_string(),
            s.stop_tick.to_string(),
            c.to_string(),
            h.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(&path, e))?;
    Ok(summary)
}
