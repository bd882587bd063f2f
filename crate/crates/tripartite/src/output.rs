//! Output files. Every file names the run seed and [`FORMAT_VERSION`]: JSON
//! records carry them as fields, CSV files open with a
//! `# format_version=N seed=S` line ahead of the column header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tripartite_core::training::EpochMetrics;

use crate::config::ExperimentConfig;
use crate::error::AppError;

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TRIPARTITE_OUT";

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub format_version: u32,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_mean_certainty: Option<f64>,
    pub val_mean_stop_tick: Option<f64>,
    pub lr: f64,
    pub skipped_steps: u64,
}

impl EpochRecord {
    pub fn new(seed: u64, m: &EpochMetrics) -> Self {
        EpochRecord {
            format_version: FORMAT_VERSION,
            seed,
            epoch: m.epoch,
            train_loss: m.train_loss,
            train_accuracy: m.train_accuracy,
            val_accuracy: m.val_accuracy,
            val_mean_certainty: m.val_mean_certainty,
            val_mean_stop_tick: m.val_mean_stop_tick,
            lr: m.lr,
            skipped_steps: m.skipped_steps,
        }
    }
}

/// `--out` if given, else `$TRIPARTITE_OUT/<name>`, else `runs/<name>`.
pub fn out_dir(explicit: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(if name.is_empty() { "run" } else { name })
}

pub fn create_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, AppError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AppError::io(path, e))
}

/// Writes the resolved config with a seed line; it parses back unchanged.
pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<(), AppError> {
    let path = dir.join("config.cfg");
    let text = format!(
        "# format_version={FORMAT_VERSION} seed={}\n{}",
        cfg.train.seed,
        cfg.render()
    );
    std::fs::write(&path, text).map_err(|e| AppError::io(&path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

/// Appends JSON lines.
pub struct JsonLines {
    path: PathBuf,
    w: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self, AppError> {
        Ok(JsonLines {
            path: path.to_path_buf(),
            w: create(path)?,
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<(), AppError> {
        serde_json::to_writer(&mut self.w, value)?;
        writeln!(self.w).map_err(|e| AppError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), AppError> {
        self.w.flush().map_err(|e| AppError::io(&self.path, e))
    }
}

/// CSV writer whose first line is the version and seed comment.
pub fn csv_writer(path: &Path, seed: u64) -> Result<csv::Writer<BufWriter<File>>, AppError> {
    let mut w = create(path)?;
    writeln!(w, "# format_version={FORMAT_VERSION} seed={seed}").map_err(|e| AppError::io(path, e))?;
    Ok(csv::Writer::from_writer(w))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
