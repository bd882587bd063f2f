//! Loading the datasets named by a config.

use std::path::Path;

use tripartite_core::data::{attach_human_probs, decode_records, synth_shapes, Dataset, ImageLayout};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::AppError;

pub fn layout(cfg: &ExperimentConfig) -> ImageLayout {
    let m = cfg.model();
    ImageLayout {
        height: m.image_size,
        width: m.image_size,
        channels: m.channels,
        classes: m.classes,
    }
}

fn read_records(path: &Path, layout: ImageLayout) -> Result<Dataset, AppError> {
    let bytes = std::fs::read(path).map_err(|e| {
        AppError::data(format!(
            "cannot read {}: {e}. Expected concatenated records of 1 label byte then {} channel-planar pixel bytes ({}x{}x{})",
            path.display(),
            layout.record_len() - 1,
            layout.channels,
            layout.height,
            layout.width,
        ))
    })?;
    let name = path.file_name().map_or("records".into(), |n| n.to_string_lossy().into_owned());
    decode_records(&bytes, layout, &name).map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

fn required<'a>(key: &str, p: &'a Option<std::path::PathBuf>) -> Result<&'a Path, AppError> {
    p.as_deref()
        .ok_or_else(|| AppError::config(key, "required when data.source = binary"))
}

/// The training set.
pub fn train_set(cfg: &ExperimentConfig) -> Result<Dataset, AppError> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synth => Ok(synth_shapes(
            d.train_samples,
            cfg.model().image_size,
            cfg.model().classes,
            d.seed,
        )?),
        DataSource::Binary => read_records(required("data.train_file", &d.train_file)?, layout(cfg)),
    }
}

/// The validation / test set, with human label rows attached when
/// `data.human_probs` is set.
pub fn eval_set(cfg: &ExperimentConfig) -> Result<Dataset, AppError> {
    let d = &cfg.data;
    let ds = match d.source {
        DataSource::Synth => synth_shapes(
            d.val_samples,
            cfg.model().image_size,
            cfg.model().classes,
            d.seed.wrapping_add(100),
        )?,
        DataSource::Binary => read_records(required("data.test_file", &d.test_file)?, layout(cfg))?,
    };
    match &d.human_probs {
        Some(p) => {
            let rows = read_human_probs(p)?;
            attach_human_probs(&ds, &rows).map_err(|e| AppError::data(format!("{}: {e}", p.display())))
        }
        None => Ok(ds),
    }
}

/// Reads one probability row per sample from a headerless CSV. Lines
/// starting with `#` are skipped.
pub fn read_human_probs(path: &Path) -> Result<Vec<Vec<f64>>, AppError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| AppError::data(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}
