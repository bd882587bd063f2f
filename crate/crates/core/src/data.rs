//! Datasets: binary image records, synthetic shapes, noise, splits and
//! human-label agreement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[n, H, W, C]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `[n, classes]` rows summing to one.
    pub human_probs: Option<Tensor>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::data(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::Data {
                reason: format!("label {l} out of range for {classes} classes"),
                offset: None,
                row: Some(i),
            });
        }
        Ok(Dataset {
            name: name.into(),
            images,
            labels,
            classes,
            human_probs: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(H, W, C)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    fn image_len(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    /// Pixels `[k, H, W, C]` for the listed samples.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let n = self.image_len();
        let (h, w, c) = self.image_shape();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        Tensor::new(&[indices.len(), h, w, c], data).expect("sizes agree")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let human_probs = self.human_probs.as_ref().map(|hp| {
            let c = self.classes;
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(hp.row(i));
            }
            Tensor::new(&[indices.len(), c], data).expect("sizes agree")
        });
        Dataset {
            name: self.name.clone(),
            images: self.batch(indices),
            labels: self.labels_of(indices),
            classes: self.classes,
            human_probs,
        }
    }
}

/// Geometry of the binary record format: one label byte followed by
/// channel-planar pixel bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageLayout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
}

impl ImageLayout {
    pub const CIFAR10: ImageLayout = ImageLayout {
        height: 32,
        width: 32,
        channels: 3,
        classes: 10,
    };

    pub fn record_len(&self) -> usize {
        1 + self.height * self.width * self.channels
    }
}

/// Decodes concatenated records. Pixels are scaled into `[0, 1]`.
pub fn decode_records(bytes: &[u8], layout: ImageLayout, name: &str) -> Result<Dataset> {
    let rec = layout.record_len();
    if bytes.len() % rec != 0 {
        let offset = bytes.len() - bytes.len() % rec;
        return Err(Error::Data {
            reason: format!(
                "truncated record: {} trailing bytes, records are {rec} bytes",
                bytes.len() % rec
            ),
            offset: Some(offset),
            row: None,
        });
    }
    let (h, w, c) = (layout.height, layout.width, layout.channels);
    let plane = h * w;
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut data = vec![0.0; n * plane * c];
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[0] as usize;
        if label >= layout.classes {
            return Err(Error::Data {
                reason: format!("label {label} out of range for {} classes", layout.classes),
                offset: Some(i * rec),
                row: Some(i),
            });
        }
        labels.push(label);
        let out = &mut data[i * plane * c..(i + 1) * plane * c];
        for ch in 0..c {
            for px in 0..plane {
                out[px * c + ch] = record[1 + ch * plane + px] as f64 / 255.0;
            }
        }
    }
    let images = Tensor::new(&[n, h, w, c], data)?;
    Dataset::new(name, images, labels, layout.classes)
}

/// Inverse of [`decode_records`]; pixels are rounded to the nearest byte
/// after clamping into `[0, 1]`.
pub fn encode_records(ds: &Dataset) -> Vec<u8> {
    let (h, w, c) = ds.image_shape();
    let plane = h * w;
    let n = plane * c;
    let mut out = Vec::with_capacity(ds.len() * (n + 1));
    for (i, &label) in ds.labels.iter().enumerate() {
        out.push(label as u8);
        let img = &ds.images.data()[i * n..(i + 1) * n];
        for ch in 0..c {
            for px in 0..plane {
                let v = libm::round(img[px * c + ch].clamp(0.0, 1.0) * 255.0);
                out.push(v as u8);
            }
        }
    }
    out
}

/// Filled shapes on a black background, one class per shape kind, balanced
/// by construction.
pub fn synth_shapes(n: usize, size: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if size < 16 {
        return Err(Error::arg("synth_shapes", format!("size {size} is below 16")));
    }
    if !(2..=10).contains(&classes) {
        return Err(Error::arg("synth_shapes", format!("{classes} classes; need 2 to 10")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = vec![0.0; n * size * size * c];
    let s = size as f64;
    for (i, &label) in labels.iter().enumerate() {
        let radius = s * rng.gen_range(0.24..0.32);
        let cx = s / 2.0 + rng.gen_range(-0.06..0.06) * s;
        let cy = s / 2.0 + rng.gen_range(-0.06..0.06) * s;
        let intensity = rng.gen_range(0.6..1.0);
        let tint = [
            rng.gen_range(0.7..1.0),
            rng.gen_range(0.7..1.0),
            rng.gen_range(0.7..1.0),
        ];
        let img = &mut data[i * size * size * c..(i + 1) * size * size * c];
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5 - cx) / radius;
                let v = (y as f64 + 0.5 - cy) / radius;
                if inside(label, u, v) {
                    for ch in 0..c {
                        img[(y * size + x) * c + ch] = intensity * tint[ch];
                    }
                }
            }
        }
    }
    let images = Tensor::new(&[n, size, size, c], data)?;
    Dataset::new(format!("shapes-{classes}"), images, labels, classes)
}

/// Shape membership in coordinates scaled so the shape spans about `[-1, 1]`.
fn inside(kind: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    match kind {
        0 => u * u + v * v <= 1.0,
        1 => au <= 0.8 && av <= 0.8,
        // upward triangle
        2 => v <= 0.8 && v >= -1.0 && au <= (v + 1.0) * 0.5,
        3 => (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0),
        4 => au + av <= 1.0,
        5 => {
            let r2 = u * u + v * v;
            (0.45..=1.0).contains(&r2)
        }
        6 => au <= 1.0 && av <= 0.4,
        7 => au <= 0.4 && av <= 1.0,
        8 => (au <= 0.9 && av <= 0.9) && !(au <= 0.5 && av <= 0.5),
        _ => v >= -0.8 && v <= 1.0 && au <= (1.0 - v) * 0.5,
    }
}

/// Adds unclipped `N(0, σ²)` noise to every pixel.
pub fn add_gaussian_noise(ds: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg("add_gaussian_noise", format!("sigma {sigma} must be non-negative")));
    }
    let mut out = ds.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for v in out.images.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

/// Seeded shuffle split into `(train, val)` index sets.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::arg("split", format!("fraction {val_fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = libm::round(n as f64 * val_fraction) as usize;
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Attaches per-sample human label distributions. Rows within `1e-3` of
/// summing to one are renormalized; others are rejected.
pub fn attach_human_probs(ds: &Dataset, rows: &[Vec<f64>]) -> Result<Dataset> {
    if rows.len() != ds.len() {
        return Err(Error::data(format!(
            "{} probability rows for {} samples",
            rows.len(),
            ds.len()
        )));
    }
    let c = ds.classes;
    let mut data = Vec::with_capacity(rows.len() * c);
    for (i, row) in rows.iter().enumerate() {
        let bad = |reason: String| Error::Data {
            reason,
            offset: None,
            row: Some(i + 1),
        };
        if row.len() != c {
            return Err(bad(format!("expected {c} values, found {}", row.len())));
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(bad("values must be finite and non-negative".into()));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(bad(format!("row sums to {sum}")));
        }
        data.extend(row.iter().map(|p| p / sum));
    }
    let mut out = ds.clone();
    out.human_probs = Some(Tensor::new(&[rows.len(), c], data)?);
    Ok(out)
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::arg(
            "correlation",
            format!("lengths {} and {} differ", x.len(), y.len()),
        ));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation {
            reason: "fewer than 3 samples",
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation {
            reason: "zero variance",
        });
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Per-sample human agreement: the largest human label probability.
pub fn human_agreement(ds: &Dataset) -> Option<Vec<f64>> {
    let hp = ds.human_probs.as_ref()?;
    Some(
        (0..ds.len())
            .map(|i| hp.row(i).iter().copied().fold(0.0, f64::max))
            .collect(),
    )
}
