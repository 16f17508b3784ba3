//! MNIST IDX loading, deterministic subsets and synthetic blobs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

/// Row-major features in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dim: usize, classes: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature values do not match {} records of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l as usize >= classes) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} classes")));
        }
        if let Some(v) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Dataset { name: name.into(), dim, classes, features, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset { name: name.into(), dim: self.dim, classes: self.classes, features, labels }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for l in &self.labels {
            h[*l as usize] += 1;
        }
        h
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { kind: what, reason: "truncated header".into() })
}

/// Parses an IDX3 image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "IDX image")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format { kind: "IDX image", reason: format!("magic {magic}, expected {IMAGE_MAGIC}") });
    }
    let count = be_u32(bytes, 4, "IDX image")? as usize;
    let rows = be_u32(bytes, 8, "IDX image")? as usize;
    let cols = be_u32(bytes, 12, "IDX image")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(Error::Format {
            kind: "IDX image",
            reason: format!("expected {need} pixel bytes for {count}x{rows}x{cols}, found {}", body.len()),
        });
    }
    Ok((count, rows, cols, body))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "IDX label")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format { kind: "IDX label", reason: format!("magic {magic}, expected {LABEL_MAGIC}") });
    }
    let count = be_u32(bytes, 4, "IDX label")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format { kind: "IDX label", reason: format!("expected {count} labels, found {}", body.len()) });
    }
    Ok(body)
}

pub fn dataset_from_idx(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::Format {
            kind: "IDX pair",
            reason: format!("{count} images but {} labels", labels.len()),
        });
    }
    if let Some(l) = labels.iter().find(|l| **l > 9) {
        return Err(Error::Format { kind: "IDX label", reason: format!("label {l} outside 0..=9") });
    }
    let features = pixels.iter().map(|p| *p as f64 / 255.0).collect();
    Dataset::new(name, rows * cols, 10, features, labels.to_vec())
}

/// Loads an images/labels IDX pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    let name = images_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset_from_idx(&name, &images, &labels)
}

/// The first `n` records of a seeded permutation.
pub fn subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!("subset of {n} from {} records", dataset.len())));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    Ok(dataset.select(&idx, format!("{}[{n}@{seed}]", dataset.name)))
}

/// Two disjoint subsets of sizes `first` and `second` drawn from one seeded
/// permutation; `first` equals `subset(dataset, first, seed)`.
pub fn split(dataset: &Dataset, first: usize, second: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if first + second > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "split of {first} + {second} from {} records",
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = dataset.select(&idx[..first], format!("{}[{first}@{seed}]", dataset.name));
    let b = dataset.select(&idx[first..first + second], format!("{}[{first}+{second}@{seed}]", dataset.name));
    Ok((a, b))
}

/// Isotropic Gaussian blobs, one per class, with centers `10σ` apart.
///
/// Centers sit at `0.5 + (10σ/√2) e_c` (coordinate `c mod dim`), `σ = 0.02`,
/// and values are clamped to `[0, 1]`.
pub fn synth_gaussian_blobs(classes: usize, n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || classes > 256 || dim < classes || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs need 2..=256 classes, dim >= classes and n >= 1 (classes={classes}, dim={dim}, n={n})"
        )));
    }
    let sigma = 0.02;
    let offset = 10.0 * sigma / std::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let center = if j == c { 0.5 + offset } else { 0.5 };
            features.push((center + normal.sample(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(c as u8);
    }
    Dataset::new(format!("blobs{classes}x{dim}"), dim, classes, features, labels)
}
