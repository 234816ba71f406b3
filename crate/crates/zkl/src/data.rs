//! Synthetic multi-class datasets and IDX-format ingestion.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, sample_perturbation, PerturbationDistribution, StreamKey};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// First sample of each class, in class order; handy as probe inputs.
    pub fn class_representatives(&self, classes: usize) -> Vec<Vec<f64>> {
        let mut reps = Vec::with_capacity(classes);
        for class in 0..classes {
            if let Some(pos) = self.labels.iter().position(|&l| l == class) {
                reps.push(self.inputs[pos].clone());
            }
        }
        reps
    }
}

/// Unit mean direction for class `c`: the first `2·input_dim` classes take
/// `±e_{c/2}`, the rest fall back to seeded random unit vectors, so any V is
/// supported without error.
fn class_direction(class: usize, input_dim: usize, seed: u64) -> Result<Vec<f64>> {
    if class < 2 * input_dim {
        let mut dir = vec![0.0; input_dim];
        dir[class / 2] = if class % 2 == 0 { 1.0 } else { -1.0 };
        return Ok(dir);
    }
    let mut dir = sample_perturbation(
        StreamKey::new(seed, class as u64, 0, rng::tag::DATA),
        input_dim,
        PerturbationDistribution::Gaussian,
    )?;
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    Ok(dir)
}

/// Gaussian blobs: class `c` has mean `separation · dir_c` and unit
/// covariance, `per_class` samples each, deterministic in `seed`.
pub fn synth_blobs(
    classes: usize,
    input_dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if per_class < 1 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    if input_dim < 1 {
        return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
    }
    let mut inputs = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let mean = class_direction(class, input_dim, seed)?;
        for sample in 0..per_class {
            let noise = sample_perturbation(
                StreamKey::new(seed, class as u64, 1 + sample as u64, rng::tag::DATA),
                input_dim,
                PerturbationDistribution::Gaussian,
            )?;
            let x: Vec<f64> = mean
                .iter()
                .zip(&noise)
                .map(|(m, n)| separation * m + n)
                .collect();
            inputs.push(x);
            labels.push(class);
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        name: format!("blobs-v{classes}-d{input_dim}"),
        seed,
    })
}

struct IdxReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> IdxReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::IdxFormat {
                offset: self.offset,
                reason: format!("truncated while reading {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Big-endian 32-bit integer.
    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, what)?;
        Ok(u32::from_be_bytes(buf))
    }
}

/// Parses an IDX image file (magic 0x00000803): big-endian counts
/// `(n, rows, cols)` followed by `n·rows·cols` unsigned bytes. Each image is
/// flattened row-major and scaled to [0,1].
///
/// No mean/std normalization is applied here: normalization changes Jacobian
/// scales, so it stays opt-in downstream.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    let mut reader = IdxReader::new(std::io::BufReader::new(file));
    let magic = reader.read_u32("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            offset: 0,
            reason: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x} (images)"),
        });
    }
    let n = reader.read_u32("image count")? as usize;
    let rows = reader.read_u32("row count")? as usize;
    let cols = reader.read_u32("column count")? as usize;
    let pixels = rows * cols;
    let mut images = Vec::with_capacity(n);
    let mut buf = vec![0u8; pixels];
    for i in 0..n {
        reader.read_exact(&mut buf, &format!("image {i}"))?;
        images.push(buf.iter().map(|&b| f64::from(b) / 255.0).collect());
    }
    Ok(images)
}

/// Parses an IDX label file (magic 0x00000801): big-endian count `n` followed
/// by `n` unsigned byte labels. Range checks against a model's class count
/// happen at dataset/model binding time, not here.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path)?;
    let mut reader = IdxReader::new(std::io::BufReader::new(file));
    let magic = reader.read_u32("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxFormat {
            offset: 0,
            reason: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x} (labels)"),
        });
    }
    let n = reader.read_u32("label count")? as usize;
    let mut buf = vec![0u8; n];
    reader.read_exact(&mut buf, "labels")?;
    Ok(buf.into_iter().map(usize::from).collect())
}

/// Binds images and labels into a dataset, enforcing equal lengths and label
/// range.
pub fn bind_dataset(
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
    name: &str,
) -> Result<Dataset> {
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "inputs vs labels",
            expected: inputs.len(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    Ok(Dataset {
        inputs,
        labels,
        name: name.to_string(),
        seed: 0,
    })
}
