//! Labeled datasets: synthetic blob generation and file ingestion
//! (headerless labeled CSV and IDX binary pairs).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{purpose, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, input_dim: usize, num_classes: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has {} features, expected {input_dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i} has label {} but only {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(Self {
            samples,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Count of samples carrying each label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        self.batch_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// A batch built from the given sample indices.
    pub fn batch_of(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(&self.samples[i].features);
            labels.push(self.samples[i].label);
        }
        Batch::new(
            Tensor::new(vec![indices.len(), self.input_dim], inputs)?,
            labels,
        )
    }

    /// Split off a stratified, seeded test fraction. Returns (train, test).
    /// `fraction` of each class (rounded down, at least one sample when the
    /// class has more than one) goes to the test side.
    pub fn stratified_split(&self, fraction: f64, stream: &RngStream) -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in 0..self.num_classes {
            let mut idxs: Vec<usize> = (0..self.len())
                .filter(|&i| self.samples[i].label == class)
                .collect();
            let mut s = stream.child(purpose::TEST_SPLIT).child(class as u64);
            s.shuffle(&mut idxs);
            let mut take = (idxs.len() as f64 * fraction).floor() as usize;
            if take == 0 && idxs.len() > 1 && fraction > 0.0 {
                take = 1;
            }
            for (k, &i) in idxs.iter().enumerate() {
                if k < take {
                    test.push(self.samples[i].clone());
                } else {
                    train.push(self.samples[i].clone());
                }
            }
        }
        (
            Dataset {
                samples: train,
                input_dim: self.input_dim,
                num_classes: self.num_classes,
            },
            Dataset {
                samples: test,
                input_dim: self.input_dim,
                num_classes: self.num_classes,
            },
        )
    }
}

/// Gaussian blobs: class `c` is centered at a seeded random unit direction
/// scaled by `separation`, with unit covariance.
pub fn generate_synthetic(
    classes: usize,
    samples_per_class: usize,
    input_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if samples_per_class == 0 || input_dim == 0 {
        return Err(Error::InvalidParams(
            "samples_per_class and input_dim must be positive".into(),
        ));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidParams(format!(
            "separation must be a non-negative finite value, got {separation}"
        )));
    }

    let root = RngStream::new(seed).child(purpose::DATA);
    let mut samples = Vec::with_capacity(classes * samples_per_class);
    for class in 0..classes {
        let mut s = root.child(class as u64);
        // Unit direction from a normalized Gaussian draw.
        let mut center: Vec<f64> = (0..input_dim).map(|_| s.next_standard_normal()).collect();
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for c in center.iter_mut() {
            *c = *c / norm * separation;
        }
        for _ in 0..samples_per_class {
            let features: Vec<f64> = center
                .iter()
                .map(|&c| c + s.next_standard_normal())
                .collect();
            samples.push(Sample {
                features,
                label: class,
            });
        }
    }
    Dataset::new(samples, input_dim, classes)
}

/// Headerless CSV where each row is an integer label followed by the
/// feature values.
pub fn load_csv_labeled(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::FormatError {
            offset: 0,
            message: e.to_string(),
        })?;

    let mut samples = Vec::new();
    let mut input_dim = None;
    let mut max_label = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::FormatError {
            offset: e.position().map(|p| p.byte()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        if record.len() < 2 {
            return Err(Error::FormatError {
                offset,
                message: format!(
                    "row {row} has {} fields, need a label and features",
                    record.len()
                ),
            });
        }
        let label: usize = record[0].parse().map_err(|_| Error::FormatError {
            offset,
            message: format!(
                "row {row}: label `{}` is not a non-negative integer",
                &record[0]
            ),
        })?;
        let features: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::FormatError {
                    offset,
                    message: format!("row {row}: `{f}` is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        match input_dim {
            None => input_dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "row {row} has {} features, expected {d}",
                    features.len()
                )));
            }
            _ => {}
        }
        max_label = max_label.max(label);
        samples.push(Sample { features, label });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(samples, input_dim.unwrap(), max_label + 1)
}

/// Write a dataset in the `load_csv_labeled` format.
pub fn write_csv_labeled(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::FormatError {
        offset: 0,
        message: e.to_string(),
    })?;
    for s in &dataset.samples {
        let mut row = Vec::with_capacity(1 + s.features.len());
        row.push(s.label.to_string());
        row.extend(s.features.iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(|e| Error::FormatError {
            offset: 0,
            message: e.to_string(),
        })?;
    }
    writer.flush()?;
    Ok(())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxCursor {
    bytes: Vec<u8>,
    pos: usize,
}

impl IdxCursor {
    fn open(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Ok(Self { bytes, pos: 0 })
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::FormatError {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn read_payload(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::FormatError {
                offset: self.bytes.len() as u64,
                message: format!(
                    "truncated {what}: need {n} payload bytes, have {}",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// IDX binary pair: an image file (magic 0x00000803, big-endian dims,
/// unsigned bytes scaled to [0, 1]) plus a label file (magic 0x00000801).
pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = IdxCursor::open(images_path)?;
    let magic = img.read_u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::FormatError {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = img.read_u32_be("image count")? as usize;
    let rows = img.read_u32_be("image rows")? as usize;
    let cols = img.read_u32_be("image cols")? as usize;
    let dim = rows * cols;
    let pixels = img.read_payload(count * dim, "image data")?.to_vec();

    let mut lab = IdxCursor::open(labels_path)?;
    let magic = lab.read_u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::FormatError {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = lab.read_u32_be("label count")? as usize;
    if label_count != count {
        return Err(Error::DimensionMismatch(format!(
            "{count} images vs {label_count} labels"
        )));
    }
    let labels = lab.read_payload(count, "label data")?.to_vec();

    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let samples = (0..count)
        .map(|i| Sample {
            features: pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
            label: labels[i] as usize,
        })
        .collect();
    Dataset::new(samples, dim, max_label + 1)
}
