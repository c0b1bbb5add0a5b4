//! Datasets: IDX and delimited-text loaders, seeded synthetic blobs, batching,
//! normalization and augmentation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N × C × H × W` images or `N × D` feature rows.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.ndim() < 2 {
            return Err(Error::Consistency(format!("inputs need a sample axis, got {:?}", inputs.shape())));
        }
        let n = inputs.shape()[0];
        if n == 0 {
            return Err(Error::Length("dataset has no samples".into()));
        }
        if labels.len() != n {
            return Err(Error::Consistency(format!("{n} samples but {} labels", labels.len())));
        }
        if class_count == 0 {
            return Err(Error::Consistency("class count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!("label {bad} outside [0, {class_count})")));
        }
        if !inputs.is_finite() {
            return Err(Error::Consistency("inputs contain non-finite values".into()));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.sample_len();
        let src = self.inputs.data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        Dataset {
            inputs: Tensor::from_parts(shape, data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Seeded random split into `(train, held_out)` with `held_out_len` samples held out.
    pub fn split(&self, held_out_len: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if held_out_len == 0 || held_out_len >= self.len() {
            return Err(Error::Parameter(format!(
                "cannot hold out {held_out_len} of {} samples",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (held, rest) = order.split_at(held_out_len);
        Ok((self.subset(rest), self.subset(held)))
    }
}

/// Raw IDX image file contents (3-D unsigned bytes).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let magic = read_u32(bytes, 0)?;
        if magic != IDX_IMAGES_MAGIC {
            return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
        }
        let count = read_u32(bytes, 4)? as usize;
        let rows = read_u32(bytes, 8)? as usize;
        let cols = read_u32(bytes, 12)? as usize;
        if count == 0 || rows == 0 || cols == 0 {
            return Err(Error::Length(format!("IDX image file declares {count}x{rows}x{cols}")));
        }
        let want = count * rows * cols;
        let payload = &bytes[16..];
        if payload.len() != want {
            return Err(Error::Length(format!("IDX image payload is {} bytes, expected {want}", payload.len())));
        }
        Ok(IdxImages {
            rows,
            cols,
            pixels: payload.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IDX_IMAGES_MAGIC, self.count() as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

impl IdxLabels {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let magic = read_u32(bytes, 0)?;
        if magic != IDX_LABELS_MAGIC {
            return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
        }
        let count = read_u32(bytes, 4)? as usize;
        if count == 0 {
            return Err(Error::Length("IDX label file declares 0 items".into()));
        }
        let payload = &bytes[8..];
        if payload.len() != count {
            return Err(Error::Length(format!("IDX label payload is {} bytes, expected {count}", payload.len())));
        }
        Ok(IdxLabels {
            labels: payload.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("IDX header truncated at byte {at}")))
}

/// Loads an IDX image/label pair; pixels are scaled to `[0, 1]` and images
/// become `N × 1 × rows × cols`.
pub fn load_idx(image_path: &Path, label_path: &Path, class_count: usize) -> Result<Dataset> {
    let images = IdxImages::parse(&fs::read(image_path)?)?;
    let labels = IdxLabels::parse(&fs::read(label_path)?)?;
    dataset_from_idx(&images, &labels, class_count)
}

pub fn dataset_from_idx(images: &IdxImages, labels: &IdxLabels, class_count: usize) -> Result<Dataset> {
    let n = images.count();
    if n != labels.labels.len() {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.labels.len()
        )));
    }
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Tensor::new(vec![n, 1, images.rows, images.cols], data)?;
    Dataset::new(inputs, labels.labels.iter().map(|&l| l as usize).collect(), class_count)
}

/// Inverse of [`dataset_from_idx`] for datasets whose pixels are multiples of 1/255.
pub fn dataset_to_idx(ds: &Dataset) -> Result<(IdxImages, IdxLabels)> {
    let &[_, 1, rows, cols] = ds.inputs.shape() else {
        return Err(Error::Format(format!("IDX needs N×1×H×W images, got {:?}", ds.inputs.shape())));
    };
    let pixels = ds
        .inputs
        .data()
        .iter()
        .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let labels = ds
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte"))))
        .collect::<Result<_>>()?;
    Ok((IdxImages { rows, cols, pixels }, IdxLabels { labels }))
}

pub fn write_idx(ds: &Dataset, image_path: &Path, label_path: &Path) -> Result<()> {
    let (images, labels) = dataset_to_idx(ds)?;
    fs::write(image_path, images.to_bytes())?;
    fs::write(label_path, labels.to_bytes())?;
    Ok(())
}

/// One sample per line: comma-separated features then an integer label.
/// `class_count` defaults to one more than the largest label.
pub fn parse_delimited(text: &str, class_count: Option<usize>) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Format(format!("line {}: need features and a label", lineno + 1)));
        }
        let (features, label) = fields.split_at(fields.len() - 1);
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::Consistency(format!(
                    "line {}: {} features, expected {w}",
                    lineno + 1,
                    features.len()
                )))
            }
            _ => {}
        }
        for f in features {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: `{f}`: {e}", lineno + 1)))?,
            );
        }
        labels.push(
            label[0]
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("line {}: label `{}`: {e}", lineno + 1, label[0])))?,
        );
    }
    let width = width.ok_or_else(|| Error::Length("no samples in delimited text".into()))?;
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(Tensor::new(vec![labels.len(), width], data)?, labels, classes)
}

pub fn load_delimited(path: &Path, class_count: Option<usize>) -> Result<Dataset> {
    parse_delimited(&fs::read_to_string(path)?, class_count)
}

/// Seeded Gaussian clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    pub class_count: usize,
    pub per_class: usize,
    /// Per-sample shape, `[d]` or `[c, h, w]`.
    pub shape: Vec<usize>,
    /// Expected distance between two class means, in units of the
    /// within-class standard deviation (which is 1).
    pub separation: f64,
    pub seed: u64,
}

/// Class means are `N(0, σ_c² I)` with `σ_c = separation / √(2d)`, so the
/// expected distance between two means is about `separation`; samples add unit
/// Gaussian noise. Samples are ordered class by class.
pub fn synthetic_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.class_count == 0 || spec.per_class == 0 || spec.shape.is_empty() || spec.shape.contains(&0) {
        return Err(Error::Parameter(format!("invalid blob spec {spec:?}")));
    }
    let d: usize = spec.shape.iter().product();
    let spread = spec.separation / (2.0 * d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.class_count)
        .map(|_| (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let n = spec.class_count * spec.per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            data.extend(center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)));
            labels.push(class);
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.shape);
    Dataset::new(Tensor::new(shape, data)?, labels, spec.class_count)
}

/// Per-class sample means of a dataset (flattened).
pub fn class_means(ds: &Dataset) -> Vec<Vec<f64>> {
    let d = ds.sample_len();
    let mut sums = vec![vec![0.0; d]; ds.class_count];
    let mut counts = vec![0usize; ds.class_count];
    for (row, &l) in ds.inputs.data().chunks(d).zip(&ds.labels) {
        sums[l].iter_mut().zip(row).for_each(|(s, x)| *s += x);
        counts[l] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c.max(1) as f64);
    }
    sums
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Epoch permutation: depends only on `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled mini-batches; the final short batch is kept.
pub fn batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    epoch_order(ds.len(), seed, epoch)
        .chunks(batch_size)
        .map(|idx| {
            let sub = ds.subset(idx);
            Batch {
                inputs: sub.inputs,
                labels: sub.labels,
                indices: idx.to_vec(),
            }
        })
        .collect()
}

/// `(x − mean[c]) / std[c]` along axis 1 for images; a single `(mean, std)`
/// pair applies to all features.
pub fn normalize(ds: &Dataset, mean: &[f64], std: &[f64]) -> Result<Dataset> {
    let channels = if ds.inputs.ndim() == 4 { ds.inputs.shape()[1] } else { 1 };
    let ok_len = |v: &[f64]| v.len() == channels || v.len() == 1;
    if !ok_len(mean) || !ok_len(std) || mean.len() != std.len() {
        return Err(Error::Parameter(format!(
            "need 1 or {channels} mean/std values, got {} and {}",
            mean.len(),
            std.len()
        )));
    }
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Parameter("standard deviation must be positive".into()));
    }
    let inner: usize = if ds.inputs.ndim() == 4 {
        ds.inputs.shape()[2..].iter().product()
    } else {
        ds.sample_len()
    };
    let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[(i / inner) % channels] };
    let data = ds
        .inputs
        .data()
        .iter()
        .enumerate()
        .map(|(i, x)| (x - pick(mean, i)) / pick(std, i))
        .collect();
    Ok(Dataset {
        inputs: Tensor::from_parts(ds.inputs.shape().to_vec(), data),
        labels: ds.labels.clone(),
        class_count: ds.class_count,
    })
}

/// Seeded random crop (zero padding `pad`, then crop back) and horizontal flip
/// of an `N×C×H×W` batch. Deterministic in `(seed, epoch, batch)`.
pub fn augment(inputs: &Tensor, pad: usize, seed: u64, epoch: usize, batch: usize) -> Tensor {
    let &[n, c, h, w] = inputs.shape() else {
        return inputs.clone();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_F00D_BEEF);
    rng.set_stream(((epoch as u64) << 32) | batch as u64);
    let src = inputs.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let flip = rng.random_bool(0.5);
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    out[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                }
            }
        }
    }
    Tensor::from_parts(inputs.shape().to_vec(), out)
}
