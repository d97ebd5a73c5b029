//! Dataset plumbing: a deterministic synthetic separable set and the CIFAR-10
//! binary-batch loader, both surfacing flat `[N, C, H, W]` float buffers that
//! [`Dataset::batch`] replicates across the time axis.

use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spikepool_core::{real, Scalar, Shape5, Tensor5};

pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_SIZE: usize = 32;
const CIFAR_PIXELS: usize = CIFAR_CHANNELS * CIFAR_SIZE * CIFAR_SIZE;
const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
const CIFAR_RECORDS_PER_FILE: usize = 10_000;

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Debug)]
pub enum DataError {
    /// File-level failure; always names the offending path.
    Io {
        file: PathBuf,
        source: std::io::Error,
    },
    /// Structural violation of the 3073-byte record format.
    Format { file: PathBuf, detail: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { file, source } => {
                write!(f, "reading {}: {source}", file.display())
            }
            DataError::Format { file, detail } => {
                write!(f, "bad CIFAR-10 batch {}: {detail}", file.display())
            }
        }
    }
}

impl StdError for DataError {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        match self {
            DataError::Io { source, .. } => Some(source),
            DataError::Format { .. } => None,
        }
    }
}

/// Labeled images as one flat `[N, C, H, W]` buffer.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    fn new(classes: usize, channels: usize, size: usize) -> Self {
        Dataset {
            classes,
            channels,
            size,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn plane_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    fn push(&mut self, image: &[f32], label: usize) {
        debug_assert_eq!(image.len(), self.plane_len());
        self.images.extend_from_slice(image);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.plane_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Assemble `[T, B, C, H, W]` by replicating each static image across all
    /// `timesteps`, plus the matching label slice.
    pub fn batch<T: Scalar>(&self, indices: &[usize], timesteps: usize) -> (Tensor5<T>, Vec<usize>) {
        let plane = self.plane_len();
        let shape = Shape5::new(timesteps, indices.len(), self.channels, self.size, self.size);
        let mut out = Tensor5::zeros(shape);
        {
            let data = out.data_mut();
            for t in 0..timesteps {
                for (bi, &i) in indices.iter().enumerate() {
                    let dst = (t * indices.len() + bi) * plane;
                    for (d, &s) in data[dst..dst + plane].iter_mut().zip(self.image(i)) {
                        *d = real::<T>(s as f64);
                    }
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (out, labels)
    }
}

// ── Synthetic separable classes ───────────────────────────────────────────

/// Recipe for the synthetic stand-in set: one Gaussian template per class,
/// i.i.d. pixel noise on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Small, linearly separable, fits through two stride-2 cells.
    pub fn desk_default(seed: u64) -> Self {
        SynthSpec {
            classes: 4,
            channels: 1,
            size: 8,
            train_per_class: 32,
            test_per_class: 8,
            noise: 0.2,
            seed,
        }
    }
}

pub struct SynthData {
    pub train: Dataset,
    pub test: Dataset,
    /// Nearest-template accuracy on the train split — the set's intrinsic
    /// difficulty, recorded so runs can be judged against it.
    pub oracle_accuracy: f64,
}

/// Deterministic generation: the same spec always yields the same tensors.
pub fn gen_synthetic(spec: &SynthSpec) -> SynthData {
    const AMPLITUDE: f64 = 1.5;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plane = spec.channels * spec.size * spec.size;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let templates: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| {
            (0..plane)
                .map(|_| (AMPLITUDE * unit.sample(&mut rng)) as f32)
                .collect()
        })
        .collect();

    let mut draw_split = |per_class: usize| {
        let mut set = Dataset::new(spec.classes, spec.channels, spec.size);
        let mut image = vec![0.0f32; plane];
        for (class, template) in templates.iter().enumerate() {
            for _ in 0..per_class {
                for (px, &base) in image.iter_mut().zip(template) {
                    *px = base + (spec.noise * unit.sample(&mut rng)) as f32;
                }
                set.push(&image, class);
            }
        }
        set
    };
    let train = draw_split(spec.train_per_class);
    let test = draw_split(spec.test_per_class);

    let oracle_accuracy = nearest_template_accuracy(&train, &templates);
    SynthData {
        train,
        test,
        oracle_accuracy,
    }
}

/// Fraction of samples whose nearest template (L2) is their own class.
pub fn nearest_template_accuracy(set: &Dataset, templates: &[Vec<f32>]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for i in 0..set.len() {
        let image = set.image(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (class, template) in templates.iter().enumerate() {
            let d: f64 = image
                .iter()
                .zip(template)
                .map(|(&a, &b)| {
                    let d = (a - b) as f64;
                    d * d
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = class;
            }
        }
        if best == set.label(i) {
            correct += 1;
        }
    }
    correct as f64 / set.len() as f64
}

// ── CIFAR-10 binary batches ───────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct CifarData {
    pub train: Dataset,
    pub test: Dataset,
    /// Record counts of the files on disk, before any subsetting.
    pub train_total: usize,
    pub test_total: usize,
    /// Per-channel normalization constants computed over the full train set.
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

struct RawBatch {
    labels: Vec<u8>,
    pixels: Vec<u8>, // CHW uint8, CIFAR_PIXELS per record
}

fn read_batch(path: &Path) -> Result<RawBatch, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        file: path.to_path_buf(),
        source,
    })?;
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(DataError::Format {
            file: path.to_path_buf(),
            detail: format!(
                "{} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
                bytes.len()
            ),
        });
    }
    let records = bytes.len() / CIFAR_RECORD_BYTES;
    if records != CIFAR_RECORDS_PER_FILE {
        return Err(DataError::Format {
            file: path.to_path_buf(),
            detail: format!("expected {CIFAR_RECORDS_PER_FILE} records, found {records}"),
        });
    }
    let mut labels = Vec::with_capacity(records);
    let mut pixels = Vec::with_capacity(records * CIFAR_PIXELS);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= CIFAR_CLASSES {
            return Err(DataError::Format {
                file: path.to_path_buf(),
                detail: format!("record {i}: label byte {label} outside 0..={}", CIFAR_CLASSES - 1),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok(RawBatch { labels, pixels })
}

/// Load the standard binary batches from `dir`, normalize per channel with
/// statistics of the full train split, and optionally keep only the first
/// `n` records of every class (in file order, so the subset is deterministic).
pub fn load_cifar10(
    dir: &Path,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
) -> Result<CifarData, DataError> {
    let mut train_raw = RawBatch {
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    for name in CIFAR_TRAIN_FILES {
        let batch = read_batch(&dir.join(name))?;
        train_raw.labels.extend_from_slice(&batch.labels);
        train_raw.pixels.extend_from_slice(&batch.pixels);
    }
    let test_raw = read_batch(&dir.join(CIFAR_TEST_FILE))?;

    // Channel statistics over every train pixel, accumulated in f64 on the
    // raw bytes so no full-precision copy of the set is ever materialized.
    let plane = CIFAR_SIZE * CIFAR_SIZE;
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    for record in train_raw.pixels.chunks_exact(CIFAR_PIXELS) {
        for c in 0..CIFAR_CHANNELS {
            for &px in &record[c * plane..(c + 1) * plane] {
                let v = px as f64 / 255.0;
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
    }
    let n = (train_raw.labels.len() * plane) as f64;
    let mut mean = [0.0f64; 3];
    let mut std = [0.0f64; 3];
    for c in 0..CIFAR_CHANNELS {
        mean[c] = sum[c] / n;
        std[c] = (sumsq[c] / n - mean[c] * mean[c]).max(1e-8).sqrt();
    }

    let select = |raw: &RawBatch, per_class: Option<usize>| {
        let mut kept = Vec::new();
        match per_class {
            None => kept.extend(0..raw.labels.len()),
            Some(k) => {
                let mut counts = [0usize; CIFAR_CLASSES];
                for (i, &label) in raw.labels.iter().enumerate() {
                    let c = label as usize;
                    if counts[c] < k {
                        counts[c] += 1;
                        kept.push(i);
                    }
                }
            }
        }
        kept
    };
    let build = |raw: &RawBatch, kept: &[usize]| {
        let mut set = Dataset::new(CIFAR_CLASSES, CIFAR_CHANNELS, CIFAR_SIZE);
        let mut image = vec![0.0f32; CIFAR_PIXELS];
        for &i in kept {
            let record = &raw.pixels[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS];
            for c in 0..CIFAR_CHANNELS {
                for (dst, &px) in image[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .zip(&record[c * plane..(c + 1) * plane])
                {
                    *dst = ((px as f64 / 255.0 - mean[c]) / std[c]) as f32;
                }
            }
            set.push(&image, raw.labels[i] as usize);
        }
        set
    };

    let train_kept = select(&train_raw, train_per_class);
    let test_kept = select(&test_raw, test_per_class);
    Ok(CifarData {
        train: build(&train_raw, &train_kept),
        test: build(&test_raw, &test_kept),
        train_total: train_raw.labels.len(),
        test_total: test_raw.labels.len(),
        mean,
        std,
    })
}
