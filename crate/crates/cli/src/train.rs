//! The training vehicle: one run per process, fully determined by its
//! [`RunConfig`]. Emits JSONL metrics per epoch, a final CSV, the echoed
//! config, and a machine-readable summary for [`crate::compare`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spikepool_core::{BnMode, Exec, LifConfig, Scalar, Shape5, Tape, Variant};

use crate::data::{gen_synthetic, load_cifar10, Dataset, SynthSpec};
use crate::model::SpikeNet;
use crate::optim::{OptimKind, Optimizer};

/// Cell widths per dataset: `[input, cell1, cell2]`.
const SYNTH_CHANNELS: [usize; 3] = [1, 4, 8];
const CIFAR_CHANNELS: [usize; 3] = [3, 6, 12];
const KERNEL: usize = 3;
const STRIDE: usize = 2;
/// How many batches the loader thread keeps staged ahead of the trainer.
const PREFETCH_DEPTH: usize = 2;

pub const DATA_DIR_ENV: &str = "SPIKEPOOL_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synth,
    Cifar10,
}

impl DatasetKind {
    pub fn label(self) -> &'static str {
        match self {
            DatasetKind::Synth => "synth",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "synth" => Some(DatasetKind::Synth),
            "cifar10" => Some(DatasetKind::Cifar10),
            _ => None,
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Precision {
    pub fn label(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }
}

/// Everything a run depends on. Two runs with equal configs (and equal code)
/// produce identical metrics, modulo wall-clock fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub arch: Variant,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub timesteps: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimKind,
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,
    /// Class-balanced train subset (images per class); `None` = whole split.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.timesteps == 0 || self.epochs == 0 || self.batch == 0 {
            bail!("timesteps, epochs, and batch must all be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            bail!("learning rate must be positive and finite, got {}", self.lr);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_time_s: f64,
    /// Membrane updates spent on training forwards this epoch.
    pub lif_updates: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinalReport {
    pub config: RunConfig,
    pub train_len: usize,
    pub test_len: usize,
    /// Nearest-template accuracy of the synthetic set (its difficulty).
    pub oracle_accuracy: Option<f64>,
    pub param_count: usize,
    pub lif_updates_per_sample: u64,
    pub total_wall_time_s: f64,
    pub records: Vec<MetricsRecord>,
}

impl FinalReport {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records.last().expect("at least one epoch")
    }
}

pub fn config_path(out: &Path) -> PathBuf {
    out.join("config.json")
}

pub fn metrics_jsonl_path(out: &Path) -> PathBuf {
    out.join("metrics.jsonl")
}

pub fn metrics_csv_path(out: &Path) -> PathBuf {
    out.join("metrics.csv")
}

pub fn final_path(out: &Path) -> PathBuf {
    out.join("final.json")
}

pub fn train(config: &RunConfig) -> anyhow::Result<FinalReport> {
    config.validate()?;
    match config.precision {
        Precision::F32 => run::<f32>(config),
        Precision::F64 => run::<f64>(config),
    }
}

struct LoadedData {
    train: Dataset,
    test: Dataset,
    oracle_accuracy: Option<f64>,
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<LoadedData> {
    match cfg.dataset {
        DatasetKind::Synth => {
            let mut spec = SynthSpec::desk_default(cfg.seed ^ 0x5eed_da7a);
            if let Some(n) = cfg.train_per_class {
                spec.train_per_class = n;
            }
            if let Some(n) = cfg.test_per_class {
                spec.test_per_class = n;
            }
            let data = gen_synthetic(&spec);
            Ok(LoadedData {
                train: data.train,
                test: data.test,
                oracle_accuracy: Some(data.oracle_accuracy),
            })
        }
        DatasetKind::Cifar10 => {
            let dir = cfg
                .data_dir
                .clone()
                .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
                .ok_or_else(|| {
                    anyhow!("cifar10 needs --data-dir or the {DATA_DIR_ENV} environment variable")
                })?;
            let data = load_cifar10(&dir, cfg.train_per_class, cfg.test_per_class)?;
            Ok(LoadedData {
                train: data.train,
                test: data.test,
                oracle_accuracy: None,
            })
        }
    }
}

fn net_channels(cfg: &RunConfig) -> [usize; 3] {
    match cfg.dataset {
        DatasetKind::Synth => SYNTH_CHANNELS,
        DatasetKind::Cifar10 => CIFAR_CHANNELS,
    }
}

fn run<T: Scalar>(cfg: &RunConfig) -> anyhow::Result<FinalReport> {
    let started = Instant::now();
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    fs::write(
        config_path(&cfg.out),
        serde_json::to_string_pretty(cfg)?,
    )
    .with_context(|| format!("writing {}", config_path(&cfg.out).display()))?;

    let data = load_data(cfg)?;
    if data.train.is_empty() || data.test.is_empty() {
        bail!("dataset has an empty split");
    }
    let classes = data.train.classes;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channels = net_channels(cfg);
    let mut net = SpikeNet::<T>::init(
        cfg.arch,
        [data.train.channels, channels[1], channels[2]],
        KERNEL,
        STRIDE,
        classes,
        LifConfig::default(),
        &mut rng,
    )?;
    let sample_shape = Shape5::new(
        cfg.timesteps,
        1,
        data.train.channels,
        data.train.size,
        data.train.size,
    );
    let lif_updates_per_sample = net.lif_updates_per_sample(sample_shape)?;
    let mut optim = Optimizer::<T>::new(cfg.optimizer, cfg.lr, &net.param_sizes());

    let jsonl = fs::File::create(metrics_jsonl_path(&cfg.out))
        .with_context(|| format!("creating {}", metrics_jsonl_path(&cfg.out).display()))?;
    let mut jsonl = BufWriter::new(jsonl);

    let train_set = Arc::new(data.train);
    let mut records: Vec<MetricsRecord> = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let tick = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        order.shuffle(&mut shuffle_rng);

        // Batches are staged by a loader thread; the bounded channel keeps
        // arrival order identical to `order`, so training is deterministic.
        let (tx, rx) = sync_channel(PREFETCH_DEPTH);
        let feeder_set = Arc::clone(&train_set);
        let (batch, timesteps) = (cfg.batch, cfg.timesteps);
        let feeder = thread::spawn(move || {
            for chunk in order.chunks(batch) {
                if tx.send(feeder_set.batch::<T>(chunk, timesteps)).is_err() {
                    return; // trainer bailed out; stop quietly
                }
            }
        });

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut lif_updates = 0u64;
        let mut diverged = None;
        for (input, labels) in rx.iter() {
            let mut tape = Tape::new(Exec::default());
            let x = tape.leaf(input);
            let nodes = net.forward(&mut tape, x, BnMode::Train)?;
            let loss_id = tape.cross_entropy(nodes.logits, &labels)?;
            let loss = tape.value(loss_id).data()[0].to_f64();
            if !loss.is_finite() {
                diverged = Some((seen / cfg.batch, loss));
                break;
            }
            let grads = tape.backward_ones(loss_id)?;
            let dense: Vec<_> = nodes.params.iter().map(|&id| grads.dense(id)).collect();
            optim.step(&mut net.params_mut(), &dense);
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
            lif_updates += nodes.lif_updates;
        }
        drop(rx);
        feeder
            .join()
            .map_err(|_| anyhow!("batch loader thread panicked"))?;
        if let Some((batch_index, loss)) = diverged {
            let diag = serde_json::json!({
                "diagnostic": "non-finite training loss",
                "epoch": epoch,
                "batch_index": batch_index,
                "loss": loss.to_string(),
            });
            writeln!(jsonl, "{diag}")?;
            jsonl.flush()?;
            bail!("training diverged: non-finite loss in epoch {epoch} (batch {batch_index})");
        }

        let train_loss = loss_sum / seen as f64;
        let (_, train_accuracy) = evaluate(&mut net, &train_set, cfg)?;
        let (test_loss, test_accuracy) = evaluate(&mut net, &data.test, cfg)?;
        let record = MetricsRecord {
            epoch,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
            wall_time_s: tick.elapsed().as_secs_f64(),
            lif_updates,
        };
        writeln!(jsonl, "{}", serde_json::to_string(&record)?)?;
        records.push(record);
    }
    jsonl.flush()?;

    let report = FinalReport {
        config: cfg.clone(),
        train_len: train_set.len(),
        test_len: data.test.len(),
        oracle_accuracy: data.oracle_accuracy,
        param_count: net.param_count(),
        lif_updates_per_sample,
        total_wall_time_s: started.elapsed().as_secs_f64(),
        records,
    };
    write_csv(&metrics_csv_path(&cfg.out), &report.records)?;
    fs::write(final_path(&cfg.out), serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", final_path(&cfg.out).display()))?;
    Ok(report)
}

/// Forward-only pass in eval-mode batch norm; mean loss and top-1 accuracy.
fn evaluate<T: Scalar>(
    net: &mut SpikeNet<T>,
    set: &Dataset,
    cfg: &RunConfig,
) -> anyhow::Result<(f64, f64)> {
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for chunk in indices.chunks(cfg.batch) {
        let (input, labels) = set.batch::<T>(chunk, cfg.timesteps);
        let mut tape = Tape::new(Exec::default());
        let x = tape.leaf(input);
        let nodes = net.forward(&mut tape, x, BnMode::Eval)?;
        let loss_id = tape.cross_entropy(nodes.logits, &labels)?;
        loss_sum += tape.value(loss_id).data()[0].to_f64() * labels.len() as f64;

        let logits = tape.value(nodes.logits);
        for (bi, &label) in labels.iter().enumerate() {
            let mut best = 0usize;
            for k in 1..set.classes {
                if logits.at(0, bi, k, 0, 0) > logits.at(0, bi, best, 0, 0) {
                    best = k;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok((
        loss_sum / set.len() as f64,
        correct as f64 / set.len() as f64,
    ))
}

fn write_csv(path: &Path, records: &[MetricsRecord]) -> anyhow::Result<()> {
    let mut out = String::from(
        "epoch,train_loss,train_accuracy,test_loss,test_accuracy,wall_time_s,lif_updates\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.test_loss,
            r.test_accuracy,
            r.wall_time_s,
            r.lif_updates
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
