//! `spikepool` binary: train small spiking nets, probe gradient routing,
//! run finite-difference checks, and compare finished runs.
//!
//! Every failure leaves a machine-readable `{"error":{kind,message}}` object
//! on stderr and a nonzero exit code; results land on stdout as JSON.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikepool_cli::data::DataError;
use spikepool_cli::probe::ProbeMode;
use spikepool_cli::train::{DatasetKind, Precision, RunConfig, DATA_DIR_ENV};
use spikepool_cli::OptimKind;
use spikepool_core::Variant;

#[derive(Parser)]
#[command(name = "spikepool", version, about = "Spiking downsampling-order workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one architecture variant and write run artifacts.
    Train(TrainArgs),
    /// Inspect gradient routing, routing mismatches, or membrane-update counts.
    Probe(ProbeArgs),
    /// Finite-difference check of the reverse pass.
    Gradcheck(GradcheckArgs),
    /// Summarize and pair finished runs.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Downsampling order: cml, baseline, avgpool or strideconv.
    #[arg(long, value_parser = parse_variant)]
    arch: Variant,
    #[arg(long, value_parser = parse_dataset, default_value = "synth")]
    dataset: DatasetKind,
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    timesteps: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_parser = parse_optim, default_value = "adam")]
    optimizer: OptimKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_precision, default_value = "f32")]
    precision: Precision,
    /// Output directory for config, metrics and the final report.
    #[arg(long)]
    out: PathBuf,
    /// Cap the training set at this many images per class.
    #[arg(long)]
    subset: Option<usize>,
    /// Cap the test set at this many images per class.
    #[arg(long)]
    test_subset: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    /// routing, mismatch or opcount.
    #[arg(long, value_parser = parse_probe_mode)]
    mode: ProbeMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent pooling windows per ensemble.
    #[arg(long, default_value_t = 10_000)]
    windows: usize,
    /// Optional JSONL (routing, mismatch) or JSON (opcount) dump.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check the full net with softened spikes instead of the smooth graph.
    #[arg(long)]
    soft: bool,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directories (or their final.json files).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Where to write comparison.json and comparison.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::from_label(s).ok_or_else(|| format!("unknown arch {s:?} (expected cml, baseline, avgpool or strideconv)"))
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::from_label(s).ok_or_else(|| format!("unknown dataset {s:?} (expected synth or cifar10)"))
}

fn parse_optim(s: &str) -> Result<OptimKind, String> {
    OptimKind::from_label(s).ok_or_else(|| format!("unknown optimizer {s:?} (expected adam or sgd)"))
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    Precision::from_label(s).ok_or_else(|| format!("unknown precision {s:?} (expected f32 or f64)"))
}

fn parse_probe_mode(s: &str) -> Result<ProbeMode, String> {
    ProbeMode::from_label(s).ok_or_else(|| format!("unknown probe mode {s:?} (expected routing, mismatch or opcount)"))
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(data) = err.downcast_ref::<DataError>() {
        return match data {
            DataError::Io { .. } => "io",
            DataError::Format { .. } => "format",
        };
    }
    if err.downcast_ref::<spikepool_core::Error>().is_some() {
        return "model";
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    "runtime"
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let payload = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{payload}");
    ExitCode::FAILURE
}

fn run(command: Command) -> anyhow::Result<Option<serde_json::Value>> {
    match command {
        Command::Train(args) => {
            let config = RunConfig {
                arch: args.arch,
                dataset: args.dataset,
                data_dir: args.data_dir,
                timesteps: args.timesteps,
                epochs: args.epochs,
                batch: args.batch,
                lr: args.lr,
                optimizer: args.optimizer,
                seed: args.seed,
                precision: args.precision,
                out: args.out,
                train_per_class: args.subset,
                test_per_class: args.test_subset,
            };
            let report = spikepool_cli::train(&config)?;
            let last = report.final_record();
            Ok(Some(serde_json::json!({
                "out": config.out,
                "epochs": report.records.len(),
                "train_loss": last.train_loss,
                "test_accuracy": last.test_accuracy,
                "lif_updates_per_sample": report.lif_updates_per_sample,
            })))
        }
        Command::Probe(args) => {
            let value = spikepool_cli::run_probe(args.mode, args.seed, args.windows, args.out.as_deref())?;
            Ok(Some(value))
        }
        Command::Gradcheck(args) => {
            let value = spikepool_cli::run_gradcheck(args.soft, args.eps, args.seeds, args.tol)?;
            let passed = value["passed"].as_bool() == Some(true);
            println!("{}", serde_json::to_string_pretty(&value)?);
            if !passed {
                anyhow::bail!(
                    "gradient check failed: max relative error {} exceeds {}",
                    value["max_rel_err"],
                    value["tol"]
                );
            }
            Ok(None)
        }
        Command::Compare(args) => {
            let cmp = spikepool_cli::compare(&args.runs)?;
            if let Some(dir) = args.out.as_deref() {
                spikepool_cli::write_artifacts(&cmp, dir)?;
            }
            Ok(Some(serde_json::to_value(&cmp)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            return fail("usage", &err.to_string());
        }
    };
    match run(cli.command) {
        Ok(Some(value)) => match serde_json::to_string_pretty(&value) {
            Ok(text) => {
                println!("{text}");
                ExitCode::SUCCESS
            }
            Err(err) => fail("runtime", &err.to_string()),
        },
        Ok(None) => ExitCode::SUCCESS,
        Err(err) => fail(error_kind(&err), &format!("{err:#}")),
    }
}
