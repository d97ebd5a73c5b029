//! Verification subcommands: gradient-routing probes over random window
//! ensembles, the routing-miss rate at a target spike rate, membrane-update
//! counting, and the finite-difference gradcheck entry point.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use spikepool_core::fdcheck::fd_check;
use spikepool_core::gradprobe::analyze_routing_from_features;
use spikepool_core::{
    BnMode, Exec, LifConfig, PoolSpec, Result as CoreResult, RunningStats, Shape5, SpikeMode,
    Tape, Tensor5, Variant,
};

use crate::model::SpikeNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeMode {
    Routing,
    Mismatch,
    Opcount,
}

impl ProbeMode {
    pub fn label(self) -> &'static str {
        match self {
            ProbeMode::Routing => "routing",
            ProbeMode::Mismatch => "mismatch",
            ProbeMode::Opcount => "opcount",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "routing" => Some(ProbeMode::Routing),
            "mismatch" => Some(ProbeMode::Mismatch),
            "opcount" => Some(ProbeMode::Opcount),
            _ => None,
        }
    }
}

/// Draw a `[1, windows, 1, k, k]` batch of independent windows; mean 2.0 puts
/// the default-parameter spike probability at one half.
fn window_batch(windows: usize, k: usize, seed: u64) -> Tensor5<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(2.0, 1.5).expect("normal");
    let shape = Shape5::new(1, windows, 1, k, k);
    let data = (0..shape.len()).map(|_| dist.sample(&mut rng)).collect();
    Tensor5::from_vec(shape, data).expect("length")
}

/// The hand-checkable window where the two orderings disagree: every
/// position but the last spikes, yet the strongest feature sits at (0,1).
pub fn counterexample_window() -> Tensor5<f64> {
    Tensor5::from_vec(Shape5::new(1, 1, 1, 2, 2), vec![2.2, 4.0, 2.4, 0.1]).expect("length")
}

pub fn run_probe(
    mode: ProbeMode,
    seed: u64,
    windows: usize,
    out: Option<&Path>,
) -> anyhow::Result<serde_json::Value> {
    match mode {
        ProbeMode::Routing => probe_routing(seed, windows, out),
        ProbeMode::Mismatch => probe_mismatch(seed, windows, out),
        ProbeMode::Opcount => probe_opcount(out),
    }
}

fn probe_routing(
    seed: u64,
    windows: usize,
    out: Option<&Path>,
) -> anyhow::Result<serde_json::Value> {
    let lif = LifConfig::default();
    let mut writer = match out {
        Some(path) => Some(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => None,
    };

    let mut ensembles = Vec::new();
    for k in [2usize, 3] {
        let x = window_batch(windows, k, seed ^ k as u64);
        let spec = PoolSpec::square(k)?;
        for variant in [Variant::Cml, Variant::Baseline] {
            let report =
                analyze_routing_from_features(&x, variant, spec, &lif, None, Exec::default())?;
            if let Some(w) = writer.as_mut() {
                report.write_jsonl(w)?;
            }
            ensembles.push(json!({
                "window": format!("{k}x{k}"),
                "summary": report.summary,
            }));
        }
    }

    // The constructed disagreement window, reported record-by-record.
    let x = counterexample_window();
    let spec = PoolSpec::square(2)?;
    let cml = analyze_routing_from_features(&x, Variant::Cml, spec, &lif, None, Exec::default())?;
    let base =
        analyze_routing_from_features(&x, Variant::Baseline, spec, &lif, None, Exec::default())?;
    let counterexample = json!({
        "x": [[2.2, 4.0], [2.4, 0.1]],
        "cml": cml.records[0],
        "baseline": base.records[0],
    });

    Ok(json!({
        "probe": "routing",
        "windows_per_ensemble": windows,
        "ensembles": ensembles,
        "counterexample": counterexample,
    }))
}

fn probe_mismatch(
    seed: u64,
    windows: usize,
    out: Option<&Path>,
) -> anyhow::Result<serde_json::Value> {
    let lif = LifConfig::default();
    let x = window_batch(windows, 2, seed);
    let report = analyze_routing_from_features(
        &x,
        Variant::Baseline,
        PoolSpec::square(2)?,
        &lif,
        None,
        Exec::default(),
    )?;
    if let Some(path) = out {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        report.write_jsonl(&mut w)?;
    }
    Ok(json!({
        "probe": "mismatch",
        "windows": windows,
        "spike_rate": report.summary.spike_rate,
        "mismatch_rate": report.summary.mismatch_rate,
        "oracle_agreement": report.summary.oracle_agreement,
    }))
}

fn probe_opcount(out: Option<&Path>) -> anyhow::Result<serde_json::Value> {
    let shape = Shape5::new(4, 1, 3, 32, 32);
    let mut per_variant = serde_json::Map::new();
    for variant in Variant::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = SpikeNet::<f32>::init(
            variant,
            [3, 6, 12],
            3,
            2,
            10,
            LifConfig::default(),
            &mut rng,
        )?;
        let updates = net.lif_updates_per_sample(shape)?;
        per_variant.insert(variant.label().to_string(), json!(updates));
    }
    let baseline = per_variant["baseline"].as_u64().unwrap() as f64;
    let cml = per_variant["cml"].as_u64().unwrap() as f64;
    let value = json!({
        "probe": "opcount",
        "input": "4x1x3x32x32",
        "lif_updates_per_sample": per_variant,
        "baseline_over_cml": baseline / cml,
    });
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&value)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(value)
}

// ── gradcheck ─────────────────────────────────────────────────────────────

/// Random leaf tensors for the two-cell check net, in builder order.
fn gradcheck_leaves(seed: u64) -> Vec<Tensor5<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |shape: Shape5, lo: f64, hi: f64| {
        let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        Tensor5::from_vec(shape, data).expect("length")
    };
    vec![
        fill(Shape5::new(2, 1, 1, 8, 8), -1.0, 2.0), // input
        fill(Shape5::new(1, 4, 1, 3, 3), -0.8, 0.8), // conv1
        fill(Shape5::new(1, 1, 4, 1, 1), 0.5, 1.5),  // gamma1
        fill(Shape5::new(1, 1, 4, 1, 1), -0.5, 0.5), // beta1
        fill(Shape5::new(1, 8, 4, 3, 3), -0.5, 0.5), // conv2
        fill(Shape5::new(1, 1, 8, 1, 1), 0.5, 1.5),  // gamma2
        fill(Shape5::new(1, 1, 8, 1, 1), -0.5, 0.5), // beta2
        fill(Shape5::new(1, 4, 8, 1, 1), -0.7, 0.7), // head weight
        fill(Shape5::new(1, 1, 4, 1, 1), -0.3, 0.3), // head bias
    ]
}

/// Two downsampling cells plus readout and cross-entropy, as a raw tape so
/// every parameter is a perturbable leaf. With `soft` the spike nonlinearity
/// runs in its smoothed form; without it the cells skip the neuron entirely
/// (hard thresholds have no meaningful finite difference).
fn gradcheck_loss(
    leaves: &[Tensor5<f64>],
    soft: bool,
) -> CoreResult<(Tape<f64>, Vec<spikepool_core::NodeId>, spikepool_core::NodeId)> {
    let lif = LifConfig {
        mode: SpikeMode::Soft,
        ..LifConfig::default()
    };
    let mut tape = Tape::new(Exec::Sequential);
    let ids: Vec<_> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let pool = PoolSpec::square(2)?;

    let c1 = tape.conv2d(ids[0], ids[1], None, 1, 1)?;
    let (n1, _) = tape.batchnorm(c1, ids[2], ids[3], &RunningStats::identity(4), BnMode::Train, 1e-5)?;
    let p1 = tape.maxpool(n1, pool)?;
    let s1 = if soft { tape.lif(p1, &lif)? } else { p1 };

    let c2 = tape.conv2d(s1, ids[4], None, 1, 1)?;
    let (n2, _) = tape.batchnorm(c2, ids[5], ids[6], &RunningStats::identity(8), BnMode::Train, 1e-5)?;
    let p2 = tape.maxpool(n2, pool)?;
    let s2 = if soft { tape.lif(p2, &lif)? } else { p2 };

    let pooled = tape.spatial_mean(s2);
    let readout = tape.linear(pooled, ids[7], Some(ids[8]))?;
    let logits = tape.mean_time(readout);
    let loss = tape.cross_entropy(logits, &[2])?;
    Ok((tape, ids, loss))
}

pub fn run_gradcheck(
    soft: bool,
    eps: f64,
    seeds: u64,
    tol: f64,
) -> anyhow::Result<serde_json::Value> {
    if seeds == 0 {
        bail!("gradcheck needs at least one seed");
    }
    let mut worst_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;
    for seed in 0..seeds {
        let leaves = gradcheck_leaves(seed);
        let (tape, ids, loss) = gradcheck_loss(&leaves, soft)?;
        let grads = tape.backward_ones(loss)?;
        let analytic: Vec<_> = ids.iter().map(|&id| grads.dense(id)).collect();
        let outcome = fd_check(&leaves, &analytic, eps, |perturbed| {
            let (tape, _, loss) = gradcheck_loss(perturbed, soft)?;
            Ok(tape.value(loss).data()[0])
        })?;
        checked += outcome.checked;
        if outcome.max_rel_err > worst_err {
            worst_err = outcome.max_rel_err;
            worst = outcome.worst.map(|w| {
                json!({
                    "seed": seed,
                    "leaf": w.leaf,
                    "element": w.element,
                    "analytic": w.analytic,
                    "numeric": w.numeric,
                })
            });
        }
    }
    let passed = worst_err < tol;
    let value = json!({
        "mode": if soft { "soft-spike" } else { "smooth" },
        "seeds": seeds,
        "eps": eps,
        "tol": tol,
        "elements_checked": checked,
        "max_rel_err": worst_err,
        "worst": worst,
        "passed": passed,
    });
    Ok(value)
}
