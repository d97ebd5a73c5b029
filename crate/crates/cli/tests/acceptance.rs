//! The release gate. Each test checks one verifiable claim about the
//! framework at its stated tolerance and time budget, and prints a one-line
//! verdict (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Full-scale accuracy tables are out of reach on a desk machine; everything
//! here is either a mechanical property of the gradients, an exact count, or
//! a small training run with a hard budget.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikepool_cli::compare;
use spikepool_cli::data::load_cifar10;
use spikepool_cli::probe::{counterexample_window, run_gradcheck, run_probe, ProbeMode};
use spikepool_cli::train::{train, DatasetKind, Precision, RunConfig};
use spikepool_cli::OptimKind;
use spikepool_core::gradprobe::analyze_routing_from_features;
use spikepool_core::lif::lif_forward;
use spikepool_core::{
    BnMode, DownsampleBlock, Exec, LifConfig, PoolSpec, Shape5, Tape, Tensor5, Variant,
};

fn verdict(name: &str, detail: &str) {
    eprintln!("acceptance: {name}: PASS ({detail})");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fill(shape: Shape5, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor5<f64> {
    let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor5::from_vec(shape, data).expect("length")
}

// ── 1. Pool-before-neuron routes gradient to the feature argmax ──────────

#[test]
fn a1_cml_routing_follows_the_feature_argmax() {
    let start = Instant::now();
    let value = run_probe(ProbeMode::Routing, 17, 10_000, None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut cml_windows = 0u64;
    for e in value["ensembles"].as_array().unwrap() {
        let s = &e["summary"];
        if s["variant"].as_str() == Some("cml") {
            assert_eq!(s["argmax_agreement"].as_f64(), Some(1.0), "{s}");
            assert_eq!(s["oracle_agreement"].as_f64(), Some(1.0), "{s}");
            assert_eq!(s["one_hot_violations"].as_u64(), Some(0), "{s}");
            cml_windows += s["windows"].as_u64().unwrap();
        }
    }
    assert!(cml_windows >= 20_000, "only {cml_windows} windows probed");
    assert!(elapsed < 10.0, "took {elapsed:.1}s");
    verdict(
        "cml routing == argmax(x)",
        &format!("{cml_windows} windows across 2x2 and 3x3, {elapsed:.2}s"),
    );
}

// ── 2. Neuron-before-pool routes to the first spike instead ──────────────

#[test]
fn a2_baseline_routing_follows_the_first_spike() {
    let start = Instant::now();
    let value = run_probe(ProbeMode::Routing, 17, 10_000, None).unwrap();

    let mut base_windows = 0u64;
    let mut mismatch = 0.0f64;
    for e in value["ensembles"].as_array().unwrap() {
        let s = &e["summary"];
        if s["variant"].as_str() == Some("baseline") {
            // 100% agreement with the first-spike oracle…
            assert_eq!(s["oracle_agreement"].as_f64(), Some(1.0), "{s}");
            base_windows += s["windows"].as_u64().unwrap();
            mismatch = mismatch.max(s["mismatch_rate"].as_f64().unwrap());
        }
    }
    assert!(base_windows >= 20_000);

    // …and a strictly positive miss rate against argmax(x) at ~50% spikes.
    let m = run_probe(ProbeMode::Mismatch, 17, 10_000, None).unwrap();
    let spike_rate = m["spike_rate"].as_f64().unwrap();
    let miss = m["mismatch_rate"].as_f64().unwrap();
    assert!((spike_rate - 0.5).abs() < 0.05, "spike rate {spike_rate}");
    assert!(miss > 0.0 && mismatch > 0.0);

    // The constructed window: position (0,1) holds the largest feature, yet
    // the spike-pooled path sends everything to (0,0).
    let cex = &value["counterexample"];
    assert_eq!(cex["baseline"]["grad_nonzero"].as_array().unwrap().len(), 1);
    assert_eq!(cex["baseline"]["grad_nonzero"][0][0].as_u64(), Some(0));
    assert_eq!(cex["baseline"]["grad_nonzero"][0][1].as_u64(), Some(0));
    assert_eq!(cex["baseline"]["x_argmax"][1].as_u64(), Some(1));
    assert_eq!(cex["cml"]["grad_nonzero"][0][1].as_u64(), Some(1));

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.1}s");
    verdict(
        "baseline routing == first spike",
        &format!("miss rate {miss:.3} at spike rate {spike_rate:.3}, {elapsed:.2}s"),
    );
}

// ── 3. Membrane-update count drops by exactly the stride squared ─────────

#[test]
fn a3_update_count_ratio_is_exactly_stride_squared() {
    for (stride, hw) in [(2usize, 32usize), (3, 36)] {
        let lif = LifConfig::default();
        let base = DownsampleBlock::<f64>::init(Variant::Baseline, 3, 8, 3, stride, lif, &mut rng(0)).unwrap();
        let cml = base.with_variant(Variant::Cml);
        let shape = Shape5::new(4, 2, 3, hw, hw);
        let b = base.count_lif_updates(shape).unwrap();
        let c = cml.count_lif_updates(shape).unwrap();
        assert_eq!(b, (stride * stride) as u64 * c, "stride {stride}");
        if stride == 2 {
            assert_eq!(b, 4 * c);
        }
    }
    verdict("update ratio == stride^2", "4 at s=2, 9 at s=3, exact integers");
}

// ── 4. Routed gradient magnitude obeys the closed form ───────────────────

#[test]
fn a4_gradient_magnitude_matches_the_closed_form() {
    // Ensemble check at 1e-10 relative, against the oracle inside the probe.
    let value = run_probe(ProbeMode::Routing, 99, 10_000, None).unwrap();
    for e in value["ensembles"].as_array().unwrap() {
        let err = e["summary"]["max_magnitude_rel_err"].as_f64().unwrap();
        assert!(err < 1e-10, "magnitude rel err {err}");
    }

    // Independent recomputation for the hand-checkable window: with a unit
    // seed the routed gradient is (1/tau) * surrogate'(H - v_th), and the
    // pooled pre-activation is 4.0/2 = 2.0, so the gap is exactly 1.0.
    let x = counterexample_window();
    let report = analyze_routing_from_features(
        &x,
        Variant::Cml,
        PoolSpec::square(2).unwrap(),
        &LifConfig::default(),
        None,
        Exec::default(),
    )
    .unwrap();
    let alpha = 4.0f64;
    let sg = |v: f64| {
        let s = 1.0 / (1.0 + (-alpha * v).exp());
        alpha * s * (1.0 - s)
    };
    let got = report.records[0].grad_magnitude;
    let want = 0.5 * sg(2.0 - 1.0);
    assert!(
        (got - want).abs() / want.abs() < 1e-12,
        "got {got}, want {want}"
    );

    // Frozen value for a 0.1 threshold gap, checked through the full tape.
    let single = Tensor5::from_vec(Shape5::new(1, 1, 1, 1, 1), vec![2.2]).unwrap();
    let rep = analyze_routing_from_features(
        &single,
        Variant::Cml,
        PoolSpec::square(1).unwrap(),
        &LifConfig::default(),
        None,
        Exec::default(),
    )
    .unwrap();
    assert!((rep.records[0].grad_magnitude - 0.480_521_491_483_058).abs() < 1e-12);

    verdict("gradient magnitude law", "ensemble < 1e-10 rel, closed form < 1e-12");
}

// ── 5. Finite differences confirm the softened two-cell network ──────────

#[test]
fn a5_soft_network_gradient_survives_finite_differences() {
    let start = Instant::now();
    let value = run_gradcheck(true, 1e-5, 20, 1e-6).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(value["passed"].as_bool(), Some(true), "{value}");
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    verdict(
        "soft-mode finite differences",
        &format!(
            "{} elements over 20 seeds, max rel err {:.2e}, {elapsed:.1}s",
            value["elements_checked"], value["max_rel_err"].as_f64().unwrap()
        ),
    );
}

// ── 6. At a single timestep the two orderings are the same function ──────

#[test]
fn a6_single_step_outputs_are_identical_across_orderings() {
    let mut trials = 0;
    for seed in 0..120u64 {
        let mut r = rng(seed);
        let cin = r.gen_range(1..=3);
        let cout = r.gen_range(1..=4);
        let k = [1, 3][r.gen_range(0..2)];
        let hw = [4, 6, 8][r.gen_range(0..3)];
        let base =
            DownsampleBlock::<f64>::init(Variant::Baseline, cin, cout, k, 2, LifConfig::default(), &mut r)
                .unwrap();
        let mut cml = base.with_variant(Variant::Cml);
        let mut base = base;

        let input = fill(Shape5::new(1, 2, cin, hw, hw), &mut r, -2.0, 3.0);
        let mode = if seed % 2 == 0 { BnMode::Train } else { BnMode::Eval };

        let mut ta = Tape::new(Exec::default());
        let ia = ta.leaf(input.clone());
        let na = base.forward(&mut ta, ia, mode).unwrap();
        let mut tb = Tape::new(Exec::default());
        let ib = tb.leaf(input);
        let nb = cml.forward(&mut tb, ib, mode).unwrap();

        assert_eq!(ta.value(na.out).data(), tb.value(nb.out).data(), "seed {seed}");
        trials += 1;
    }
    assert!(trials >= 100);
    verdict("single-step equivalence", &format!("{trials} random paired blocks, bitwise equal"));
}

// ── 7. The membrane recursion reproduces its worked examples ─────────────

#[test]
fn a7_membrane_traces_match_hand_computed_values() {
    let lif = LifConfig::default(); // tau = 2, v_th = 1, v_reset = 0
    let shape = |t| Shape5::new(t, 1, 1, 1, 1);
    let run = |xs: &[f64]| {
        let x = Tensor5::from_vec(shape(xs.len()), xs.to_vec()).unwrap();
        lif_forward(&x, &lif, Exec::default()).unwrap().1
    };

    // Charge to exactly threshold: H = 2.0/2 = 1.0 spikes (the >= boundary)
    // and the potential resets.
    let t = run(&[2.0]);
    assert_eq!(t.h.data(), &[1.0]);
    assert_eq!(t.s.data(), &[1.0]);
    assert_eq!(t.v.data(), &[0.0]);

    // Quiescent: no input, no spike, potential stays at rest.
    let t = run(&[0.0]);
    assert_eq!(t.h.data(), &[0.0]);
    assert_eq!(t.s.data(), &[0.0]);
    assert_eq!(t.v.data(), &[0.0]);

    // Subthreshold charge then integrate over the carried potential:
    // H(1) = 1.5/2 = 0.75 silent, H(2) = 0.75 + (1.5 - 0.75)/2 = 1.125 fires.
    let t = run(&[1.5, 1.5]);
    assert_eq!(t.h.data(), &[0.75, 1.125]);
    assert_eq!(t.s.data(), &[0.0, 1.0]);
    assert_eq!(t.v.data(), &[0.75, 0.0]);

    verdict("membrane worked examples", "threshold, quiescent and subthreshold traces exact");
}

// ── 8a. Synthetic smoke: every variant fits the separable set ────────────

#[test]
fn a8_synthetic_smoke_reaches_full_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    for variant in Variant::ALL {
        let out = dir.path().join(variant.label());
        let config = RunConfig {
            arch: variant,
            dataset: DatasetKind::Synth,
            data_dir: None,
            timesteps: 4,
            epochs: 5,
            batch: 16,
            lr: 0.05,
            optimizer: OptimKind::Adam,
            seed: 0,
            precision: Precision::F32,
            out,
            train_per_class: None,
            test_per_class: None,
        };
        let report = train(&config).unwrap();
        let first = &report.records[0];
        let last = report.final_record();
        assert_eq!(
            last.train_accuracy, 1.0,
            "{} stuck at {:.3} after {} epochs",
            variant, last.train_accuracy, config.epochs
        );
        assert!(
            last.train_loss < first.train_loss,
            "{} loss did not decrease: {} -> {}",
            variant, first.train_loss, last.train_loss
        );
        details.push(format!("{}@{}ep", variant.label(), report.records.len()));
    }
    verdict("synthetic smoke", &format!("100% train accuracy for {}", details.join(", ")));
}

// ── 8b. CIFAR-sized paired comparison inside the CPU budget ──────────────

#[test]
fn a8_cifar_subset_paired_comparison_fits_the_budget() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("cifar");
    write_cifar_corpus(&data_dir);

    let mut run_dirs = Vec::new();
    for seed in 0..5u64 {
        for variant in [Variant::Cml, Variant::Baseline] {
            let out = dir.path().join(format!("{}-{}", variant.label(), seed));
            let config = RunConfig {
                arch: variant,
                dataset: DatasetKind::Cifar10,
                data_dir: Some(data_dir.clone()),
                timesteps: 4,
                epochs: 5,
                batch: 16,
                lr: 0.01,
                optimizer: OptimKind::Adam,
                seed,
                precision: Precision::F32,
                out: out.clone(),
                train_per_class: Some(200), // 2,000 train images
                test_per_class: Some(50),
            };
            let report = train(&config).unwrap();
            assert_eq!(report.train_len, 2000);
            run_dirs.push(out);
        }
    }

    let cmp = compare::compare(&run_dirs).unwrap();
    let cmp_dir = dir.path().join("comparison");
    compare::write_artifacts(&cmp, &cmp_dir).unwrap();

    // Table shape: one row per run, per-ordering aggregates, per-seed pairs.
    assert_eq!(cmp.rows.len(), 10);
    assert_eq!(cmp.by_arch.len(), 2);
    let paired = cmp.paired_cml_minus_baseline.as_ref().expect("paired block");
    assert_eq!(paired.per_seed.len(), 5);
    assert!(paired.mean_delta.is_finite());

    // The published full-scale gains ride along as reference, never as a
    // desk-scale threshold.
    let reference: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(cmp_dir.join("comparison.json")).unwrap(),
    )
    .unwrap();
    let reference = &reference["reference_full_scale"];
    assert_eq!(reference["spikformer_cifar10"].as_f64(), Some(0.53));
    assert_eq!(reference["spikformer_cifar100"].as_f64(), Some(1.81));
    assert_eq!(reference["spikingformer_cifar10"].as_f64(), Some(0.14));
    assert_eq!(reference["spikingformer_cifar100"].as_f64(), Some(1.16));
    assert!(cmp_dir.join("comparison.csv").is_file());

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "took {elapsed:.0}s");
    verdict(
        "paired subset comparison",
        &format!(
            "10 runs, mean cml-baseline delta {:+.4}, {elapsed:.0}s",
            paired.mean_delta
        ),
    );
}

// ── 9. The batch loader counts and validates the real format ─────────────

#[test]
fn a9_loader_counts_records_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("cifar");
    write_cifar_corpus(&data_dir);

    let full = load_cifar10(&data_dir, None, None).unwrap();
    assert_eq!(full.train_total, 50_000);
    assert_eq!(full.test_total, 10_000);
    assert_eq!(full.train.len(), 50_000);
    assert_eq!(full.test.len(), 10_000);

    let subset = load_cifar10(&data_dir, Some(200), Some(50)).unwrap();
    assert_eq!(subset.train.len(), 2_000);
    assert_eq!(subset.test.len(), 500);
    for class in 0..10 {
        let n = subset.train.labels().iter().filter(|&&l| l == class).count();
        assert_eq!(n, 200, "class {class}");
    }

    // Truncated file: not a whole number of records.
    let victim = data_dir.join("data_batch_3.bin");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 1]).unwrap();
    let err = load_cifar10(&data_dir, None, None).unwrap_err();
    assert!(err.to_string().contains("data_batch_3.bin"), "{err}");
    fs::write(&victim, &bytes).unwrap();

    // Out-of-range label byte.
    let mut bad = bytes.clone();
    bad[3073 * 5] = 17;
    fs::write(&victim, &bad).unwrap();
    let err = load_cifar10(&data_dir, None, None).unwrap_err();
    assert!(err.to_string().contains("label byte 17"), "{err}");
    fs::write(&victim, &bytes).unwrap();

    // Missing file.
    fs::remove_file(data_dir.join("test_batch.bin")).unwrap();
    let err = load_cifar10(&data_dir, None, None).unwrap_err();
    assert!(err.to_string().contains("test_batch.bin"), "{err}");

    verdict("batch loader", "50000/10000 records, balanced subsets, corruption detected");
}

// ── shared: deterministic full-size corpus in the 3073-byte format ────────

/// Six files of 10,000 records each, labels cycling 0..=9 so every class
/// holds exactly 1,000 images per file. Pixel means shift with the label so
/// a small net can actually learn from the subset.
fn write_cifar_corpus(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let names: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .chain([dir.join("test_batch.bin")])
        .collect();
    for (fi, path) in names.iter().enumerate() {
        let mut rng = rng(0xC1FA_u64 + fi as u64);
        let mut w = BufWriter::new(fs::File::create(path).unwrap());
        let mut noise = [0u8; 3072];
        for i in 0..10_000u32 {
            let label = (i % 10) as u8;
            w.write_all(&[label]).unwrap();
            rng.fill_bytes(&mut noise);
            let mut rec = [0u8; 3072];
            for (j, (dst, &n)) in rec.iter_mut().zip(noise.iter()).enumerate() {
                let channel = (j / 1024) as u8;
                *dst = label * 12 + channel * 5 + n % 120;
            }
            w.write_all(&rec).unwrap();
        }
    }
}
