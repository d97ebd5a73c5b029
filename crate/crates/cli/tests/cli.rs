//! End-to-end checks of the `spikepool` binary: artifact layout, config
//! echo, determinism, probe/gradcheck output, the comparison flow, and the
//! machine-readable error contract on stderr.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spikepool() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spikepool"));
    // Never let an ambient data dir leak into the tests.
    cmd.env_remove("SPIKEPOOL_DATA_DIR");
    cmd
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_error(out: &Output) -> (String, String) {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|e| {
        panic!(
            "stderr is not JSON ({e}):\n{}",
            String::from_utf8_lossy(&out.stderr)
        )
    });
    (
        v["error"]["kind"].as_str().expect("kind").to_string(),
        v["error"]["message"].as_str().expect("message").to_string(),
    )
}

fn train_synth(out_dir: &Path, arch: &str, seed: u64) -> Output {
    spikepool()
        .args([
            "train",
            "--arch",
            arch,
            "--dataset",
            "synth",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--lr",
            "0.02",
            "--subset",
            "8",
            "--test-subset",
            "4",
            "--seed",
            &seed.to_string(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .expect("spawn")
}

#[test]
fn train_writes_artifacts_and_echoes_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = train_synth(&run, "cml", 3);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = stdout_json(&out);
    assert_eq!(summary["epochs"].as_u64(), Some(2));

    let config: Value =
        serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["arch"].as_str(), Some("cml"));
    assert_eq!(config["seed"].as_u64(), Some(3));
    assert_eq!(config["precision"].as_str(), Some("f32"));

    let jsonl = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    for line in jsonl.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec["train_loss"].as_f64().unwrap().is_finite());
    }

    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,train_accuracy,"));
    assert_eq!(csv.lines().count(), 3);

    let final_json: Value =
        serde_json::from_str(&fs::read_to_string(run.join("final.json")).unwrap()).unwrap();
    assert_eq!(final_json["config"]["arch"].as_str(), Some("cml"));
    assert_eq!(final_json["records"].as_array().unwrap().len(), 2);
}

#[test]
fn fixed_seed_reproduces_the_metrics_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_synth(&a, "baseline", 11).status.success());
    assert!(train_synth(&b, "baseline", 11).status.success());

    let strip_walltime = |path: &Path| -> Vec<Value> {
        fs::read_to_string(path.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_s");
                v
            })
            .collect()
    };
    assert_eq!(strip_walltime(&a), strip_walltime(&b));
}

#[test]
fn routing_probe_emits_summaries_and_a_window_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("windows.jsonl");
    let out = spikepool()
        .args(["probe", "--mode", "routing", "--windows", "64", "--seed", "5"])
        .arg("--out")
        .arg(&dump)
        .output()
        .expect("spawn");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let v = stdout_json(&out);
    assert_eq!(v["ensembles"].as_array().unwrap().len(), 4);
    assert_eq!(v["counterexample"]["cml"]["grad_nonzero"][0][1].as_u64(), Some(1));
    assert_eq!(v["counterexample"]["baseline"]["grad_nonzero"][0][1].as_u64(), Some(0));

    for line in fs::read_to_string(&dump).unwrap().lines() {
        let _: Value = serde_json::from_str(line).expect("every dump line is JSON");
    }
}

#[test]
fn gradcheck_passes_and_reports_its_error_bound() {
    let out = spikepool()
        .args(["gradcheck", "--soft", "--seeds", "2"])
        .output()
        .expect("spawn");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["passed"].as_bool(), Some(true));
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-6);
}

#[test]
fn compare_pairs_runs_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("cml"), dir.path().join("baseline"));
    assert!(train_synth(&a, "cml", 4).status.success());
    assert!(train_synth(&b, "baseline", 4).status.success());

    let cmp_dir = dir.path().join("cmp");
    let out = spikepool()
        .arg("compare")
        .arg(&a)
        .arg(&b)
        .arg("--out")
        .arg(&cmp_dir)
        .output()
        .expect("spawn");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let v = stdout_json(&out);
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(v["by_arch"].as_array().unwrap().len() == 2);
    let paired = &v["paired_cml_minus_baseline"];
    assert_eq!(paired["per_seed"].as_array().unwrap().len(), 1);
    assert!(cmp_dir.join("comparison.json").is_file());
    assert!(cmp_dir.join("comparison.csv").is_file());
}

#[test]
fn compare_refuses_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("solo");
    assert!(train_synth(&run, "cml", 0).status.success());

    let out = spikepool().arg("compare").arg(&run).output().expect("spawn");
    assert!(!out.status.success());
    let (kind, message) = stderr_error(&out);
    assert_eq!(kind, "runtime");
    assert!(message.contains("at least two"), "{message}");
}

#[test]
fn corrupt_cifar_batch_is_a_format_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; 100]).unwrap();

    let out = spikepool()
        .args(["train", "--dataset", "cifar10", "--arch", "cml", "--epochs", "1"])
        .arg("--data-dir")
        .arg(dir.path())
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .expect("spawn");
    assert!(!out.status.success());
    let (kind, message) = stderr_error(&out);
    assert_eq!(kind, "format", "{message}");
    assert!(message.contains("data_batch_1.bin"), "{message}");
}

#[test]
fn missing_cifar_dir_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikepool()
        .args(["train", "--dataset", "cifar10", "--arch", "cml"])
        .arg("--data-dir")
        .arg(dir.path().join("nowhere"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .expect("spawn");
    assert!(!out.status.success());
    let (kind, message) = stderr_error(&out);
    assert_eq!(kind, "io");
    assert!(message.contains("data_batch_1.bin"), "{message}");
}

#[test]
fn cifar_without_a_data_dir_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spikepool()
        .args(["train", "--dataset", "cifar10", "--arch", "cml"])
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .expect("spawn");
    assert!(!out.status.success());
    let (kind, message) = stderr_error(&out);
    assert_eq!(kind, "runtime");
    assert!(message.contains("SPIKEPOOL_DATA_DIR"), "{message}");
}

#[test]
fn bad_flags_are_usage_errors() {
    for args in [
        &["train", "--arch", "transformer", "--out", "/tmp/x"][..],
        &["probe", "--mode", "telepathy"][..],
        &["train"][..],
    ] {
        let out = spikepool().args(args).output().expect("spawn");
        assert!(!out.status.success(), "{args:?}");
        let (kind, _) = stderr_error(&out);
        assert_eq!(kind, "usage", "{args:?}");
    }
}

#[test]
fn help_exits_zero() {
    let out = spikepool().arg("--help").output().expect("spawn");
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("spikepool"));
}
