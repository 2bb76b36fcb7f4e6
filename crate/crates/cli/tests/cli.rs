//! End-to-end tests of the `evib` binary: every subcommand, the config-file
//! merge, determinism guarantees, and exit codes. Training configs here are
//! deliberately tiny; statistical quality is covered by the library's
//! acceptance suite.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn evib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evib"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Generates a small three-class dataset and returns its directory.
fn small_dataset(noise: Option<&str>, ood_shift: Option<&str>) -> TempDir {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap().to_owned();
    let mut args = vec![
        "gen-data",
        "--classes",
        "3",
        "--dim",
        "2",
        "--samples-per-class",
        "40",
        "--scale",
        "1.0",
        "--sep",
        "6.0",
        "--seed",
        "11",
        "--out",
        &out,
    ];
    if let Some(n) = noise {
        args.extend(["--noise", n]);
    }
    if let Some(s) = ood_shift {
        args.extend(["--ood-shift", s]);
    }
    assert_success(&evib(&args));
    dir
}

/// Trains a tiny model in the given mode; returns the run directory.
fn small_train(data_dir: &Path, mode: &str, extra: &[&str]) -> TempDir {
    let dir = TempDir::new().unwrap();
    let train = data_dir.join("train.jsonl");
    let mut args = vec![
        "train",
        "--data",
        train.to_str().unwrap(),
        "--mode",
        mode,
        "--epochs",
        "30",
        "--hidden",
        "8",
        "--k",
        "3",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    assert_success(&evib(&args));
    dir
}

#[test]
fn gen_data_is_deterministic() {
    let a = small_dataset(None, None);
    let b = small_dataset(None, None);
    for name in ["train.jsonl", "test.jsonl"] {
        assert_eq!(
            read(&a.path().join(name)),
            read(&b.path().join(name)),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn gen_data_records_noise_and_ood() {
    let dir = small_dataset(Some("0.3"), Some("10"));

    let train = read(&dir.path().join("train.jsonl"));
    let header: Value = serde_json::from_str(train.lines().next().unwrap()).unwrap();
    // 3 classes x 40 samples, round(0.3 * 120) = 36 flipped labels.
    assert_eq!(header["n"], 120);
    assert_eq!(header["noise_fraction"], 0.3);
    let noisy = train.lines().skip(1).filter(|l| l.contains("\"noisy\":true")).count();
    assert_eq!(noisy, 36);

    let ood = read(&dir.path().join("ood.jsonl"));
    assert!(ood.lines().skip(1).all(|l| l.contains("\"split\":\"ood\"")));
}

#[test]
fn gen_data_rejects_unknown_config_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"classes": 3, "clases": 4}"#).unwrap();
    let out = evib(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clases"));
}

#[test]
fn config_file_merges_under_flags() {
    let data = small_dataset(None, None);
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"data": "{}", "mode": "map", "epochs": 30, "hidden": 8, "seed": 5, "out": "{}"}}"#,
            data.path().join("train.jsonl").display(),
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    // The flag overrides the file's epochs = 30.
    assert_success(&evib(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "7"]));
    let resolved: Value =
        serde_json::from_str(&read(&dir.path().join("run/train_config.json"))).unwrap();
    assert_eq!(resolved["epochs"], 7);
    assert_eq!(resolved["mode"], "map");
    let log = read(&dir.path().join("run/train_log.jsonl"));
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn train_is_deterministic_and_modes_are_distinct() {
    let data = small_dataset(None, None);
    let a = small_train(data.path(), "map", &[]);
    let b = small_train(data.path(), "map", &[]);
    assert_eq!(
        read(&a.path().join("train_log.jsonl")),
        read(&b.path().join("train_log.jsonl"))
    );
    assert_eq!(
        read(&a.path().join("checkpoint.json")),
        read(&b.path().join("checkpoint.json"))
    );

    let ib = small_train(data.path(), "ib_edl", &["--beta", "0.001"]);
    assert_ne!(
        read(&a.path().join("checkpoint.json")),
        read(&ib.path().join("checkpoint.json")),
        "map and ib_edl runs saved identical checkpoints"
    );
}

#[test]
fn frozen_sigma_ib_run_matches_edl() {
    // With beta 0 and the noise head frozen at 1e-8, the sampled objective
    // collapses onto the deterministic evidential one.
    let data = small_dataset(None, None);
    let ib = small_train(
        data.path(),
        "ib_edl",
        &["--beta", "0", "--sigma-freeze", "1e-8"],
    );
    let edl = small_train(data.path(), "edl", &["--lambda", "0"]);

    let last = |dir: &TempDir| -> f64 {
        let log = read(&dir.path().join("train_log.jsonl"));
        let record: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
        record["loss_total"].as_f64().unwrap()
    };
    let (a, b) = (last(&ib), last(&edl));
    assert!((a - b).abs() < 1e-4, "final losses {a} vs {b} diverge");
}

#[test]
fn eval_writes_report_and_zeta_zero_is_identity() {
    let data = small_dataset(None, None);
    let run = small_train(data.path(), "ib_edl", &["--beta", "0.001"]);
    let ckpt = run.path().join("checkpoint.json");
    let test = data.path().join("test.jsonl");

    let eval_dir = |extra: &[&str]| -> TempDir {
        let dir = TempDir::new().unwrap();
        let mut args = vec![
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            test.to_str().unwrap(),
            "--mode",
            "ib_edl",
            "--k",
            "3",
            "--seed",
            "9",
            "--out",
            dir.path().to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        assert_success(&evib(&args));
        dir
    };

    let plain = eval_dir(&[]);
    let zeta0 = eval_dir(&["--zeta", "0"]);
    assert_eq!(
        read(&plain.path().join("eval_report.json")),
        read(&zeta0.path().join("eval_report.json")),
        "--zeta 0 must equal omitting the flag"
    );

    let report: Value = serde_json::from_str(&read(&plain.path().join("eval_report.json"))).unwrap();
    assert_eq!(report["bin_count"], 15);
    let csv = read(&plain.path().join("reliability.csv"));
    assert!(csv.starts_with("bin_lower,bin_upper,count,mean_confidence,mean_accuracy\n"));

    for bins in ["10", "35"] {
        let run = eval_dir(&["--bins", bins]);
        let report: Value =
            serde_json::from_str(&read(&run.path().join("eval_report.json"))).unwrap();
        assert_eq!(report["bin_count"].to_string(), bins);
    }
}

#[test]
fn eval_rejects_class_count_mismatch() {
    let data3 = small_dataset(None, None);
    let run = small_train(data3.path(), "map", &[]);

    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap().to_owned();
    assert_success(&evib(&[
        "gen-data",
        "--classes",
        "4",
        "--samples-per-class",
        "10",
        "--seed",
        "3",
        "--out",
        &out,
    ]));

    let result = evib(&[
        "eval",
        "--checkpoint",
        run.path().join("checkpoint.json").to_str().unwrap(),
        "--data",
        dir.path().join("test.jsonl").to_str().unwrap(),
        "--mode",
        "map",
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("classes"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = evib(&[
        "train",
        "--data",
        dir.path().join("absent.jsonl").to_str().unwrap(),
        "--mode",
        "map",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_mode_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = evib(&[
        "train",
        "--data",
        "x.jsonl",
        "--mode",
        "bayes",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bayes"));
}

#[test]
fn ood_eval_reports_um_null_for_map_and_half_for_controls() {
    let data = small_dataset(None, Some("100"));
    let test = data.path().join("test.jsonl");
    let ood = data.path().join("ood.jsonl");

    // Deterministic evidential checkpoint: identical ID and OOD files tie
    // every score, pinning both AUROCs at exactly 1/2.
    let edl = small_train(data.path(), "edl", &["--lambda", "0.2"]);
    let dir = TempDir::new().unwrap();
    assert_success(&evib(&[
        "ood-eval",
        "--checkpoint",
        edl.path().join("checkpoint.json").to_str().unwrap(),
        "--id-data",
        test.to_str().unwrap(),
        "--ood-data",
        test.to_str().unwrap(),
        "--mode",
        "edl",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let report: Value = serde_json::from_str(&read(&dir.path().join("ood_report.json"))).unwrap();
    assert!((report["auroc_mp"].as_f64().unwrap() - 0.5).abs() < 0.02);
    assert!((report["auroc_um"].as_f64().unwrap() - 0.5).abs() < 0.02);
    assert_eq!(report["n_id"], 120);
    assert_eq!(report["n_ood"], 120);

    // A 100-sigma scalar shift is well-separated OOD, detectable through
    // the evidence.
    let dir = TempDir::new().unwrap();
    assert_success(&evib(&[
        "ood-eval",
        "--checkpoint",
        edl.path().join("checkpoint.json").to_str().unwrap(),
        "--id-data",
        test.to_str().unwrap(),
        "--ood-data",
        ood.to_str().unwrap(),
        "--mode",
        "edl",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let report: Value = serde_json::from_str(&read(&dir.path().join("ood_report.json"))).unwrap();
    assert!(report["auroc_um"].as_f64().unwrap() >= 0.9);

    // Map checkpoints have no uncertainty mass: auroc_um is null.
    let map = small_train(data.path(), "map", &[]);
    let dir = TempDir::new().unwrap();
    assert_success(&evib(&[
        "ood-eval",
        "--checkpoint",
        map.path().join("checkpoint.json").to_str().unwrap(),
        "--id-data",
        test.to_str().unwrap(),
        "--ood-data",
        ood.to_str().unwrap(),
        "--mode",
        "map",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let report: Value = serde_json::from_str(&read(&dir.path().join("ood_report.json"))).unwrap();
    assert!(report["auroc_um"].is_null());
    assert!(report["auroc_mp"].is_number());
}

#[test]
fn sweep_grid_shape_and_determinism() {
    let data = small_dataset(None, None);
    let train = data.path().join("train.jsonl");
    let test = data.path().join("test.jsonl");

    let sweep = |dir: &TempDir| {
        let out = Command::new(env!("CARGO_BIN_EXE_evib"))
            .env("EVIB_THREADS", "2")
            .args([
                "sweep",
                "--data",
                train.to_str().unwrap(),
                "--eval-data",
                test.to_str().unwrap(),
                "--betas",
                "1e-3,1e-2,1e-1",
                "--seed",
                "100",
                "--seed-count",
                "2",
                "--include-map",
                "--epochs",
                "10",
                "--hidden",
                "8",
                "--k",
                "2",
                "--out",
                dir.path().to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_success(&out);
    };

    let a = TempDir::new().unwrap();
    sweep(&a);
    let csv = read(&a.path().join("sweep.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,seed,accuracy,ece,nll");
    // 3 betas x 2 seeds + 2 map rows.
    assert_eq!(lines.len(), 1 + 6 + 2);
    assert!(lines[1].starts_with("0.001,100,"));
    assert!(lines[2].starts_with("0.001,101,"));
    assert!(lines[7].starts_with(",100,"), "map row lacks empty beta: {}", lines[7]);
    assert!(lines[8].starts_with(",101,"));

    let b = TempDir::new().unwrap();
    sweep(&b);
    assert_eq!(csv, read(&b.path().join("sweep.csv")), "sweep rerun differs");
}

#[test]
fn sweep_rejects_empty_beta_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"data": "t.jsonl", "eval_data": "e.jsonl", "betas": [], "out": "{}"}}"#,
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = evib(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta grid"));
}
