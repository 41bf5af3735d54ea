//! End-to-end exercise of every subcommand against a micro dataset.

use std::fs;
use std::path::Path;
use std::process::Command;

fn denet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_denet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = denet(args);
    assert!(
        out.status.success(),
        "denet {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn micro_config(path: &Path) {
    fs::write(
        path,
        r#"{
  "network": {
    "input_size": [32, 32],
    "base_channels": 2,
    "edge_channels": 8,
    "sem_channels": 8,
    "bim": {"heads": 2, "head_dim": 2}
  },
  "optim": {"total_epochs": 2, "warmup_epochs": 1, "batch_size": 2},
  "loss": {},
  "seed": 7
}"#,
    )
    .unwrap();
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();

    let gen = ok(&[
        "gen-data", "--out", &p("data"), "--count", "6", "--size", "32", "--seed", "5",
    ]);
    assert!(gen.contains("wrote 6 samples"));
    assert!(dir.path().join("data/index.tsv").exists());

    micro_config(&dir.path().join("run.json"));
    let train_out = ok(&[
        "train", "--config", &p("run.json"), "--data", &p("data"), "--out", &p("out"),
    ]);
    assert!(train_out.contains("trained 2 epochs"), "{train_out}");
    let log = fs::read_to_string(dir.path().join("out/log.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,edge_loss,mask_loss,total_loss,val_miou"));

    let eval_out = ok(&[
        "eval", "--ckpt", &p("out/best.ckpt"), "--data", &p("data"),
        "--report", &p("report.txt"), "--threshold", "0.5",
    ]);
    for key in ["miou:", "niou:", "pd:", "fa_e6:", "roc_csv:"] {
        assert!(eval_out.contains(key), "missing {key} in:\n{eval_out}");
    }
    assert_eq!(eval_out, fs::read_to_string(dir.path().join("report.txt")).unwrap());

    ok(&[
        "infer", "--ckpt", &p("out/best.ckpt"), "--image", &p("data/img_00000.pgm"),
        "--out", &p("pred.pgm"),
    ]);
    let pred = fs::read(dir.path().join("pred.pgm")).unwrap();
    assert!(pred.starts_with(b"P5\n32 32\n255\n"));
    assert!(pred[13..].iter().all(|&b| b == 0 || b == 255), "binary mask");

    let roc = ok(&[
        "roc", "--ckpt", &p("out/best.ckpt"), "--data", &p("data"),
        "--points", "9", "--out", &p("roc.csv"),
    ]);
    assert!(roc.contains("10 sweep points"), "{roc}"); // 9 thresholds + sentinel
    let roc_csv = fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(roc_csv.starts_with("fpr,tpr\n"));
    assert_eq!(roc_csv.lines().count(), 11);

    let ablate_out = ok(&[
        "ablate", "--suite", "stages", "--config", &p("run.json"),
        "--data", &p("data"), "--out", &p("ab"),
    ]);
    assert!(ablate_out.contains("config,miou,niou,pd,fa_e6,dataset_hash"));
    assert_eq!(ablate_out.lines().count(), 5, "{ablate_out}");
    assert!(dir.path().join("ab/ablation.csv").exists());
}

#[test]
fn gradcheck_subcommand_reports_all_families() {
    let out = ok(&["gradcheck"]);
    let passes = out.lines().filter(|l| l.starts_with("PASS")).count();
    assert!(passes >= 12, "only {passes} families:\n{out}");
    assert!(!out.contains("FAIL"));
    assert!(out.contains("0 failed"));
}

#[test]
fn bad_inputs_surface_as_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();

    let out = denet(&["gen-data", "--out", &p("d"), "--count", "1", "--size", "30"]);
    assert!(!out.status.success());

    fs::write(dir.path().join("bad.json"), r#"{"unknown_key": 1}"#).unwrap();
    let out = denet(&["train", "--config", &p("bad.json"), "--data", &p("d"), "--out", &p("o")]);
    assert!(!out.status.success());

    fs::write(dir.path().join("fake.ckpt"), b"XXXX not a checkpoint").unwrap();
    let out = denet(&["eval", "--ckpt", &p("fake.ckpt"), "--data", &p("d"), "--report", &p("r")]);
    assert!(!out.status.success());
}
