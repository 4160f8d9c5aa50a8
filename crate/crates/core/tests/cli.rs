//! End-to-end runs of the `kgan` binary on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgan"))
        .args(args)
        .env_remove("KGAN_SEED_OVERRIDE")
        .output()
        .expect("spawn kgan")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
  "data": {"size": 8, "n_pairs": 12, "master_seed": 4},
  "teacher": {"training": {"epochs": 2, "batch_size": 4, "seed": 3}},
  "student": {"training": {"epochs": 2, "batch_size": 4, "seed": 5}}
}"#;

fn setup(dir: &Path, text: &str) -> PathBuf {
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, text).unwrap();
    cfg
}

fn run_ok(args: &[&str]) -> String {
    let o = kgan(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn gen_data_writes_every_pair_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["gen-data", "--config", cfg]);
    let data = tmp.path().join("data");
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 12);
    assert_eq!(fs::read_dir(data.join("a")).unwrap().count(), 12);
    assert_eq!(fs::read_dir(data.join("b")).unwrap().count(), 12);
    assert!(data.join("config.json").exists());

    let again = kgan(&["gen-data", "--config", cfg]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    run_ok(&["gen-data", "--config", cfg, "--force"]);
    assert_eq!(fs::read_to_string(data.join("manifest.csv")).unwrap(), manifest);
}

#[test]
fn student_without_teacher_names_the_missing_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["gen-data", "--config", cfg]);
    let o = kgan(&["train-student", "--config", cfg]);
    assert_ne!(code(&o), 0);
    let expected = tmp.path().join("teacher").join("model.json");
    assert!(stderr(&o).contains(expected.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn training_before_data_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), TINY);
    let o = kgan(&["train-teacher", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("manifest.csv"));
}

#[test]
fn pipeline_reruns_byte_identically_from_config_copies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    run_ok(&["gen-data", "--config", cfg]);
    run_ok(&["train-teacher", "--config", cfg, "--plot"]);
    run_ok(&["train-student", "--config", cfg]);
    let summary = run_ok(&["evaluate", "--config", cfg]);
    assert!(summary.starts_with("SF=") && summary.contains(" SSIM=") && summary.contains(" SCD="));

    let teacher = tmp.path().join("teacher");
    let student = tmp.path().join("student");
    let eval = tmp.path().join("eval");
    assert!(teacher.join("loss_curve.pgm").exists());
    let history = fs::read(teacher.join("history.csv")).unwrap();
    assert!(String::from_utf8_lossy(&history).starts_with("epoch,L_G,L_D,mean_D_real,mean_D_fake\n"));
    let student_history = fs::read(student.join("history.csv")).unwrap();
    let metrics = fs::read(eval.join("metrics.csv")).unwrap();
    assert!(String::from_utf8_lossy(&metrics).starts_with("id,sf,ssim,scd\n"));

    // Copy each emitted config elsewhere first: rerunning overwrites it.
    for (dir, cmd) in [(&teacher, "train-teacher"), (&student, "train-student"), (&eval, "evaluate")] {
        let copy = tmp.path().join(format!("{cmd}.json"));
        fs::copy(dir.join("config.json"), &copy).unwrap();
        run_ok(&[cmd, "--config", copy.to_str().unwrap(), "--force"]);
    }
    assert_eq!(fs::read(teacher.join("history.csv")).unwrap(), history);
    assert_eq!(fs::read(student.join("history.csv")).unwrap(), student_history);
    assert_eq!(fs::read(eval.join("metrics.csv")).unwrap(), metrics);
}

#[test]
fn seed_override_applies_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_kgan"))
        .args(["gen-data", "--config", cfg.to_str().unwrap()])
        .env("KGAN_SEED_OVERRIDE", "77")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let copy = fs::read_to_string(tmp.path().join("data").join("config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&copy).unwrap();
    assert_eq!(v["data"]["master_seed"], 77);
    assert_eq!(v["teacher"]["training"]["seed"], 77);

    let bad = Command::new(env!("CARGO_BIN_EXE_kgan"))
        .args(["gen-data", "--config", cfg.to_str().unwrap(), "--force"])
        .env("KGAN_SEED_OVERRIDE", "seven")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&kgan(&["no-such-command"])), 1);
    assert_eq!(code(&kgan(&["gen-data"])), 1);
    assert_eq!(code(&kgan(&["--help"])), 0);

    let unknown = setup(tmp.path(), r#"{"data": {"sise": 8}}"#);
    assert_eq!(code(&kgan(&["gen-data", "--config", unknown.to_str().unwrap()])), 1);
    let bad_size = setup(tmp.path(), r#"{"data": {"size": 12}}"#);
    assert_eq!(code(&kgan(&["gen-data", "--config", bad_size.to_str().unwrap()])), 1);
    let missing = tmp.path().join("absent.json");
    assert_eq!(code(&kgan(&["gen-data", "--config", missing.to_str().unwrap()])), 1);
}

#[test]
fn gradcheck_passes_and_a_broken_conv_gradient_is_caught() {
    let ok = kgan(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let table = String::from_utf8(ok.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).filter(|l| !l.contains(" checks, ")).collect();
    assert_eq!(rows.len(), 41);
    assert!(rows.iter().all(|l| l.ends_with("PASS")));
    assert!(table.contains("41 checks, 0 failed"));

    let broken = kgan(&["gradcheck", "--inject-conv-fault", "1.01"]);
    assert_eq!(code(&broken), 2);
    let err = stderr(&broken);
    assert!(err.contains("conv2d (weight)"), "{err}");
    assert!(!err.contains("sigmoid"));
}
