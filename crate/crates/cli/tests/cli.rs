use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ists");

fn ists(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small config shared by the training tests so they stay fast.
const SMALL: &str = r#"
[encoder]
tau = 3
d_model = 6
time_embed_dim = 4
hidden_dim = 6
n_heads = 1

[train]
batch_size = 8

[task]
head_epochs = 20
"#;

fn small_setup(n: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    ok(ists(
        dir.path(),
        &["generate", "--config", &cfg, "--n", n, "--t", "12", "--c", "2", "--missing", "0.5", "--seed", "3"],
    ));
    (dir, cfg)
}

fn instance_densities(csv: &str, t: usize, c: usize) -> Vec<f64> {
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for line in csv.lines().skip(1) {
        let id = line.split(',').next().unwrap().to_string();
        *counts.entry(id).or_default() += 1;
    }
    counts.values().map(|&k| k as f64 / (t * c) as f64).collect()
}

#[test]
fn generate_counts_density_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["generate", "--n", "100", "--t", "48", "--c", "4", "--missing", "0.8", "--seed", "7"];
    ok(ists(a.path(), &args));
    ok(ists(b.path(), &args));
    let csv_a = fs::read(a.path().join("data.csv")).unwrap();
    let csv_b = fs::read(b.path().join("data.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let text = String::from_utf8(csv_a).unwrap();
    let dens = instance_densities(&text, 48, 4);
    assert_eq!(dens.len(), 100);
    let mean = dens.iter().sum::<f64>() / dens.len() as f64;
    assert!((mean - 0.2).abs() <= 0.02, "mean density {mean}");

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("data.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 7);
    assert_eq!(sidecar["generator"]["n_instances"], 100);
    assert_eq!(sidecar["config"]["seed"], 7);
}

#[test]
fn baseline_pretrain_has_zero_pseudo_columns() {
    let (dir, cfg) = small_setup("24");
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--variant", "baseline", "--epochs", "1", "--seed", "3"]));
    let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,l_w,l_contrast,l_orig_rec,l_pseudo_rec,total");
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    assert!(rows > 0);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["train"]["variant"], "baseline");
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let (dir, cfg) = small_setup("16");
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--epochs", "0", "--seed", "3"]));
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["steps"], 0);
    let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

fn checksum(dir: &Path) -> String {
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    run["params_sha256"].as_str().unwrap().to_string()
}

#[test]
fn full_and_no_w_diverge() {
    let (dir, cfg) = small_setup("24");
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--variant", "full", "--epochs", "2", "--seed", "3"]));
    let full = checksum(dir.path());
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--variant", "no_w", "--epochs", "2", "--seed", "3"]));
    let no_w = checksum(dir.path());
    assert_ne!(full, no_w);
}

#[test]
fn evaluate_is_deterministic_and_reports_each_seed() {
    let (dir, cfg) = small_setup("24");
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--epochs", "1", "--seed", "3"]));
    let args = ["evaluate", "--config", &cfg, "--task", "interpolation", "--mask-frac", "0.3", "--seeds", "5", "--seed", "3"];
    let out = ok(ists(dir.path(), &args));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("interpolation "));
    let first = fs::read(dir.path().join("metrics.json")).unwrap();
    ok(ists(dir.path(), &args));
    let second = fs::read(dir.path().join("metrics.json")).unwrap();
    assert_eq!(first, second);
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["metrics"]["mse"]["per_seed"].as_array().unwrap().len(), 5);
    assert_eq!(report["config_echo"]["config"]["task"]["mask_fraction"], 0.3);
}

#[test]
fn resume_matches_uninterrupted() {
    let (dir, cfg) = small_setup("24");
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--epochs", "2", "--seed", "3"]));
    let whole = checksum(dir.path());
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--epochs", "1", "--seed", "3"]));
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--epochs", "2", "--resume", "--seed", "3"]));
    assert_eq!(checksum(dir.path()), whole);
}

#[test]
fn classification_without_labels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut csv = String::from("instance_id,timestamp,variable,value\n");
    for i in 0..12 {
        for k in 0..5 {
            csv.push_str(&format!("{i},{},{},{}\n", k as f64 * 0.2, k % 2, (i + k) as f64 * 0.1));
        }
    }
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    ok(ists(dir.path(), &["pretrain", "--config", cfg, "--epochs", "1"]));
    let out = ists(dir.path(), &["evaluate", "--config", cfg, "--task", "classification"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels required"));
}

#[test]
fn variable_count_mismatch_is_reported() {
    let (dir, cfg) = small_setup("16");
    ok(ists(dir.path(), &["pretrain", "--config", &cfg, "--epochs", "0", "--seed", "3"]));
    ok(ists(dir.path(), &["generate", "--n", "16", "--t", "12", "--c", "3", "--seed", "3"]));
    let out = ists(dir.path(), &["evaluate", "--config", &cfg, "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expects 2 variables but the data has 3"));
}

#[test]
fn ablate_rows() {
    let (dir, cfg) = small_setup("16");
    let out = ok(ists(
        dir.path(),
        &["ablate", "--config", &cfg, "--variants", "baseline,full", "--epochs", "1", "--seeds", "2", "--seed", "3"],
    ));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(text.lines().count(), 3);
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["baseline", "full"]);
}

#[test]
fn full_grid_has_ten_rows() {
    let (dir, cfg) = small_setup("16");
    ok(ists(dir.path(), &["ablate", "--config", &cfg, "--max-steps", "1", "--seed", "3"]));
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.contains("\nmave(5),"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ists(dir.path(), &["pretrain", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "nonsense = 3\n").unwrap();
    let out = ists(dir.path(), &["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let out = ists(dir.path(), &["pretrain", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(3));

    let out = ists(dir.path(), &["generate", "--missing", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn non_finite_loss_exits_with_2() {
    let (dir, cfg) = small_setup("16");
    let out = ists(
        dir.path(),
        &["pretrain", "--config", &cfg, "--epochs", "3", "--learning-rate", "1e300", "--seed", "3"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn flags_override_file() {
    let (dir, _) = small_setup("16");
    let file = dir.path().join("over.toml");
    fs::write(&file, format!("{SMALL}\n[synth]\nn_instances = 5\n").replace("[train]\n", "[train]\nepochs = 4\n")).unwrap();
    let file = file.to_str().unwrap();
    ok(ists(dir.path(), &["pretrain", "--config", file, "--epochs", "0", "--seed", "3"]));
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["train"]["epochs"], 0);
    assert_eq!(run["config"]["synth"]["n_instances"], 5);
    assert_eq!(run["config"]["encoder"]["tau"], 3);
}
