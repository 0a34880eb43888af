use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctm_core::cli::read_samples_csv;
use ctm_core::model::Checkpoint;

fn ctm(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctm"))
        .args(args)
        .env("CTM_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"
seed = 4
output_dir = "tiny"

[model]
hidden_width = 8
depth = 2
n_frequencies = 4

[training]
total_iters = 20
batch_size = 16
disc_width = 8
disc_depth = 1
checkpoint_every = 10
"#;

#[test]
fn check_lemma1_reports_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let out = ctm(&["check", cfg.to_str().unwrap(), "--suite", "lemma1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    let slope = v["reports"][0]["metrics"]["slope"].as_f64().unwrap();
    assert!((0.8..=1.2).contains(&slope));
    assert!(v["reports"][0]["reference"].as_str().unwrap().contains("decomposition"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "run.toml", "");
    let out = ctm(&["check", good.to_str().unwrap(), "--suite", "everything"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.toml", "[training]\nlearning_rate = \"fast\"\n");
    let out = ctm(&["check", bad.to_str().unwrap(), "--suite", "all"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty(), "no partial report on config errors");
    let out = ctm(&["sample", good.to_str().unwrap(), "--oracle", "--gamma", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    let out = ctm(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn zero_iterations_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", &TINY.replace("total_iters = 20", "total_iters = 0"));
    let out = ctm(&["train", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("tiny")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["final.ckpt"]);
    let ck = Checkpoint::load(&dir.path().join("tiny/final.ckpt")).unwrap();
    assert_eq!(ck.header.iteration, 0);
}

#[test]
fn training_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let cfg = write_config(d.path(), "run.toml", TINY);
        let out = ctm(&["train", cfg.to_str().unwrap()], d.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["final.ckpt", "ckpt_00000010.ckpt", "training_curve.csv"] {
        let x = std::fs::read(a.path().join("tiny").join(f)).unwrap();
        let y = std::fs::read(b.path().join("tiny").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let curve = std::fs::read_to_string(a.path().join("tiny/training_curve.csv")).unwrap();
    assert!(curve.starts_with("# config_hash="));
    assert_eq!(curve.lines().nth(1), Some("iteration,ctm,dsm,gan_g,gan_d,total"));
    assert_eq!(curve.lines().count(), 22);
    let ck = Checkpoint::load(&a.path().join("tiny/final.ckpt")).unwrap();
    assert_eq!((ck.header.iteration, ck.header.seed), (20, 4));
    assert!(ck.block("disc").is_some());

    // A checkpoint from a different architecture is a schema error.
    let other = write_config(a.path(), "other.toml", &TINY.replace("hidden_width = 8", "hidden_width = 9"));
    let out = ctm(
        &["sample", other.to_str().unwrap(), "--checkpoint", a.path().join("tiny/final.ckpt").to_str().unwrap()],
        a.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));

    // Sampling from the checkpoint is deterministic too.
    let cfg = a.path().join("run.toml");
    let ck_path = a.path().join("tiny/final.ckpt");
    let mut csvs = Vec::new();
    for name in ["s1.csv", "s2.csv"] {
        let path = a.path().join(name);
        let out = ctm(
            &["sample", cfg.to_str().unwrap(), "--checkpoint", ck_path.to_str().unwrap(), "--gamma", "0.5", "--nfe", "3", "--n", "50", "--out", path.to_str().unwrap()],
            a.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(path).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn oracle_one_step_sampling_has_data_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "output_dir = \"gauss\"\n[mixture]\nweights = [1.0]\nmeans = [[0.5]]\nstds = [0.7]\n",
    );
    let out = ctm(&["sample", cfg.to_str().unwrap(), "--oracle", "--gamma", "0", "--nfe", "1", "--n", "100000"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("NFE per sample 1"));
    let text = std::fs::read_to_string(dir.path().join("gauss/samples.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
    let x = read_samples_csv(&text).unwrap();
    let v = x.var_axis(ndarray::Axis(0), 1.0)[0];
    assert!((v / 0.49 - 1.0).abs() < 0.05, "{v}");
}

#[test]
fn oracle_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "output_dir = \"ev\"\n[mixture]\nweights = [1.0]\nmeans = [[0.0]]\nstds = [1.0]\n[eval]\nreference_samples = 20000\nreport_nll = true\nnll_points = 5\naccumulation_nfes = [1, 2]\naccumulation_samples = 2000\naccumulation_replicates = 2\n",
    );
    let out = ctm(&["eval", cfg.to_str().unwrap(), "--oracle"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ev/eval_report.json")).unwrap()).unwrap();
    assert!(v["report"]["w1"].as_f64().unwrap() < 0.05);
    let nll = v["report"]["nll"].as_f64().unwrap();
    assert!(nll > 0.9 && nll < 3.0, "{nll}");
    let table = std::fs::read_to_string(dir.path().join("ev/accumulation.csv")).unwrap();
    assert_eq!(table.lines().nth(1), Some("gamma,nfe,w1,stderr"));
    assert_eq!(table.lines().count(), 2 + 3 * 2);
}
