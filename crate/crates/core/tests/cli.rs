use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[learn]\nn_episodes = 3\nn_steps = 10\neval_realizations = 4\neval_steps = 2\nbatch_size = 8\nwarmup_steps = 8\nactor_layers = [16, 8]\ncritic_trunk = [16]\ncritic_head = [8]\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_risurllc"))
        .args(args)
        .env("RISURLLC_WORKERS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn invalid_config_exits_with_code_two_and_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let conf = write_config(root.path(), "[learn]\ngamma = 1.0\n");
    let out = root.path().join("out");
    let o = run(&["train", "--config", &conf, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!out.join("train.csv").exists());

    let o = run(&["baseline", "--scheme", "greedy", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["baseline", "--scheme", "td3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train", "--profile", "laptop", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let root = tempfile::tempdir().unwrap();
    let conf = write_config(root.path(), SMALL);
    let out = root.path().join("out");
    let missing = root.path().join("nope.bin");
    let o = run(&["evaluate", "--config", &conf, "--checkpoint", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_all_outputs() {
    let root = tempfile::tempdir().unwrap();
    let conf = write_config(root.path(), SMALL);
    let out = root.path().join("out");
    let o = run(&["train", "--seed", "3", "--config", &conf, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.csv", "eval.csv", "checkpoint.bin", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let train = lines(&out.join("train.csv"));
    assert!(train[0].starts_with("schema_version,config_hash,seed,episode,"));
    assert_eq!(train.len(), 1 + 3);
    let hash = train[1].split(',').nth(1).unwrap().to_string();
    assert_eq!(hash.len(), 16);
    assert!(train[1..].iter().all(|l| l.starts_with(&format!("1,{hash},3,"))));
    let eval = lines(&out.join("eval.csv"));
    assert_eq!(eval.len(), 1 + 4);
    assert!(std::fs::read_to_string(out.join("config.toml")).unwrap().contains(&hash));
    assert!(!std::fs::read_dir(&out).unwrap().flatten().any(|e| e.file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn baseline_summary_rows() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let o = run(&["baseline", "--scheme", "zf_random_phase", "--realizations", "6", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out.join("baseline_zf_random_phase.csv"));
    assert_eq!(rows.len(), 1 + 6 + 2);
    assert!(rows[0].contains("reported_bits"));
}

#[test]
fn sweep_over_ris_size_counts_rows() {
    let root = tempfile::tempdir().unwrap();
    let conf = write_config(root.path(), SMALL);
    let out = root.path().join("out");
    let o = run(&[
        "sweep", "--config", &conf, "--out", out.to_str().unwrap(), "--sweep-param", "N", "--values", "4,9", "--reps", "2",
        "--comparators", "zf_random_phase,mmse",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out.join("sweep_N.csv"));
    assert_eq!(rows.len(), 1 + 2 * 2 * 2);
    assert!(rows[1..].iter().all(|l| l.ends_with(",ok")), "{rows:?}");
    for c in ["zf_random_phase", "mmse"] {
        let plot = lines(&out.join(format!("plot_N_{c}.dat")));
        let data: Vec<_> = plot.iter().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 2);
        assert!(data[0].starts_with("4 "));
    }

    let o = run(&["sweep", "--out", out.to_str().unwrap(), "--sweep-param", "N", "--values", "2.5", "--comparators", "mmse"]);
    assert_eq!(o.status.code(), Some(2));
}
