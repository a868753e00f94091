use std::path::PathBuf;
use std::process::{Command, Output};

fn canary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canary"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("canary-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = "allreduce_bytes = 32KiB\ncongestion_fraction = 0.25\nrepetitions = 2\nseed = 4\n";

#[test]
fn run_is_byte_identical_across_processes() {
    let cfg = scratch("small.conf", SMALL);
    let cfg = cfg.to_str().unwrap();
    let a = canary(&["run", "--config", cfg]);
    let b = canary(&["run", "--config", cfg]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.starts_with("row,repetition,algorithm,"));
    assert_eq!(text.lines().count(), 1 + 2 + 2);
    let c = canary(&["run", "--config", cfg, "--set", "seed=5"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn run_writes_to_output_file() {
    let cfg = scratch("out.conf", SMALL);
    let out = cfg.with_file_name("metrics.csv");
    let r = canary(&["run", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(r.stdout.is_empty());
    let stdout = canary(&["run", "--config", cfg.to_str().unwrap()]).stdout;
    assert_eq!(std::fs::read(&out).unwrap(), stdout);
}

#[test]
fn sweep_emits_one_block_per_value() {
    let cfg = scratch("sweep.conf", SMALL);
    let r = canary(&[
        "sweep",
        "--axis",
        "size",
        "--values",
        "16KiB,48KiB",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("axis,value,row,"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 2 * (2 + 2));
    assert_eq!(body.iter().filter(|l| l.starts_with("size,16KiB,")).count(), 4);
    assert_eq!(body.iter().filter(|l| l.starts_with("size,48KiB,")).count(), 4);
}

#[test]
fn validate_normalizes_and_rejects() {
    for name in ["congestion.conf", "no_congestion.conf", "oracle.conf"] {
        let path = configs().join(name);
        let r = canary(&["validate", "--config", path.to_str().unwrap()]);
        assert!(r.status.success(), "{name}: {}", String::from_utf8_lossy(&r.stderr));
        let text = String::from_utf8(r.stdout).unwrap();
        assert!(text.contains("seed = "));
        // the normalized form is itself a valid config
        let again = scratch(&format!("norm-{name}"), &text);
        let r2 = canary(&["validate", "--config", again.to_str().unwrap()]);
        assert_eq!(String::from_utf8(r2.stdout).unwrap(), text);
    }
    let bad = scratch("bad.conf", "allreduce_fraction = 0.9\ncongestion_fraction = 0.9\n");
    let r = canary(&["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("exceeds 1"));
    let typo = scratch("typo.conf", "sed = 1\n");
    assert_eq!(canary(&["validate", "--config", typo.to_str().unwrap()]).status.code(), Some(1));
    let missing = canary(&["validate", "--config", "/nonexistent/file.conf"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_set = canary(&["validate", "--config", typo.to_str().unwrap(), "--set", "seed"]);
    assert_eq!(bad_set.status.code(), Some(1));
}

#[test]
fn oracle_passes_under_collisions_and_loss() {
    let path = configs().join("oracle.conf");
    let r = canary(&["oracle", "--config", path.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|l| l.ends_with(",true")), "{text}");
}

#[test]
fn calibrate_reports_small_error() {
    let cfg = scratch("cal.conf", "allreduce_bytes = 1MiB\n");
    let r = canary(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert!(r.status.success());
    let text = String::from_utf8(r.stdout).unwrap();
    let err: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(err < 0.10, "{text}");
}
