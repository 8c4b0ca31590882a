use std::path::{Path, PathBuf};

use smd_cli::dispatch;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SMALL: &str = r#"
[problem]
kind = "quadratic"
a = [[1.0, 0.0], [0.0, 1.0]]
b = [0.3, -0.2]
set = { kind = "box", lo = [-1.0, -1.0], hi = [1.0, 1.0] }

[geometry]
map = "euclidean"
norms = "l2"

[oracle]
bias = { kind = "adversarial", b0 = 0.1, q = 1.0 }
noise = { kind = "gaussian_iso", sigma = 0.5 }
nu = 2.0
nu1 = 0.5

[schedule]
alpha0 = 0.5
k = 0.75

[run]
horizon = HORIZON
n_trials = 20
seed = 9
audit = true

[bounds]
eps = [0.05, 0.2]
moment_samples = 20000
tail_samples = 20000
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn smd(args: &[&str]) -> i32 {
    let mut argv = vec!["smd"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_with_unit_horizon_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("HORIZON", "1"));
    let out = dir.path().join("out");
    assert_eq!(smd(&["run", s(&cfg), "--out", s(&out), "--check"]), 0);
    let csv = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 2, "header plus one row:\n{csv}");
    assert!(data[1].starts_with("1,"));
}

#[test]
fn montecarlo_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("HORIZON", "500"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(smd(&["montecarlo", s(&cfg), "--out", s(&a)]), 0);
    assert_eq!(smd(&["montecarlo", s(&cfg), "--out", s(&b)]), 0);
    for f in ["trials.jsonl", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let jsonl = std::fs::read_to_string(a.join("trials.jsonl")).unwrap();
    // header plus one record per trial per checkpoint (1, 2, 4, ..., 256, 500)
    assert_eq!(jsonl.lines().count(), 1 + 20 * 10);
    let c = dir.path().join("c");
    assert_eq!(smd(&["montecarlo", s(&cfg), "--out", s(&c), "--seed", "10"]), 0);
    assert_ne!(std::fs::read(a.join("trials.jsonl")).unwrap(), std::fs::read(c.join("trials.jsonl")).unwrap());
}

#[test]
fn every_artifact_carries_digest_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("HORIZON", "64"));
    let out = dir.path().join("out");
    for cmd in ["run", "montecarlo", "bounds", "validate"] {
        assert_eq!(smd(&[cmd, s(&cfg), "--out", s(&out)]), 0, "{cmd}");
    }
    let digest = smd_cli::config::ExperimentConfig::load(&cfg).unwrap().digest();
    for f in ["trace.csv", "run.json", "trials.jsonl", "summary.json", "bounds.json", "validate.json"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains(&digest), "{f} lacks the digest");
        assert!(text.contains(smd_cli::output::VERSION), "{f} lacks the version");
    }
}

#[test]
fn bounds_on_zeta3_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = configs_dir().join("zeta3_bounds.toml");
    assert_eq!(smd(&["bounds", s(&cfg), "--out", s(&out)]), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("bounds.json")).unwrap()).unwrap();
    let k = v["K"].as_f64().unwrap();
    assert!((k - 0.09029).abs() < 1e-4, "K = {k}");
    assert!(v["err"].as_f64().unwrap() < 1e-6);
    assert!(v["bound_curve"].as_array().unwrap().len() > 3);
    assert!(v.get("t_star").is_some());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &SMALL.replace("HORIZON", "10").replace("seed = 9", "seed = 9\nsed = 1"));
    assert_eq!(smd(&["run", s(&bad), "--out", s(dir.path())]), 1);
    let missing = dir.path().join("missing.toml");
    assert_eq!(smd(&["run", s(&missing)]), 1);
    assert_eq!(smd(&["frobnicate"]), 1);
    let mixed = write_config(dir.path(), "mixed.toml", &SMALL.replace("HORIZON", "10").replace("\"l2\"", "\"l1_linf\""));
    assert_eq!(smd(&["run", s(&mixed), "--out", s(dir.path())]), 1);
}

#[test]
fn overflow_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("HORIZON", "50")
        .replace("sigma = 0.5", "sigma = 1e308")
        .replace("set = { kind = \"box\", lo = [-1.0, -1.0], hi = [1.0, 1.0] }", "set = { kind = \"l2_ball\", center = [0.0, 0.0], radius = 1.0 }");
    let cfg = write_config(dir.path(), "c.toml", &text);
    assert_eq!(smd(&["run", s(&cfg), "--out", s(dir.path())]), 2);
}

#[test]
fn heavy_tail_control_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("student_t_control.toml");
    let out = dir.path().join("out");
    assert_eq!(smd(&["validate", s(&cfg), "--out", s(&out)]), 0);
    assert_eq!(smd(&["validate", s(&cfg), "--out", s(&out), "--check"]), 3);
    assert_eq!(smd(&["montecarlo", s(&cfg), "--out", s(&out)]), 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let comparisons = v["comparisons"].as_array().unwrap();
    assert!(comparisons.iter().all(|c| c["theorem5_verdict"].is_null()));
    assert!(comparisons
        .iter()
        .any(|c| c["theorem5_skipped"].as_str().unwrap_or("").contains("sub-Gaussian")));
}

#[test]
fn shipped_configs_parse_and_build() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        let cfg = smd_cli::config::ExperimentConfig::load(&p).unwrap();
        cfg.build().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
