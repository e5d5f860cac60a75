use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mn-delta"));
    c.env_remove("MN_DELTA_JOBS");
    c
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["roc-bench", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth-demo"));
}

#[test]
fn flags_override_file_and_manifest_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bench.toml");
    std::fs::write(&cfg, "trials = 50\nm = [4]\nmethod = [\"cp\"]\n").unwrap();
    let out = bin()
        .args(["roc-bench", "--trials", "1", "--jobs", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    let dir = run_dir(&out);
    let m = manifest(&dir);
    assert_eq!(m["config"]["trials"], 1);
    assert_eq!(m["config"]["m"], serde_json::json!([4]));
    assert_eq!(m["command"], "roc-bench");
    assert!(dir.join("trials.csv").exists() && dir.join("roc.csv").exists());
    let name = dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.ends_with(m["config_hash"].as_str().unwrap()));
}

#[test]
fn misspelled_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "trails = 5\n").unwrap();
    let out = bin().args(["roc-bench", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did you mean `trials`"));
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["solve", "--xp", "/nonexistent/a.csv", "--xq", "/nonexistent/b.csv", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn jobs_env_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .env("MN_DELTA_JOBS", "3")
        .args(["roc-bench", "--method", "cp", "--m", "4", "--trials", "1", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(manifest(&run_dir(&out))["jobs"], 3);
}

#[test]
fn solve_writes_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, scale: f64| {
        let p = tmp.path().join(name);
        let rows: Vec<String> = (0..60)
            .map(|i| {
                let a = ((i * 37 % 17) as f64 / 17.0 - 0.5) * scale;
                let b = ((i * 11 % 13) as f64 / 13.0 - 0.5) * scale;
                format!("{a},{b}")
            })
            .collect();
        std::fs::write(&p, rows.join("\n")).unwrap();
        p
    };
    let xp = write("p.csv", 1.0);
    let xq = write("q.csv", 2.0);
    for method in ["kliep", "cp"] {
        let out = bin()
            .args(["solve", "--method", method, "--xp"])
            .arg(&xp)
            .arg("--xq")
            .arg(&xq)
            .arg("--out")
            .arg(tmp.path())
            .output()
            .unwrap();
        let dir = run_dir(&out);
        let sol: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap();
        assert_eq!(sol["edge_order"], "sorted-uv");
        assert_eq!(sol["blocks"].as_array().unwrap().len(), 3);
    }
}
