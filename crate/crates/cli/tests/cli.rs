use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn couplex(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_couplex"))
        .args(args)
        .current_dir(dir)
        .env_remove("COUPLEX_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const COUPLE: &str = "schema_version = 1\nseed = 7\n[params]\np1 = [0.2, 0.3, 0.5]\np2 = [0.5, 0.5, 0.0]\ndraws = 5000\n";

const MD: &str = r#"schema_version = 1
seed = 11
model = "ou"
step = 0.01
[params]
start_points = [[-1.0], [1.0]]
start_region = { kind = "box", lo = [-1.0], hi = [1.0] }
target = { kind = "whole" }
binning = { lo = [-4.0], hi = [4.0], bins = [20] }
n = 2000
"#;

#[test]
fn malformed_config_exits_with_one_and_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("missing_seed.toml", "schema_version = 1\n[params]\np1 = [1.0]\np2 = [1.0]\n", "seed"),
        ("bad_toml.toml", "schema_version = \n", "schema"),
        ("unknown_param.toml", "schema_version = 1\nseed = 1\n[params]\np1 = [1.0]\np2 = [1.0]\nq = 3\n", "unknown field"),
        ("wrong_op.toml", "schema_version = 1\nseed = 1\noperation = \"oracle\"\n[params]\np1 = [1.0]\np2 = [1.0]\n", "oracle"),
    ];
    for (name, body, needle) in cases {
        let cfg = write(tmp.path(), name, body);
        let out = couplex(&["couple", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
        assert_eq!(out.status.code(), Some(1), "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{name}: {err}");
    }
    let out = couplex(&["couple", "--config", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_check_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "schema_version = 1\nseed = 1\n[params]\nkind = \"meeting\"\ndistance = 1.0\nhorizon = 1.0\nsigma = 1.0\n[[expect]]\nmetric = \"value\"\nvalue = 0.9\ntolerance = 0.01\n";
    let cfg = write(tmp.path(), "o.toml", body);
    let out = couplex(&["oracle", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/oracle.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn reruns_are_byte_identical_and_seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "md.toml", MD);
    let cfg = cfg.to_str().unwrap();
    for (out, threads) in [("a", "1"), ("b", "2")] {
        let o = couplex(&["estimate-md", "--config", cfg, "--out", out, "--threads", threads], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = couplex(&["estimate-md", "--config", cfg, "--out", "c", "--seed", "12"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    for f in ["estimate-md.json", "estimate-md_md_matrix.csv"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "estimate-md.json"), read("c", "estimate-md.json"));
    let report: serde_json::Value = serde_json::from_slice(&read("c", "estimate-md.json")).unwrap();
    assert_eq!(report["config"]["seed"], 12);
    assert!(report["metrics"]["kappa"].as_f64().unwrap() > 0.0);
    let meta: serde_json::Value = serde_json::from_slice(&read("b", "estimate-md.meta.json")).unwrap();
    assert_eq!(meta["threads"], 2);
}

#[test]
fn report_embeds_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", COUPLE);
    let out = couplex(&["couple", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/couple.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["config"]["params"]["draws"], 5000);
    assert_eq!(report["config"]["params"]["csv_rows"], 1000);
    assert_eq!(report["files"][0], "couple_couplings.csv");
    assert!(tmp.path().join("o/couple_couplings.csv").exists());
}

#[test]
fn empty_suite_exits_zero_with_an_empty_table() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = write(tmp.path(), "s.toml", "schema_version = 1\n");
    let out = couplex(&["suite", "--config", suite.to_str().unwrap(), "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/suite.json")).unwrap()).unwrap();
    assert_eq!(s["rows"].as_array().unwrap().len(), 0);
}

#[test]
fn suite_scales_samples_and_reports_each_run() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "c.toml", COUPLE);
    write(tmp.path(), "bad.toml", "schema_version = 1\n");
    let body = "schema_version = 1\nscale_n = 0.5\n[[runs]]\nname = \"c\"\ncommand = \"couple\"\nconfig = \"c.toml\"\n";
    let suite = write(tmp.path(), "s.toml", body);
    let out = couplex(&["suite", "--config", suite.to_str().unwrap(), "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/c/couple.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["params"]["draws"], 2500);
    assert!((report["config"]["tolerance_scale"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);

    let broken = format!("{body}[[runs]]\nname = \"bad\"\ncommand = \"couple\"\nconfig = \"bad.toml\"\n");
    let suite = write(tmp.path(), "s2.toml", &broken);
    let out = couplex(&["suite", "--config", suite.to_str().unwrap(), "--out", "o2"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ERROR"));
}

#[test]
fn thread_count_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", COUPLE);
    let out = Command::new(env!("CARGO_BIN_EXE_couplex"))
        .args(["couple", "--config", cfg.to_str().unwrap(), "--out", "o"])
        .current_dir(tmp.path())
        .env("COUPLEX_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/couple.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["threads"], 2);
}

#[test]
fn shipped_suite_passes_with_ten_times_fewer_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let shipped = std::fs::read_to_string(configs.join("suite.toml")).unwrap();
    let scaled = shipped
        .replace("scale_n = 1.0", "scale_n = 0.1")
        .replace("config = \"", &format!("config = \"{}/", configs.display()));
    assert!(scaled.contains("scale_n = 0.1"));
    let suite = write(tmp.path(), "suite.toml", &scaled);
    let out = couplex(&["suite", "--config", suite.to_str().unwrap(), "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/suite.json")).unwrap()).unwrap();
    assert_eq!(s["passed"], true);
    assert!((s["tolerance_scale"].as_f64().unwrap() - 10f64.sqrt()).abs() < 1e-12);
}
