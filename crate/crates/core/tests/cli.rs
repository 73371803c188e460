use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn levy_ot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levy-ot")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const MU: &str = r#"{ "dim": 2, "atoms": [ { "z": [0.3, 0.1], "w": 1.5 }, { "z": [-0.2, 0.7], "w": 0.25 } ] }"#;
const NU: &str = r#"{ "dim": 2, "atoms": [ { "z": [0.1, 0.1], "w": 1.0 } ] }"#;

#[test]
fn dist_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.json", MU);
    let b = write(dir.path(), "b.json", MU);
    let o = levy_ot(&["dist", a.to_str().unwrap(), b.to_str().unwrap(), "--p", "1.5", "--json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["distance"].as_f64(), Some(0.0), "{v}");
}

#[test]
fn dist_is_symmetric_across_argument_order() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.json", MU);
    let b = write(dir.path(), "b.json", NU);
    let ab = levy_ot(&["dist", a.to_str().unwrap(), b.to_str().unwrap(), "--p", "2", "--json"], dir.path());
    let ba = levy_ot(&["dist", b.to_str().unwrap(), a.to_str().unwrap(), "--p", "2", "--json"], dir.path());
    let d = |o: &Output| serde_json::from_str::<serde_json::Value>(&stdout(o)).unwrap()["distance"].as_f64().unwrap();
    assert!(d(&ab) > 0.0);
    assert!((d(&ab) - d(&ba)).abs() <= 1e-12);
}

#[test]
fn malformed_json_is_an_input_error_with_position() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.json", "{ \"dim\": 2,\n  \"atoms\": [ { \"z\": [0.1, ] } ] }");
    let b = write(dir.path(), "b.json", NU);
    let o = levy_ot(&["dist", a.to_str().unwrap(), b.to_str().unwrap(), "--p", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("line 2"), "{msg}");
    assert!(msg.contains("column"), "{msg}");
}

#[test]
fn bad_exponent_and_unknown_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.json", MU);
    assert_eq!(levy_ot(&["dist", a.to_str().unwrap(), a.to_str().unwrap(), "--p", "3"], dir.path()).status.code(), Some(2));
    assert_eq!(levy_ot(&["dist", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(levy_ot(&["--help"], dir.path()).status.code(), Some(0));
}

const CONSTANT_KERNEL: &str = r#"{"type":"kernel","sigma":0.5,"params":{"dim":1,"c0":1,"c1":0},"grid":{"r_min":0.001,"r_max":1,"n_radial":20,"n_angular":4}}"#;
const KERNEL: &str = r#"{"type":"kernel","sigma":0.5,"params":{"dim":1,"c0":1,"c1":0.5},"grid":{"r_min":0.001,"r_max":1,"n_radial":20,"n_angular":4}}"#;

#[test]
fn sweep_with_no_pairs_prints_only_the_header() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "k.json", KERNEL);
    let o = levy_ot(&["sweep", cfg.to_str().unwrap(), "--p", "1", "--pairs", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines, ["x,y,dist_xy,distance,ratio,truncation_cost"]);
}

#[test]
fn sweep_is_reproducible_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "k.json", KERNEL);
    let args = ["sweep", cfg.to_str().unwrap(), "--p", "1", "--pairs", "12", "--seed", "7"];
    let first = levy_ot(&args, dir.path());
    let second = levy_ot(&args, dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
    assert!(stdout(&first).starts_with("# seed=7"));
    assert_eq!(stdout(&first).lines().count(), 2 + 12);

    let other = levy_ot(&["sweep", cfg.to_str().unwrap(), "--p", "1", "--pairs", "12", "--seed", "8"], dir.path());
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn sweep_of_a_constant_family_has_zero_ratios() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "k.json", CONSTANT_KERNEL);
    let out = dir.path().join("sweep.csv");
    let o = levy_ot(
        &["sweep", cfg.to_str().unwrap(), "--p", "1", "--pairs", "10", "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let ratio: f64 = cols[cols.len() - 2].parse().unwrap();
        assert_eq!(ratio, 0.0, "{row}");
    }
}

#[test]
fn verify_suites_pass_and_unknown_suite_is_rejected() {
    let dir = TempDir::new().unwrap();
    for suite in ["metric", "oracle"] {
        let o = levy_ot(&["verify", "--suite", suite, "--n", "20", "--seed", "3"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("seed=3"));
    }
    let o = levy_ot(&["verify", "--suite", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_verify_writes_a_reproducer_that_replays() {
    let dir = TempDir::new().unwrap();
    // a negative tolerance makes every gap check fail
    let o = levy_ot(&["verify", "--suite", "duality", "--n", "5", "--seed", "11", "--tol=-1"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let bundle = dir.path().join("levy-ot-repro-duality-seed11-0.json");
    assert!(bundle.exists(), "{}", stderr(&o));

    let replay = levy_ot(&["verify", "--replay", bundle.to_str().unwrap()], dir.path());
    assert_eq!(replay.status.code(), Some(1));
    let text = stdout(&replay);
    assert!(text.contains("seed=11"), "{text}");
    assert!(text.contains("FAIL"), "{text}");
}

#[test]
fn experiment_reports_json() {
    let dir = TempDir::new().unwrap();
    let o = levy_ot(&["experiment", "--nodes", "128", "--epsilons", "0.1,0.01", "--json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2, "{v}");
    assert_eq!(v["u_le_v"], serde_json::Value::Bool(true));
}
