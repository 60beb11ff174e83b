use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &str = r#"{"system":"ou1d","sigma2":0.5,"H":6,"M":5,"nOT":2,"dx_test":0.1,
    "optimizer":{"max_iters":60},"seed":7}"#;

fn solver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solver"))
        .args(args)
        .env_remove("FPK_OUTPUT_DIR")
        .output()
        .expect("spawn solver")
}

fn run_small(dir: &Path, name: &str, config: &str, extra: &[&str]) -> (Output, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(name);
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    (solver(&args), out)
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, da) = run_small(tmp.path(), "a", SMALL, &["--deterministic"]);
    let (b, db) = run_small(tmp.path(), "b", SMALL, &["--deterministic"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success());
    let ma = fs::read(da.join("metrics.json")).unwrap();
    let mb = fs::read(db.join("metrics.json")).unwrap();
    assert_eq!(ma, mb);
    let metrics: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 3);
    for f in [
        "added_01.csv",
        "plan_02.csv",
        "selected_01.csv",
        "network.json",
        "solution.csv",
    ] {
        assert!(da.join(f).exists(), "missing {f}");
    }
}

#[test]
fn nominal_only_run_has_one_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace(r#""nOT":2"#, r#""nOT":0"#);
    let (o, dir) = run_small(tmp.path(), "n", &cfg, &[]);
    assert!(o.status.success());
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.as_array().unwrap().len(), 1);
    assert!(!dir.join("added_01.csv").exists());
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run_small(tmp.path(), "m", SMALL, &[]);
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["error"].is_null());
    assert_eq!(manifest["seed"], 7);
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let bytes = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        let digest = format!("{:x}", Sha256::digest(&bytes));
        assert_eq!(f["sha256"].as_str().unwrap(), digest);
    }
}

#[test]
fn bad_configs_fail_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, cfg, needle) in [
        ("neg", r#"{"system":"ou1d","nOT":-1}"#, "line 1"),
        ("zero", r#"{"system":"ou1d","M":0}"#, "M"),
        ("unknown", r#"{"system":"ou1d","colour":1}"#, "colour"),
        ("system", r#"{"system":"lorenz"}"#, "lorenz"),
    ] {
        let (o, _) = run_small(tmp.path(), name, cfg, &[]);
        assert!(!o.status.success(), "{name} should fail");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{name}: {err}");
    }
    let missing = solver(&["run", "--config", "/nonexistent/cfg.json"]);
    assert!(!missing.status.success());
    let det = tmp.path().join("noseed.json");
    fs::write(&det, r#"{"system":"ou1d"}"#).unwrap();
    let o = solver(&["run", "--config", det.to_str().unwrap(), "--deterministic"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn compare_and_dump_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let (o1, a) = run_small(
        tmp.path(),
        "a",
        &SMALL.replace(r#""nOT":2"#, r#""nOT":0"#),
        &[],
    );
    let (o2, b) = run_small(tmp.path(), "b", SMALL, &[]);
    assert!(o1.status.success() && o2.status.success());

    let csv = tmp.path().join("cmp.csv");
    let o = solver(&[
        "compare",
        a.to_str().unwrap(),
        b.join("record.json").to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("baseline") && text.contains("ot") && text.contains("delta"));
    let table = fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("record,method,system,N_S,eps_pde,eps_rho,wall_time_s,N_S_ratio"));
    assert_eq!(table.lines().count(), 4);

    let net = b.join("network.json");
    let o = solver(&[
        "dump-solution",
        "--net",
        net.to_str().unwrap(),
        "--dx",
        "0.5",
        "--lower=-3",
        "--upper=3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "x1,eta,rho_hat");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.len() == 3 && r[2] >= 0.0));

    let o = solver(&["dump-solution", "--net", net.to_str().unwrap(), "--dx", "0"]);
    assert!(!o.status.success());
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, SMALL.replace(r#""nOT":2"#, r#""nOT":0"#)).unwrap();
    let target = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_solver"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("FPK_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("metrics.json").exists());
}

#[test]
fn check_subcommand_passes() {
    let o = solver(&["check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).matches("[PASS]").count(),
        5
    );
}
