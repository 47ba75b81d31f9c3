use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &["--test", "test2", "--N", "30", "--r", "2", "--k-r", "0.3"];

fn podhjb(out: &Path, stage: &str, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_podhjb"))
        .arg(stage)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, stage: &str, extra: &[&str]) -> String {
    let o = podhjb(out, stage, extra);
    assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn pipeline(out: &Path, extra: &[&str]) {
    let args: Vec<&str> = SMALL.iter().chain(extra).copied().collect();
    for stage in ["snapshots", "basis", "solve", "simulate", "compare-lqr", "report"] {
        ok(out, stage, &args);
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_run_writes_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out, &[]);
    let r2 = out.join("r2");
    assert_eq!(first_line(&out.join("spectrum.csv")), "k,lambda_k");
    assert_eq!(first_line(&r2.join("value.csv")), "i_1,i_2,y_1,y_2,v");
    assert_eq!(first_line(&r2.join("policy.csv")), "i_1,i_2,y_1,y_2,u,control_index");
    assert!(first_line(&r2.join("trajectory.csv")).starts_with("t,y_1,"));
    assert_eq!(first_line(&r2.join("relative_error.csv")), "t,u_hjb,u_lqr,relative_error");
    assert!(first_line(&r2.join("state_difference.csv")).starts_with("t,e_1,e_2"));
    assert!(first_line(&out.join("lqr_trajectory.csv")).ends_with(",u"));

    let meta = json(&r2.join("meta.json"));
    assert!(meta["csv_schemas"]["value.csv"].is_string());
    assert_eq!(meta["solve"]["config"]["r"], 2);
    assert_eq!(meta["solve"]["converged"], true);
    assert!(meta["solve"]["final_residual"].as_f64().unwrap() < 5e-4);
    assert!(meta["solve"]["eigenvalue_tail"].as_f64().unwrap() > 0.0);
    assert!(meta["solve"]["invariance"]["checked"].as_u64().unwrap() > 0);
    let sim = &meta["simulate"];
    assert!(sim["cost"].as_f64().unwrap() < sim["uncontrolled_cost"].as_f64().unwrap());

    let summary = json(&out.join("lqr_summary.json"));
    assert!(summary["care"]["residual"].as_f64().unwrap() < 1e-8);
    let errs = &summary["ranks"]["2"];
    assert!(errs["median"].as_f64().unwrap() <= errs["max"].as_f64().unwrap());
    assert!(json(&out.join("report.json"))["ranks"]["2"]["solve"]["nodes"].as_u64().unwrap() > 0);

    let rows = std::fs::read_to_string(r2.join("relative_error.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 61);
}

#[test]
fn identical_configs_give_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), &[]);
    pipeline(b.path(), &["--threads", "1"]);
    let files = [
        "spectrum.csv",
        "snapshots.json",
        "basis.json",
        "lqr_trajectory.csv",
        "lqr_summary.json",
        "r2/value.csv",
        "r2/policy.csv",
        "r2/policy.json",
        "r2/trajectory.csv",
        "r2/uncontrolled.csv",
        "r2/relative_error.csv",
        "r2/state_difference.csv",
    ];
    for f in files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn zero_policy_reproduces_the_uncontrolled_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for stage in ["snapshots", "basis", "solve"] {
        ok(out, stage, SMALL);
    }
    let path = out.join("r2/policy.json");
    let mut policy = json(&path);
    for u in policy["table"]["controls"].as_array_mut().unwrap() {
        *u = Value::from(0.0);
    }
    std::fs::write(&path, serde_json::to_string(&policy).unwrap()).unwrap();
    ok(out, "simulate", SMALL);
    let a = std::fs::read(out.join("r2/trajectory.csv")).unwrap();
    let b = std::fs::read(out.join("r2/uncontrolled.csv")).unwrap();
    assert!(a == b);
}

#[test]
fn snapshot_bundles_follow_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = dir.path().join("t1");
    let stdout = ok(&t1, "snapshots", &["--test", "test1"]);
    assert!(stdout.contains("p = 3, N = 61"), "{stdout}");
    let meta = json(&t1.join("meta.json"));
    assert_eq!(meta["snapshots"]["controls"], serde_json::json!([-1.0, 0.0, 1.0]));

    let t2 = dir.path().join("t2");
    ok(&t2, "snapshots", &["--test", "test2", "--N", "30"]);
    let bundle = json(&t2.join("snapshots.json"));
    let snap = &bundle["snapshots"];
    let dt = snap["dt"].as_f64().unwrap();
    for k in 0..3 {
        let s0 = snap["states"][k][0].as_array().unwrap();
        let s1 = snap["states"][k][1].as_array().unwrap();
        let d0 = snap["derivs"][k][0].as_array().unwrap();
        for j in 0..s0.len() {
            let q = (s1[j].as_f64().unwrap() - s0[j].as_f64().unwrap()) / dt;
            assert!((q - d0[j].as_f64().unwrap()).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}

#[test]
fn validation_failures_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = podhjb(out, "snapshots", &["--T", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = podhjb(out, "simulate", SMALL);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));

    ok(out, "snapshots", SMALL);
    ok(out, "basis", SMALL);
    let o = podhjb(out, "solve", &["--test", "test2", "--N", "30", "--r", "60", "--k-r", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("d = "), "{err}");

    let o = podhjb(out, "compare-lqr", SMALL);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("policy not found"));

    let o = podhjb(out, "solve", &["--test", "test2", "--N", "40", "--r", "2", "--k-r", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cells"));

    let o = podhjb(out, "report", &["--clamp-policy", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unconverged_solve_exits_with_3_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, "snapshots", SMALL);
    ok(out, "basis", SMALL);
    let args: Vec<&str> = SMALL.iter().copied().chain(["--max-iters", "2"]).collect();
    let o = podhjb(out, "solve", &args);
    assert_eq!(o.status.code(), Some(3));
    let meta = json(&out.join("r2/meta.json"));
    assert_eq!(meta["solve"]["converged"], false);
    assert_eq!(meta["solve"]["iterations"], 2);
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("from_file");
    std::fs::write(&cfg, format!("test = \"test2\"\ncells = 30\nout = {:?}\n", out.to_str().unwrap())).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_podhjb"))
        .args(["snapshots", "--config", cfg.to_str().unwrap(), "--dt", "0.1"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta = json(&out.join("meta.json"));
    let c = &meta["snapshots"]["config"];
    assert_eq!(c["cells"], 30);
    assert_eq!(c["dt"], 0.1);
    assert_eq!(meta["snapshots"]["samples"], 31);
}
