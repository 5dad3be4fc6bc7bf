use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dualte(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualte"))
        .args(args)
        .current_dir(dir)
        .env_remove("DUALTE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = dualte(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const TRAIN: &str = r#"{
  "topology": "t.json",
  "paths": "p.json",
  "traffic": "tm.csv",
  "output": "ckpt.json",
  "loss_curve": "loss.csv",
  "train": {"steps": 20, "learning_rate": 0.003, "batch_size": 8, "seed": 5}
}"#;

/// Topology, paths, a 48-snapshot trace and a training run file.
fn inputs() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-topo", "--nodes", "6", "--links", "8", "--seed", "2", "--out", "t.json"]);
    ok(d, &["gen-paths", "--topo", "t.json", "--k", "3", "--out", "p.json"]);
    ok(
        d,
        &["gen-traffic", "--topo", "t.json", "--snapshots", "48", "--total-demand", "60", "--seed", "2", "--out", "tm.csv"],
    );
    fs::write(d.join("train.json"), TRAIN).unwrap();
    dir
}

#[test]
fn generators_write_outputs_with_one_manifest_each() {
    let dir = inputs();
    let d = dir.path();
    let topo = json(&d.join("t.json"));
    assert_eq!(topo["nodes"].as_array().unwrap().len(), 6);
    assert_eq!(topo["edges"].as_array().unwrap().len(), 16);
    let csv = fs::read_to_string(d.join("tm.csv")).unwrap();
    assert_eq!(csv.lines().count(), 48);
    for name in ["t.json", "p.json", "tm.csv"] {
        let m = json(&d.join(format!("{name}.manifest.json")));
        assert_eq!(m["outputs"][0]["path"], name);
        assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
    }
    let traffic = json(&d.join("tm.csv.manifest.json"));
    assert_eq!(traffic["config"]["snapshots"], 48);
    assert_eq!(traffic["seeds"]["traffic"], 2);
    assert!(traffic["inputs"]["t.json"].is_string());
    let leftovers: Vec<_> = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn solve_prints_lp_solution() {
    let dir = inputs();
    let out = ok(dir.path(), &["solve", "--topo", "t.json", "--paths", "p.json", "--tm", "tm.csv", "--row", "3"]);
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sol["status"], "optimal");
    assert!(sol["mlu"].as_f64().unwrap() > 0.0);
    let edges = json(&dir.path().join("t.json"))["edges"].as_array().unwrap().len();
    assert_eq!(sol["duals"].as_array().unwrap().len(), edges);
    assert!(sol["ratios"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() >= -1e-9));
    assert!(dir.path().join("solve.manifest.json").exists());
}

#[test]
fn train_then_eval_reports_percentiles() {
    let dir = inputs();
    let d = dir.path();
    ok(d, &["train", "--config", "train.json"]);
    let ckpt = json(&d.join("ckpt.json"));
    assert_eq!(ckpt["version"], 1);
    let manifest = json(&d.join("ckpt.json.manifest.json"));
    assert_eq!(manifest["config"]["train"]["steps"], 20);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs[0]["sha256"].is_string());
    assert!(outputs[1]["sha256"].is_null(), "loss curve carries wall-clock times");

    let out = ok(d, &["eval", "--checkpoint", "ckpt.json"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    // 48 snapshots: the last quarter is the test split
    assert_eq!(report["summary"]["count"], 12);
    for key in ["mean", "p25", "p50", "p75", "p99"] {
        assert!(report["summary"][key].as_f64().unwrap() >= 1.0 - 1e-6, "{key}");
    }

    let out = ok(d, &["eval", "--router", "oracle", "--config", "train.json", "--format", "csv"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("index,mlu,optimal_mlu,normalized_mlu"));
}

#[test]
fn scenario_commands_run_on_a_checkpoint() {
    let dir = inputs();
    let d = dir.path();
    ok(d, &["train", "--config", "train.json"]);
    let instance = ["--checkpoint", "ckpt.json", "--topo", "t.json", "--paths", "p.json", "--tm", "tm.csv"];

    let args: Vec<&str> = ["failure-eval", "--failures", "2", "--seed", "3", "--out", "fail.json"]
        .into_iter()
        .chain(instance)
        .chain(["--rows", "40:48"])
        .collect();
    ok(d, &args);
    let report = json(&d.join("fail.json"));
    assert_eq!(report["samples"].as_array().unwrap().len(), 8);
    assert!(report["samples"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["failed_edge_flow"].as_f64() == Some(0.0)));

    let args: Vec<&str> = ["transfer-eval", "--from", "A", "--to", "B"]
        .into_iter()
        .chain(instance)
        .chain(["--rows", ":4"])
        .collect();
    let report: Value = serde_json::from_slice(&ok(d, &args).stdout).unwrap();
    assert_eq!(report["label"], "A -> B");

    let args: Vec<&str> = ["trace", "--row", "1"].into_iter().chain(instance).collect();
    let csv = String::from_utf8(ok(d, &args).stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,mlu,normalized_mlu"));
    assert_eq!(csv.lines().count(), 7);

    let args: Vec<&str> = ["sweep", "--steps", "4"].into_iter().chain(instance).collect();
    let csv = String::from_utf8(ok(d, &args).stdout).unwrap();
    assert_eq!(csv.lines().count(), 17);

    fs::write(d.join("cluster.json"), r#"{"n_clusters": 2, "snapshots_per_cluster": 3}"#).unwrap();
    ok(
        d,
        &["gen-cluster", "--topo", "t.json", "--tm", "tm.csv", "--config", "cluster.json", "--seed", "4", "--out", "cl.json"],
    );
    let report: Value =
        serde_json::from_slice(&ok(d, &["eval", "--checkpoint", "ckpt.json", "--cluster", "cl.json"]).stdout).unwrap();
    assert_eq!(report["summary"]["count"], 6);
}

#[test]
fn identical_runs_have_identical_manifests() {
    let digests = |jobs: &str| {
        let dir = inputs();
        let d = dir.path();
        ok(d, &["train", "--config", "train.json", "--jobs", jobs]);
        ok(d, &["eval", "--checkpoint", "ckpt.json", "--jobs", jobs, "--out", "report.json"]);
        ["t.json", "p.json", "tm.csv", "ckpt.json", "report.json"]
            .iter()
            .flat_map(|n| [fs::read(d.join(n)).unwrap(), fs::read(d.join(format!("{n}.manifest.json"))).unwrap()])
            .collect::<Vec<_>>()
    };
    let a = digests("1");
    assert_eq!(a, digests("1"));
    assert_eq!(a, digests("2"));
}

#[test]
fn timing_reports_have_no_digest() {
    let dir = inputs();
    let d = dir.path();
    ok(d, &["eval", "--router", "uniform", "--config", "train.json", "--timing", "--out", "r.json"]);
    let m = json(&d.join("r.json.manifest.json"));
    assert!(m["outputs"][0]["sha256"].is_null());
    assert!(json(&d.join("r.json"))["samples"][0]["wall_ms"].is_number());
}

#[test]
fn output_directory_override() {
    let dir = inputs();
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_dualte"))
        .args(["gen-paths", "--topo", "t.json", "--k", "2", "--out", "sub/p2.json"])
        .current_dir(dir.path())
        .env("DUALTE_OUT_DIR", out.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.path().join("sub/p2.json").exists());
    assert!(out.path().join("sub/p2.json.manifest.json").exists());
    assert!(!dir.path().join("sub").exists());
}

#[test]
fn config_errors_name_the_field_and_exit_2() {
    let dir = inputs();
    let d = dir.path();
    fs::write(
        d.join("bad.json"),
        "{\"topology\": \"t.json\", \"paths\": \"p.json\", \"traffic\": \"tm.csv\", \"output\": \"x.json\",\n \"train\": {\"steps\": \"many\"}}",
    )
    .unwrap();
    let out = dualte(d, &["train", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.steps") && err.contains("line 2"), "{err}");
    assert!(!d.join("x.json").exists());
    assert!(!d.join("x.json.manifest.json").exists());

    let out = dualte(d, &["solve", "--topo", "missing.json", "--paths", "p.json", "--tm", "tm.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = dualte(d, &["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = dualte(d, &["eval", "--checkpoint", "nope.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_solve_exits_3() {
    let dir = inputs();
    let d = dir.path();
    let mut paths = json(&d.join("p.json"));
    paths["pairs"].as_array_mut().unwrap().remove(0);
    paths["paths"].as_array_mut().unwrap().remove(0);
    paths["disconnected"] = serde_json::json!([[0, 1]]);
    fs::write(d.join("pd.json"), paths.to_string()).unwrap();
    let out = dualte(d, &["solve", "--topo", "t.json", "--paths", "pd.json", "--tm", "tm.csv"]);
    assert_eq!(out.status.code(), Some(3));
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sol["status"], "infeasible");
    assert_eq!(sol["infeasible_pair"], serde_json::json!([0, 1]));
}

#[test]
fn diverging_training_exits_4() {
    let dir = inputs();
    let d = dir.path();
    let config = TRAIN
        .replace("\"learning_rate\": 0.003", "\"learning_rate\": 1e200, \"grad_clip\": null")
        .replace("ckpt.json", "nan.json");
    fs::write(d.join("nan.json.config"), config).unwrap();
    let out = dualte(d, &["train", "--config", "nan.json.config"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("nan.json").exists());
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(Path::new("."), &["--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for sub in [
        "gen-topo",
        "gen-paths",
        "gen-traffic",
        "solve",
        "train",
        "eval",
        "failure-eval",
        "transfer-eval",
        "gen-cluster",
        "trace",
        "sweep",
    ] {
        assert!(help.contains(sub), "{sub}");
    }
}
