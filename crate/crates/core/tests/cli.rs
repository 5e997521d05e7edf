use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qda(project: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qda"))
        .env("QDA_PROJECT", project)
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn end_to_end_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(qda(root, &["init"]).status.success());
    assert!(root.join("qda.toml").exists());
    assert!(qda(root, &["synth", "--seed", "3"]).status.success());

    let out = qda(root, &["run", "ingest", "--json"]);
    assert!(out.status.success());
    let out = qda(root, &["run", "search", "--json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = json(&out);
    assert_eq!(err["error"]["code"], "dependency");
    assert!(err["error"]["rerun"].as_array().unwrap().iter().any(|s| s == "tdm"));

    let out = qda(root, &["run", "all", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = json(&out);
    let out = qda(root, &["run", "all", "--json"]);
    let second = json(&out);
    for (a, b) in first["stages"].as_array().unwrap().iter().zip(second["stages"].as_array().unwrap()) {
        assert_eq!(b["result"], "fresh");
        assert_eq!(a["artifacts"], b["artifacts"]);
    }

    let status = json(&qda(root, &["status", "--json"]));
    assert!(status.as_array().unwrap().iter().all(|s| s["state"] == "fresh"));

    let report = json(&qda(root, &["report", "--json"]));
    assert_eq!(report["pairs"]["training"]["final_threshold"], 0.9);
    assert!(root.join("report/summary.json").exists());

    let got = json(&qda(root, &["dict", "get", "pharmacy", "--json"]));
    let v = got["version"].as_u64().unwrap();
    let out = qda(root, &["dict", "set", "pharmacy", "chemist", "--base-version", &v.to_string(), "--json"]);
    assert!(out.status.success());
    assert_eq!(json(&out)["edit"]["version"], v + 1);
    let out = qda(root, &["dict", "set", "pharmacy", "store", "--base-version", &v.to_string(), "--json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["error"]["code"], "conflict");
    let status = json(&qda(root, &["status", "--json"]));
    let state = |stage: &str| status.as_array().unwrap().iter().find(|s| s["stage"] == stage).unwrap()["state"].clone();
    assert_eq!(state("lemmatise"), "stale");
    assert_eq!(state("ingest"), "fresh");

    let out = qda(root, &["review", "training:tr01:0", "reassign", "--json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["error"]["code"], "validation");

    let out = qda(root, &["run", "all", "--set", "corr_floor=0.95", "--set", "coverage_target=0.9", "--json"]);
    assert!(out.status.success());
    let cfg = std::fs::read_to_string(root.join("artifacts/config.toml")).unwrap();
    assert!(cfg.contains("corr_floor = 0.95"));
    // overrides apply per invocation; without them the config differs again
    let out = qda(root, &["report", "--json"]);
    assert_eq!(json(&out)["error"]["code"], "dependency");
    let report = json(&qda(root, &["report", "--set", "corr_floor=0.95", "--set", "coverage_target=0.9", "--json"]));
    assert_eq!(report["pairs"]["training"]["reached_target"], false);
    assert_eq!(report["pairs"]["training"]["final_threshold"], 0.95);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = qda(root, &["status"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(qda(root, &["init"]).status.success());
    let out = qda(root, &["run", "bogus", "--json"]);
    assert_eq!(json(&out)["error"]["code"], "config");
    let out = qda(root, &["run", "all", "--set", "low_pct=150", "--json"]);
    assert_eq!(json(&out)["error"]["code"], "config");
    let out = qda(root, &["run", "all", "--json"]);
    assert_eq!(json(&out)["error"]["code"], "empty");
}
