use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PAIR: &str = r#"{
  "name": "pair",
  "dt": 0.1,
  "horizon": 3.0,
  "comm_radius": 4.0,
  "agents": [
    { "id": 1, "model": { "kind": "single_integrator" }, "input": { "ball": 1.0 }, "initial": [0, 0] },
    { "id": 2, "model": { "kind": "single_integrator" }, "input": { "ball": 1.0 }, "initial": [2, 0] }
  ],
  "tasks": ["G[0,3] comm(e12; r=4)"]
}"#;

fn sdcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdcbf")).args(args).output().expect("spawn sdcbf")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_pair(dir: &Path) -> PathBuf {
    let scenario = dir.join("pair.json");
    std::fs::write(&scenario, PAIR).unwrap();
    let out = dir.join("out");
    let o = sdcbf(&["run", path(&scenario), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn run_writes_outputs_and_check_accepts_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pair(dir.path());
    for f in ["trace.json", "trace.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ok"], true);
    assert_eq!(summary["steps"], 30);
    let o = sdcbf(&["check", path(&out.join("trace.json"))]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn check_flags_a_tampered_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pair(dir.path());
    let file = out.join("trace.json");
    let mut trace: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    trace["steps"][10]["agents"]["2"]["substates"][3] = serde_json::json!([9.0, 0.0]);
    std::fs::write(&file, trace.to_string()).unwrap();
    let o = sdcbf(&["check", path(&file)]);
    assert_eq!(o.status.code(), Some(1));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["violations"][0]["kind"], "communication");
    assert_eq!(summary["violations"][0]["step"], 10);
}

#[test]
fn plot_data_defaults_to_the_trace_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_pair(dir.path());
    let o = sdcbf(&["plot-data", path(&out.join("trace.json"))]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["trajectories.csv", "barriers.csv", "safety.csv", "nu.csv", "gamma.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let traj = std::fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("t,agent,px,py,heading"));
}

#[test]
fn tokens_of_the_shipped_scenario() {
    let scenario = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/seven_agents.json");
    let o = sdcbf(&["tokens", path(&scenario)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["diameter"], 4);
    assert!(v["rounds"].as_u64().unwrap() <= 3);
    assert_eq!(v["edges"].as_array().unwrap().len(), 6);
    assert_eq!(v["consistent"], true);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"dt\": 0.1 }").unwrap();
    assert_eq!(sdcbf(&["run", path(&bad)]).status.code(), Some(2));
    assert_eq!(sdcbf(&["check", path(&dir.path().join("missing.json"))]).status.code(), Some(2));
}
