use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdsim::metrics::read_sweep_csv;

fn pdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdsim")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
  "workload": {"long_tail": {"n_requests": 60, "seed": 3}},
  "qps_sweep": {"start": 1.0, "stop": 2.0, "step": 0.5},
  "policies": [["fcfs", "continuous"], ["kairos-urgency", "kairos-slack"]]
}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_one_row_per_point_and_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", SMALL);
    let before = fs::read(&cfg).unwrap();
    let out = dir.path().join("out");
    let o = pdsim(&["run", "--config", s(&cfg), "--out", s(&out), "--events"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&cfg).unwrap(), before);

    let rows = read_sweep_csv(fs::File::open(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(
        rows.iter().map(|r| r.qps).collect::<Vec<_>>(),
        [1.0, 1.0, 1.5, 1.5, 2.0, 2.0]
    );
    assert_eq!(rows[1].policy_pair, "kairos-urgency+kairos-slack");

    let point = out.join("fcfs+continuous").join("qps_1.5");
    let csv = fs::read_to_string(point.join("requests.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(point.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_requests"], 60);
    assert_eq!(report["config"]["prefill_policy"], "fcfs");
    assert!(fs::read_to_string(point.join("events.jsonl")).unwrap().lines().count() > 60);
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(pdsim(&["run", "--config", s(&cfg), "--seed", "11", "--out", s(out)])
            .status
            .success());
    }
    assert_eq!(
        fs::read(a.join("sweep.csv")).unwrap(),
        fs::read(b.join("sweep.csv")).unwrap()
    );
    let p = Path::new("kairos-urgency+kairos-slack/qps_2/requests.csv");
    assert_eq!(fs::read(a.join(p)).unwrap(), fs::read(b.join(p)).unwrap());
}

#[test]
fn bad_inputs_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing_trace = write(
        dir.path(),
        "t.json",
        r#"{"workload": {"trace": "nope.jsonl"}, "qps_sweep": [1.0], "policies": [["fcfs", "continuous"]]}"#,
    );
    assert_eq!(pdsim(&["run", "--config", s(&missing_trace)]).status.code(), Some(2));
    let garbage = write(dir.path(), "g.json", "{not json");
    assert_eq!(pdsim(&["run", "--config", s(&garbage)]).status.code(), Some(2));
    assert_eq!(
        pdsim(&["run", "--config", s(&dir.path().join("absent.json"))])
            .status
            .code(),
        Some(2)
    );
    let no_pairs = write(dir.path(), "n.json", r#"{"qps_sweep": [1.0], "policies": []}"#);
    assert_eq!(pdsim(&["run", "--config", s(&no_pairs)]).status.code(), Some(2));
}

#[test]
fn simulation_config_errors_exit_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "k.json",
        r#"{"cluster": {"kv_capacity_tokens": 1000},
            "workload": {"long_tail": {"n_requests": 20}},
            "qps_sweep": [1.0], "policies": [["fcfs", "continuous"]]}"#,
    );
    let o = pdsim(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generated_trace_and_profile_feed_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let profile = dir.path().join("profile.json");
    assert!(pdsim(&[
        "gen-trace",
        "--n",
        "30",
        "--qps",
        "1.5",
        "--seed",
        "5",
        "--out",
        s(&trace)
    ])
    .status
    .success());
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 30);
    assert!(pdsim(&["profile-synth", "--gamma", "0.05", "--out", s(&profile)])
        .status
        .success());
    let p: serde_json::Value = serde_json::from_slice(&fs::read(&profile).unwrap()).unwrap();
    assert_eq!(p["entries_us"][0][0], 11_000.0);
    assert_eq!(p["prefill_anchor"]["tokens"], 131_072);

    let cfg = write(
        dir.path(),
        "exp.json",
        r#"{"cluster": {"decode_profile": {"kind": "path", "path": "profile.json"}},
            "workload": {"trace": "trace.jsonl"},
            "qps_sweep": [0.5], "policies": [["sjf", "kairos-slack-solo"]]}"#,
    );
    let out = dir.path().join("out");
    let o = pdsim(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sjf+kairos-slack-solo/qps_0.5/report.json").is_file());
}

#[test]
fn report_merges_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(
        dir.path(),
        "a.csv",
        "qps,policy_pair,ttft_att,tpot_att,e2e_att,decode_tps_p50\n2.0,x,1,1,1,3.5\n",
    );
    let b = write(
        dir.path(),
        "b.csv",
        "qps,policy_pair,ttft_att,tpot_att,e2e_att,decode_tps_p50\n1.0,y,0.5,1,0.5,\n",
    );
    let o = pdsim(&["report", s(&a), s(&b)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1.0,y"));
    let bad = write(dir.path(), "bad.csv", "a,b\n1,2\n");
    assert_eq!(pdsim(&["report", s(&bad)]).status.code(), Some(2));
}
