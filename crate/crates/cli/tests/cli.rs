use std::fs;
use std::process::{Command, Output};

fn bp_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bp-sim"))
        .args(args)
        .output()
        .expect("bp-sim runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn emitted_preset_runs_identically_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let emitted = bp_sim(&["preset", "tamper_relay", "--emit"]);
    assert!(emitted.status.success());
    let path = dir.path().join("tamper.json");
    fs::write(&path, &emitted.stdout).unwrap();

    let trace_a = dir.path().join("a.jsonl");
    let trace_b = dir.path().join("b.jsonl");
    let from_file = bp_sim(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--report",
        "json",
        "--trace",
        trace_a.to_str().unwrap(),
    ]);
    assert!(
        from_file.status.success(),
        "{}",
        String::from_utf8_lossy(&from_file.stderr)
    );
    let built_in = bp_sim(&[
        "preset",
        "tamper_relay",
        "--report",
        "json",
        "--trace",
        trace_b.to_str().unwrap(),
    ]);
    assert!(built_in.status.success());
    assert_eq!(stdout(&from_file), stdout(&built_in));
    assert_eq!(fs::read(&trace_a).unwrap(), fs::read(&trace_b).unwrap());
    assert!(stdout(&from_file).contains("\"conservation_holds\": true"));
    for line in fs::read_to_string(&trace_a).unwrap().lines() {
        assert!(line.starts_with("{\"time_ms\":"), "{line}");
    }
}

#[test]
fn seed_override_changes_fault_stream() {
    let a = bp_sim(&["preset", "silent_corruption", "--report", "csv"]);
    let b = bp_sim(&[
        "preset",
        "silent_corruption",
        "--report",
        "csv",
        "--seed",
        "5",
    ]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 4);
}

#[test]
fn invalid_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"name": "bad", "duration_s": 10,
            "nodes": [{"node_id": "a", "policy": {"mode": "paranoid"}}],
            "contacts": [], "traffic": []}"#,
    )
    .unwrap();
    let out = bp_sim(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nodes[0].policy.mode"), "{err}");
}

#[test]
fn unknown_preset_is_rejected() {
    let out = bp_sim(&["preset", "nope"]);
    assert!(!out.status.success());
}

#[test]
fn bench_reports_both_suites() {
    let out = bp_sim(&["bench", "--size", "1024", "--iterations", "50"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("crc32_ns_per_op") && text.contains("hmac_sha256_ns_per_op"),
        "{text}"
    );
}

#[test]
fn bp_send_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let payload = dir.path().join("p");
    fs::write(&payload, b"x").unwrap();
    let p = payload.to_str().unwrap();
    let send = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_bp-send"))
            .args(args)
            .output()
            .unwrap()
    };
    assert!(!send(&[
        "--to",
        "nonsense",
        "--node",
        "127.0.0.1:1",
        "--lifetime",
        "5",
        p
    ])
    .status
    .success());
    assert!(!send(&[
        "--to",
        "dtn:b/x",
        "--node",
        "127.0.0.1:1",
        "--lifetime",
        "0",
        p
    ])
    .status
    .success());
    assert!(!send(&[
        "--to",
        "dtn:b/x",
        "--node",
        "127.0.0.1:1",
        "--lifetime",
        "5",
        "--suite",
        "3",
        p
    ])
    .status
    .success());
    // suite 2 without a key
    assert!(!send(&[
        "--to",
        "dtn:b/x",
        "--node",
        "127.0.0.1:1",
        "--lifetime",
        "5",
        "--suite",
        "2",
        p
    ])
    .status
    .success());
}
