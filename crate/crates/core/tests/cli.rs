use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use hushhub::sim::Transcript;

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn hushsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hushsim")).args(args).output().unwrap()
}

#[test]
fn oracle_subcommand() {
    let state = scenarios().join("four_users.json");
    let out = hushsim(&["oracle", state.to_str().unwrap(), "--speaker", "A"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), r#"["B"]"#);
    let out = hushsim(&["oracle", state.to_str().unwrap(), "--speaker", "C"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), r#"["A","B","D"]"#);
    let out = hushsim(&["oracle", state.to_str().unwrap(), "--speaker", "Z"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_in_process_is_reproducible() {
    let path = scenarios().join("walkthrough.json");
    let a = hushsim(&["run", path.to_str().unwrap()]);
    let b = hushsim(&["run", path.to_str().unwrap()]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let tr: Transcript = serde_json::from_slice(&a.stdout).unwrap();
    let heard: Vec<&str> = tr.at_step(10).map(|r| r.to.as_str()).collect();
    assert_eq!(heard, ["B"]);
    assert!(String::from_utf8_lossy(&a.stderr).contains("0 leak violations"));
}

#[test]
fn bad_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"seed":0,"config":{"num_channels":7,"max_users":10,"hearing_radius":25.0},"actions":[{"t":0,"actor":"A","op":"speak","text":"x"}]}"#).unwrap();
    let out = hushsim(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("before join_room"));
}

#[test]
fn fuzz_subcommand() {
    let out = hushsim(&["fuzz", "--seed", "3", "--count", "25"]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scenarios"], 25);
    assert!(summary["failure"].is_null());
    assert_eq!(hushsim(&["fuzz", "--max-users", "9"]).status.code(), Some(2));
}

#[test]
fn live_run_against_server_binary() {
    let mut server = Command::new(env!("CARGO_BIN_EXE_hushhub-server"))
        .args(["--listen", "127.0.0.1:0", "--log-level", "warn"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(server.stdout.take().unwrap()).lines();
    let first: serde_json::Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    let addr = first["listening"].as_str().unwrap().to_owned();

    let path = scenarios().join("walkthrough.json");
    let live = hushsim(&["run", path.to_str().unwrap(), "--live", &addr]);
    let local = hushsim(&["run", path.to_str().unwrap()]);
    let _ = server.kill();
    let _ = server.wait();
    assert!(live.status.success(), "{}", String::from_utf8_lossy(&live.stderr));
    let live: Transcript = serde_json::from_slice(&live.stdout).unwrap();
    let local: Transcript = serde_json::from_slice(&local.stdout).unwrap();
    for actor in ["A", "B", "C", "D"] {
        let l: Vec<_> = live.inbox(actor).map(|r| (&r.kind, &r.detail)).collect();
        let p: Vec<_> = local.inbox(actor).map(|r| (&r.kind, &r.detail)).collect();
        assert_eq!(l, p, "{actor}");
    }

    // Event lines follow on stdout; none mention a channel number.
    let mut events = 0;
    for line in lines.map_while(Result::ok) {
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert!(v.get("channel").is_none());
        events += 1;
    }
    assert!(events > 0);
}

#[test]
fn server_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hushhub.toml");
    std::fs::write(&path, "listen = \"127.0.0.1:0\"\n\n[[rooms]]\nroom_id = \"main\"\nnum_channels = 0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hushhub-server"))
        .args(["--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_channels"));
}
