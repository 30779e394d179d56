use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn growfrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_growfrag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = growfrag(&["run", "simulate", "--model", "linear", "-q", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_names_its_path() {
    let o = growfrag(&["run", "simulate", "--model", "hump", "--seed", "1", "simulate.pathz=3"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pathz"));
}

#[test]
fn list_models_text_and_json() {
    let o = growfrag(&["list-models"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["linear", "saturating", "hump"] {
        assert!(text.contains(name));
    }
    let o = growfrag(&["list-models", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.as_array().unwrap().len() >= 3);
}

#[test]
fn check_exit_codes_follow_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let pass = growfrag(&[
        "check", "criterion", "--model", "hump", "--seed", "5", "-q",
        "-o", dir.path().join("hump").to_str().unwrap(),
    ]);
    assert_eq!(code(&pass), 0, "{}", String::from_utf8_lossy(&pass.stdout));
    let fail = growfrag(&[
        "check", "criterion", "--model", "linear", "--seed", "5", "-q",
        "-o", dir.path().join("linear").to_str().unwrap(),
        "fission.kind=\"constant\"", "fission.b=0.5",
    ]);
    assert_eq!(code(&fail), 2, "{}", String::from_utf8_lossy(&fail.stdout));
    let csv = fs::read_to_string(dir.path().join("linear/checks.csv")).unwrap();
    assert!(csv.starts_with("check,item,"));
    assert!(csv.contains("fail"));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = growfrag(&[
        "run", "simulate", "--model", "saturating", "--seed", "11", "-q", "-w", "1",
        "-o", first.to_str().unwrap(), "simulate.paths=50", "simulate.horizon=3.0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&first, "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|f| f["file"] == "paths.csv"));

    let replay = dir.path().join("replay");
    let o = growfrag(&[
        "run", "--manifest", first.join("manifest.json").to_str().unwrap(), "-q", "-w", "2",
        "-o", replay.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["paths.csv", "events.csv", "snapshots.csv", "summary.json"] {
        assert_eq!(read(&first, f), read(&replay, f), "{f}");
    }
}

#[test]
fn dump_path_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("path.csv");
    let o = growfrag(&[
        "dump-path", "--model", "hump", "--seed", "3", "--horizon", "4", "-o", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("time"));
    assert!(lines.count() >= 2);

    let bad = growfrag(&["dump-path", "--model", "hump", "--seed", "3", "--x0=-1"]);
    assert_eq!(code(&bad), 1);
}
