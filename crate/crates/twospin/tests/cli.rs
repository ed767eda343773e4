//! Black-box tests of the command-line interface: exact JSON contracts,
//! exit codes per error class, stdin input, and thread-count
//! independence of the output bytes.

use std::io::Write;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twospin"))
}

fn stdout_json(out: &std::process::Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

const T1: &str = r#"{"t":"merge","c":[{"t":"merge","c":[]}]}"#;
const K4: &str = r#"{"n":4,"edges":[[0,1],[0,2],[0,3],[1,2],[1,3],[2,3]]}"#;

#[test]
fn eval_reports_exact_field_and_gap() {
    let mut child = bin()
        .args(["eval", "--gadget", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(T1.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["R"], "2/3");
    assert_eq!(v["M"], "5/6");
}

#[test]
fn critical_activity_at_degree_six() {
    let out = bin().args(["critical", "--delta", "6"]).output().unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["lambda_c"], "3125/4096");
    assert_eq!(v["beta_c"], "2/3");
}

#[test]
fn oracle_counts_independent_sets() {
    let dir = std::env::temp_dir().join(format!("twospin-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("k4.json");
    std::fs::write(&path, K4).unwrap();

    let out = bin().args(["oracle", "--graph", path.to_str().unwrap(), "--op", "z"]).output().unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["Z"], "5");
    assert_eq!(v["method"], "enumeration");
    assert_eq!(v["configurations"], "16");

    let out = bin()
        .args([
            "oracle",
            "--graph",
            path.to_str().unwrap(),
            "--op",
            "marginal",
            "--vertex",
            "1",
            "--pin",
            "0=0",
        ])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["marginal"], "1/4");

    std::fs::remove_file(&path).ok();
    std::fs::remove_dir(&dir).ok();
}

#[test]
fn fixpoint_flags_nonuniqueness_above_threshold() {
    let out = bin()
        .args(["fixpoint", "--beta", "1", "--gamma", "0", "--lambda", "1", "--delta", "6"])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["verdict"], "non-unique");
    assert!(v["q_plus"].is_string() && v["q_minus"].is_string());

    let out = bin()
        .args(["fixpoint", "--beta", "1", "--gamma", "0", "--lambda", "1", "--delta", "5"])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["verdict"], "unique");
}

#[test]
fn malformed_rational_exits_with_parse_code() {
    let out = bin().args(["critical", "--delta", "6", "--beta", "zebra"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn ferromagnetic_parameters_exit_with_infeasible_code() {
    let out = bin()
        .args(["fixpoint", "--beta", "2", "--gamma", "2", "--lambda", "1", "--delta", "6"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_lists_every_check() {
    let out = bin().args(["verify", "--list"]).output().unwrap();
    let v = stdout_json(&out);
    let names: Vec<&str> =
        v["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), twospin::checks::registry().len());
    for def in twospin::checks::registry() {
        assert!(names.contains(&def.name), "{} missing from --list", def.name);
    }
}

#[test]
fn output_bytes_ignore_thread_count() {
    let run = |jobs: &str| {
        let out = bin()
            .args(["find-pair", "--tolerance", "1/1000", "--count", "2", "--jobs", jobs])
            .output()
            .unwrap();
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("1"), run("4"));
}
