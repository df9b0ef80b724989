//! End-to-end runs of the binary: outputs and exit codes.

mod common;

use std::path::PathBuf;
use std::process::{Command, Output};

use common::corpus_dir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intermit")).args(args).output().unwrap()
}

fn corpus(name: &str) -> String {
    corpus_dir().join(format!("{name}.oct")).display().to_string()
}

fn scratch(name: &str, contents: &str) -> String {
    let dir = std::env::temp_dir().join(format!("intermit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path: PathBuf = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn analyze_reports_greenhouse_policy() {
    let report = scratch("gh.json", "");
    let o = bin(&["analyze", &corpus("greenhouse"), "--report", &report]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let pols = v["policies"].as_array().unwrap();
    assert_eq!(pols.len(), 1);
    assert_eq!(pols[0]["kind"], "consistent");
}

#[test]
fn analyze_rejects_invalid_program() {
    let f = scratch("bad.oct", "fn main() { x := 1; ret 0 }");
    assert_eq!(bin(&["analyze", &f]).status.code(), Some(1));
    let f = scratch("syntax.oct", "fn main() { let = ; }");
    assert_eq!(bin(&["analyze", &f]).status.code(), Some(1));
}

#[test]
fn unannotated_program_is_left_alone() {
    let src = "fn main() {\n    let a = 1;\n    ret a\n}\n";
    let f = scratch("plain.oct", src);
    let o = bin(&["transform", &f]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), src);
}

#[test]
fn transform_then_check_passes_and_original_fails() {
    let out = scratch("tire.t.oct", "");
    let report = scratch("tire.t.json", "");
    let o = bin(&["transform", &corpus("tire"), "-o", &out, "--report", &report]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(bin(&["check", &corpus("tire"), &out]).status.code(), Some(0));
    assert_eq!(bin(&["check", &corpus("tire"), &out, "--pm", &report]).status.code(), Some(0));
    assert_eq!(bin(&["check", &corpus("tire")]).status.code(), Some(2));
}

#[test]
fn whole_body_region_passes_check() {
    let src = "input temp, hum;
        fn main() {
            atomic(1, {alarm}) {
                let alarm = 0;
                let x = temp();
                Fresh(x);
                if x > 30 { alarm := 1; }
                let h = hum();
                Consistent(h, 1);
                let h2 = hum();
                Consistent(h2, 1);
            }
            ret alarm
        }";
    let f = scratch("whole.oct", src);
    let o = bin(&["check", &f]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn simulate_exit_codes_follow_violations() {
    assert_eq!(bin(&["simulate", &corpus("photo"), "--mode", "jit"]).status.code(), Some(2));
    assert_eq!(bin(&["simulate", &corpus("photo"), "--mode", "atomic"]).status.code(), Some(0));
    assert_eq!(bin(&["simulate", &corpus("photo"), "--mode", "transformed"]).status.code(), Some(0));
    let o = bin(&["simulate", &corpus("photo"), "--schedule", "random", "--runs", "20", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0/20 runs violating"));
}

#[test]
fn run_without_failures_matches_continuous_execution() {
    let o = bin(&["run", &corpus("confirm"), "--schedule", "none"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("0 failures"));
    assert!(text.contains("Finished"));
}

#[test]
fn dump_cfg_emits_dot() {
    let o = bin(&["dump-cfg", &corpus("cem"), "--func", "main"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("digraph"));
}
