//! End-to-end checks on the `council` binary: every verb, the exit-code
//! contract, run-directory immutability, and byte-level determinism of
//! reports and replayed branches.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn council() -> Command {
    Command::new(env!("CARGO_BIN_EXE_council"))
}

fn run(args: &[&str]) -> Output {
    council().args(args).output().expect("binary runs")
}

fn run_with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = council()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns");
    child
        .stdin
        .take()
        .expect("stdin handle")
        .write_all(input.as_bytes())
        .expect("stdin accepts input");
    child.wait_with_output().expect("binary exits")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

/// A finished walkthrough run inside its own temp root.
fn scenario_dir(root: &TempDir) -> std::path::PathBuf {
    let out = root.path().join("runs");
    let output = run(&[
        "--out",
        out.to_str().unwrap(),
        "scenario",
        "--seed",
        "0",
    ]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    out.join("scenario-financial-q1-seed0")
}

fn non_header_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .expect("log reads")
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn simulate_writes_a_deterministic_cohort_run() {
    let root = TempDir::new().unwrap();
    let first = root.path().join("a");
    let second = root.path().join("b");
    for out in [&first, &second] {
        let output = run(&[
            "--out",
            out.to_str().unwrap(),
            "simulate",
            "--sessions",
            "24",
            "--seed",
            "11",
        ]);
        assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
        assert!(stdout_of(&output).contains("session funnel"));
    }
    let first = first.join("simulate-n24-seed11");
    let second = second.join("simulate-n24-seed11");
    assert_eq!(
        fs::read(first.join("report.txt")).unwrap(),
        fs::read(second.join("report.txt")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(second.join("report.json")).unwrap()
    );
    assert_eq!(fs::read_dir(first.join("sessions")).unwrap().count(), 24);
}

#[test]
fn simulate_rejects_a_malformed_config_with_exit_two() {
    let root = TempDir::new().unwrap();
    let config = root.path().join("bad.toml");
    fs::write(&config, "cohort = [").unwrap();
    let output = run(&[
        "--out",
        root.path().join("runs").to_str().unwrap(),
        "simulate",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("error:"));
}

#[test]
fn simulate_rejects_an_out_of_range_config_with_exit_two() {
    let root = TempDir::new().unwrap();
    let output = run(&[
        "--out",
        root.path().join("runs").to_str().unwrap(),
        "simulate",
        "--sessions",
        "0",
    ]);
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn scenario_reports_the_expected_close_figures() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("runs");
    let output = run(&["--out", out.to_str().unwrap(), "scenario"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let text = stdout_of(&output);
    assert!(text.contains("88.89%"));
    assert!(text.contains("4,678.25"));
    assert!(text.contains("425.00"));
    assert!(text.contains("8 of 9"));

    let dir = out.join("scenario-financial-q1-seed0");
    assert!(fs::read_dir(dir.join("checkpoints")).unwrap().count() > 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["matched_total_cents"], 467825);
    assert_eq!(report["payment_pending_total_cents"], 42500);
    assert_eq!(report["payment_pending_count"], 1);
    assert_eq!(report["total_iterations"], 13);
    assert_eq!(report["step_iterations"]["1"], 4);
    assert_eq!(report["step_iterations"]["2"], 2);
    assert_eq!(report["step_iterations"]["3"], 2);
}

#[test]
fn scenario_runs_are_seed_stable() {
    let root = TempDir::new().unwrap();
    let first = scenario_dir(&root);
    let other = TempDir::new().unwrap();
    let second = scenario_dir(&other);
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(second.join("report.json")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("session.jsonl")).unwrap(),
        fs::read(second.join("session.jsonl")).unwrap()
    );
}

#[test]
fn unknown_scenario_name_is_exit_three() {
    let root = TempDir::new().unwrap();
    let output = run(&[
        "--out",
        root.path().join("runs").to_str().unwrap(),
        "scenario",
        "annual-audit",
    ]);
    assert_eq!(exit_code(&output), 3);
    assert!(stderr_of(&output).contains("financial-q1"));
}

#[test]
fn declining_the_plan_interactively_is_a_normal_outcome() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("runs");
    let output = run_with_stdin(
        &["--out", out.to_str().unwrap(), "scenario", "--interactive"],
        "n\n",
    );
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("approve this plan?"));

    let dir = out.join("scenario-financial-q1-seed0");
    let log = fs::read_to_string(dir.join(&"session.jsonl")).unwrap();
    assert!(log.contains("approval_refused"));
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("replan_requested"));
    assert!(report.contains("plan declined at the terminal"));
}

#[test]
fn a_typed_refusal_becomes_the_recorded_feedback() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("runs");
    let output = run_with_stdin(
        &["--out", out.to_str().unwrap(), "scenario", "--interactive"],
        "defer until the ledger is locked\n",
    );
    assert_eq!(exit_code(&output), 0);
    let log = out.join("scenario-financial-q1-seed0").join("session.jsonl");
    assert!(fs::read_to_string(log)
        .unwrap()
        .contains("defer until the ledger is locked"));
}

#[test]
fn approving_interactively_matches_the_scripted_run() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("runs");
    let output = run_with_stdin(
        &["--out", out.to_str().unwrap(), "scenario", "--interactive"],
        "y\n\n",
    );
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("88.89%"));

    let scripted = TempDir::new().unwrap();
    let baseline = scenario_dir(&scripted);
    assert_eq!(
        fs::read(out.join("scenario-financial-q1-seed0").join("report.json")).unwrap(),
        fs::read(baseline.join("report.json")).unwrap()
    );
}

#[test]
fn replay_from_the_last_checkpoint_reproduces_the_suffix_byte_for_byte() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["replay", dir.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("forked main/branch-1"));

    let branch = dir.join("branch-1");
    assert_eq!(
        non_header_lines(&dir.join("session.jsonl")),
        non_header_lines(&branch.join("session.jsonl"))
    );
    assert_eq!(
        fs::read(dir.join("report.json")).unwrap(),
        fs::read(branch.join("report.json")).unwrap()
    );
}

#[test]
fn replay_from_an_early_checkpoint_still_reaches_the_same_close() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["replay", dir.to_str().unwrap(), "--checkpoint", "1"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert_eq!(
        non_header_lines(&dir.join("session.jsonl")),
        non_header_lines(&dir.join("branch-1").join("session.jsonl"))
    );
}

#[test]
fn replay_never_touches_the_original_run() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let log_before = fs::read(dir.join("session.jsonl")).unwrap();
    let checkpoint_before = fs::read(dir.join("checkpoints/checkpoint-001.json")).unwrap();

    assert_eq!(exit_code(&run(&["replay", dir.to_str().unwrap()])), 0);
    let output = run(&["replay", dir.to_str().unwrap(), "--branch", "1"]);
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("never overwritten"));

    assert_eq!(fs::read(dir.join("session.jsonl")).unwrap(), log_before);
    assert_eq!(
        fs::read(dir.join("checkpoints/checkpoint-001.json")).unwrap(),
        checkpoint_before
    );
    assert_eq!(exit_code(&run(&["replay", dir.to_str().unwrap()])), 0);
    assert!(dir.join("branch-2").is_dir());
}

#[test]
fn replay_of_a_cohort_run_is_exit_three() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("runs");
    assert_eq!(
        exit_code(&run(&[
            "--out",
            out.to_str().unwrap(),
            "simulate",
            "--sessions",
            "8",
            "--seed",
            "5",
        ])),
        0
    );
    let dir = out.join("simulate-n8-seed5");
    let output = run(&["replay", dir.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 3);
}

#[test]
fn replay_of_a_missing_checkpoint_is_exit_three() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["replay", dir.to_str().unwrap(), "--checkpoint", "999"]);
    assert_eq!(exit_code(&output), 3);
}

#[test]
fn replay_of_a_tampered_checkpoint_is_exit_four() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let path = dir.join("checkpoints/checkpoint-001.json");
    let tampered = fs::read_to_string(&path)
        .unwrap()
        .replacen("\"at_event\": 5", "\"at_event\": 6", 1);
    fs::write(&path, tampered).unwrap();
    let output = run(&["replay", dir.to_str().unwrap(), "--checkpoint", "1"]);
    assert_eq!(exit_code(&output), 4);
    assert!(stderr_of(&output).contains("digest"));
}

#[test]
fn trace_prints_the_upstream_closure_of_a_handle() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["trace", dir.to_str().unwrap(), "h8"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let text = stdout_of(&output);
    assert!(text.contains("upstream of h8"));
    assert!(text.contains("in:invoices_telecom"));
    assert!(text.contains("->"));
}

#[test]
fn trace_of_an_unknown_ref_is_exit_three() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    assert_eq!(
        exit_code(&run(&["trace", dir.to_str().unwrap(), "h999"])),
        3
    );
    assert_eq!(
        exit_code(&run(&["trace", dir.to_str().unwrap(), "not a ref"])),
        3
    );
}

#[test]
fn trace_of_a_corrupted_log_is_exit_four() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let log = dir.join("session.jsonl");
    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str("not json\n");
    fs::write(&log, text).unwrap();
    let output = run(&["trace", dir.to_str().unwrap(), "s1"]);
    assert_eq!(exit_code(&output), 4);
}

#[test]
fn expose_on_a_terminal_fact_prints_an_empty_set() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["expose", dir.to_str().unwrap(), "fact:close_summary"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("(0 refs)"));
}

#[test]
fn expose_lists_everything_an_input_reaches() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["expose", dir.to_str().unwrap(), "in:invoices_telecom"]);
    assert_eq!(exit_code(&output), 0);
    let text = stdout_of(&output);
    assert!(text.contains("downstream of in:invoices_telecom"));
    assert!(!text.contains("(0 refs)"));
}

#[test]
fn report_recomputes_the_walkthrough_table_from_its_log() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let output = run(&["report", dir.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let text = stdout_of(&output);
    assert!(text.contains("88.89%"));
    assert_eq!(
        text,
        fs::read_to_string(dir.join("report.txt")).unwrap()
    );
}

#[test]
fn report_folds_a_cohort_directory_back_into_its_tables() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("runs");
    let sim = run(&[
        "--out",
        out.to_str().unwrap(),
        "simulate",
        "--sessions",
        "16",
        "--seed",
        "3",
    ]);
    assert_eq!(exit_code(&sim), 0);
    let dir = out.join("simulate-n16-seed3");
    let output = run(&["report", dir.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);
    assert_eq!(
        stdout_of(&output),
        fs::read_to_string(dir.join("report.txt")).unwrap()
    );
}

#[test]
fn the_out_env_var_sets_the_default_root() {
    let root = TempDir::new().unwrap();
    let out = root.path().join("from-env");
    let output = council()
        .env("COUNCIL_OUT_DIR", &out)
        .args(["scenario", "--seed", "4"])
        .output()
        .expect("binary runs");
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(out.join("scenario-financial-q1-seed4").is_dir());
}

#[test]
fn an_existing_run_directory_is_refused_untouched() {
    let root = TempDir::new().unwrap();
    let dir = scenario_dir(&root);
    let before = fs::read(dir.join("session.jsonl")).unwrap();
    let output = run(&[
        "--out",
        root.path().join("runs").to_str().unwrap(),
        "scenario",
        "--seed",
        "0",
    ]);
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("never overwritten"));
    assert_eq!(fs::read(dir.join("session.jsonl")).unwrap(), before);
}
