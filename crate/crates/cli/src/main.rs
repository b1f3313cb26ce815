//! Terminal entry points for the council kernel: cohort simulation, the
//! bundled quarterly-close walkthrough, checkpoint replay, and audit
//! traversals over stored logs.
//!
//! Every run lands in its own directory under the output root (`--out`,
//! else `COUNCIL_OUT_DIR`, else `./council-runs`), and no command ever
//! rewrites an existing log or checkpoint: a run refuses a directory that
//! already exists, and replay forks into a fresh `branch-N` directory
//! beside the original. Exit codes are a stable contract — 0 success,
//! 1 io or internal failure, 2 configuration error, 3 unknown reference,
//! 4 integrity failure.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use council_core::config::{ConfigError, SimConfig};
use council_core::harness::{
    run_cohort_sessions, FunnelStats, HarnessError, RecoveryLedger, SessionOutcome,
};
use council_core::kernel::{ControlPayload, Payload, UserVerdict};
use council_core::plan::ApprovalPolicy;
use council_core::report;
use council_core::scenario::{
    financial_close_definition, step_label, ScenarioError, ScenarioProducer, ScenarioReport,
};
use council_core::session::{run_session, Session, SessionDefinition, SessionError, SessionRun};
use council_core::store::{
    exposure_analysis, trace_backward, Checkpoint, EventKind, Ref, SessionLog, StoreError,
};

const OUT_DIR_ENV: &str = "COUNCIL_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "council-runs";
const META_FILE: &str = "meta.json";
const LOG_FILE: &str = "session.jsonl";
const CHECKPOINT_DIR: &str = "checkpoints";
const SCENARIO_NAME: &str = "financial-q1";
const SCENARIO_SESSION_ID: u64 = 1;

const AFTER_HELP: &str = "\
exit codes:
  0  success (a declined plan or an empty traversal is a normal outcome)
  1  io or internal failure
  2  configuration error
  3  unknown reference (ref string, checkpoint id, or fixture name)
  4  integrity failure (corrupt checkpoint digest or malformed log)

environment:
  COUNCIL_OUT_DIR  output root when --out is not given (default: ./council-runs)
";

#[derive(Parser)]
#[command(
    name = "council",
    version,
    about = "Stage-gated multi-agent kernel: run cohorts, run the bundled close, replay checkpoints, audit logs",
    after_help = AFTER_HELP
)]
struct Cli {
    /// Output root for new run directories
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded cohort and write per-session logs plus the funnel report
    Simulate {
        /// TOML run configuration; calibrated defaults when omitted
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,

        /// Cohort size, overriding the configured value
        #[arg(long, value_name = "N")]
        sessions: Option<u64>,

        /// Base seed, overriding the configured value
        #[arg(long, value_name = "SEED")]
        seed: Option<u64>,
    },

    /// Run the bundled quarterly-close walkthrough end to end
    Scenario {
        /// Fixture name
        #[arg(default_value = SCENARIO_NAME)]
        name: String,

        /// TOML run configuration; calibrated defaults when omitted
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,

        /// Session seed stamped on the log (the walkthrough's trace is seed-stable)
        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Ask for the plan approval on standard input: one line, anything but y declines
        #[arg(long)]
        interactive: bool,
    },

    /// Fork a stored checkpoint into a new branch directory and run it to completion
    Replay {
        /// Run directory (or its log file)
        path: PathBuf,

        /// Checkpoint id to fork; the newest when omitted
        #[arg(long, value_name = "ID")]
        checkpoint: Option<u64>,

        /// Branch number to claim; the lowest free one when omitted
        #[arg(long, value_name = "N")]
        branch: Option<u32>,
    },

    /// Print everything a stored result transitively derives from
    Trace {
        /// Log file (or a run directory holding one)
        path: PathBuf,

        /// Target ref: m9, h3, h3.total_in_usd, s7, c2, e14, in:name, cfg:key, fact:name
        target: String,
    },

    /// Print everything a stored fact transitively feeds
    Expose {
        /// Log file (or a run directory holding one)
        path: PathBuf,

        /// Source ref, same grammar as trace targets
        fact: String,
    },

    /// Recompute report tables from stored logs alone
    Report {
        /// Run directory or single log file
        path: PathBuf,
    },
}

// ============================================================================
// Errors and exit codes
// ============================================================================

/// Failures bucketed by the exit-code contract.
#[derive(Debug)]
enum CliError {
    /// Exit 1: io trouble or an unexpected internal failure.
    Failure(String),
    /// Exit 2: the configuration is malformed or out of range.
    Config(String),
    /// Exit 3: a ref, checkpoint id, or fixture name nothing matches.
    Reference(String),
    /// Exit 4: a log or checkpoint failed digest or format verification.
    Integrity(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Config(_) => 2,
            CliError::Reference(_) => 3,
            CliError::Integrity(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Failure(m)
            | CliError::Config(m)
            | CliError::Reference(m)
            | CliError::Integrity(m) => m,
        }
    }
}

fn io_err(e: io::Error) -> CliError {
    CliError::Failure(format!("io failure: {e}"))
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        match e {
            ConfigError::Io(_) => CliError::Failure(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> CliError {
        match e {
            StoreError::UnknownRef(_) => CliError::Reference(e.to_string()),
            StoreError::Io(_) => CliError::Failure(e.to_string()),
            StoreError::CorruptCheckpoint { .. }
            | StoreError::NonDenseIndex { .. }
            | StoreError::Malformed(_) => CliError::Integrity(e.to_string()),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> CliError {
        match e {
            SessionError::Store(inner) => inner.into(),
            other @ (SessionError::BadCheckpointState { .. }
            | SessionError::LogCheckpointMismatch { .. }) => {
                CliError::Integrity(other.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> CliError {
        match e {
            HarnessError::Config(inner) => inner.into(),
            HarnessError::Session(inner) => inner.into(),
            other @ HarnessError::GroundTruthMismatch { .. } => {
                CliError::Config(other.to_string())
            }
            other => CliError::Integrity(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> CliError {
        match e {
            ScenarioError::Session(inner) => inner.into(),
            other => CliError::Integrity(other.to_string()),
        }
    }
}

// ============================================================================
// Run directory layout
// ============================================================================

/// What produced a run directory, written beside its logs so later
/// commands can rebuild the exact session it came from.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RunMeta {
    Simulate {
        sessions: u64,
        replicate: u64,
        config: SimConfig,
    },
    Scenario {
        name: String,
        definition: SessionDefinition,
    },
    Replay {
        parent: String,
        checkpoint: u64,
        definition: SessionDefinition,
    },
}

/// Machine-readable mirror of a cohort run's report file.
#[derive(Serialize)]
struct CohortReport {
    funnel: FunnelStats,
    credits: RecoveryLedger,
    time: RecoveryLedger,
}

fn exists_err(path: &Path) -> CliError {
    CliError::Failure(format!(
        "{} already exists; runs are never overwritten — pick a fresh --out or remove it",
        path.display()
    ))
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    match path {
        Some(path) => Ok(SimConfig::from_path(path)?),
        None => Ok(SimConfig::default()),
    }
}

fn run_dir_of(path: &Path) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path.parent().unwrap_or(Path::new(".")).to_path_buf())
    } else if path.is_dir() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::Failure(format!("{} does not exist", path.display())))
    }
}

fn read_meta(dir: &Path) -> Result<RunMeta, CliError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Integrity(format!("malformed {}: {e}", path.display())))
}

/// Write one completed session's directory: meta, log, checkpoints, and
/// both report files. The directory must not exist yet.
fn write_run_dir(
    dir: &Path,
    meta: &RunMeta,
    run: &SessionRun,
    report_text: &str,
    report_json: &str,
) -> Result<(), CliError> {
    if dir.exists() {
        return Err(exists_err(dir));
    }
    let checkpoint_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&checkpoint_dir).map_err(io_err)?;
    fs::write(dir.join(META_FILE), report::json(meta)).map_err(io_err)?;
    run.log.write_to(&dir.join(LOG_FILE))?;
    for checkpoint in &run.checkpoints {
        let name = format!("checkpoint-{:03}.json", checkpoint.id);
        checkpoint.write_to(&checkpoint_dir.join(name))?;
    }
    fs::write(dir.join("report.txt"), report_text).map_err(io_err)?;
    fs::write(dir.join("report.json"), report_json).map_err(io_err)?;
    Ok(())
}

fn read_log_at(path: &Path) -> Result<SessionLog, CliError> {
    let file = if path.is_dir() {
        path.join(LOG_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(SessionLog::read_from(&file)?)
}

/// All session logs under a path: the file itself, a run directory's own
/// log, and any cohort logs under its `sessions/` folder, in path order.
fn collect_logs(path: &Path) -> Result<Vec<SessionLog>, CliError> {
    if path.is_file() {
        return Ok(vec![SessionLog::read_from(path)?]);
    }
    let mut files: Vec<PathBuf> = Vec::new();
    let own = path.join(LOG_FILE);
    if own.is_file() {
        files.push(own);
    }
    let sessions = path.join("sessions");
    if sessions.is_dir() {
        for entry in fs::read_dir(&sessions).map_err(io_err)? {
            let candidate = entry.map_err(io_err)?.path();
            if candidate.extension().is_some_and(|e| e == "jsonl") {
                files.push(candidate);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Failure(format!(
            "no session logs under {}",
            path.display()
        )));
    }
    files
        .iter()
        .map(|file| Ok(SessionLog::read_from(file)?))
        .collect()
}

// ============================================================================
// Terminal prompts
// ============================================================================

fn prompt_line(prompt: &str) -> Result<String, CliError> {
    print!("{prompt}");
    io::stdout().flush().map_err(io_err)?;
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line).map_err(io_err)?;
    Ok(line.trim().to_string())
}

/// Show the plan and read a one-line decision. Anything but an explicit
/// yes declines; a longer answer becomes the refusal feedback.
fn prompt_approval(definition: &SessionDefinition) -> Result<ApprovalPolicy, CliError> {
    let template = &definition.profile.template;
    println!(
        "plan {}: {} steps, {} criteria ({} at the output gate)",
        definition.query.name,
        template.steps.len(),
        template.criteria.len(),
        template.plan_criteria.len()
    );
    for step in &template.steps {
        println!("  step {}  {}", step.id.0, step_label(step.id.0));
    }
    let answer = prompt_line("approve this plan? [y/N]: ")?;
    if answer.eq_ignore_ascii_case("y") || answer.eq_ignore_ascii_case("yes") {
        Ok(ApprovalPolicy::AutoAccept)
    } else if answer.is_empty()
        || answer.eq_ignore_ascii_case("n")
        || answer.eq_ignore_ascii_case("no")
    {
        Ok(ApprovalPolicy::Refuse {
            feedback: "plan declined at the terminal".to_string(),
        })
    } else {
        Ok(ApprovalPolicy::Refuse { feedback: answer })
    }
}

fn escalation_lines(log: &SessionLog) -> Vec<String> {
    log.events()
        .iter()
        .filter_map(|event| match &event.kind {
            EventKind::EscalationRaised { reason, step } => Some(match step {
                Some(step) => format!(
                    "escalation at step {} ({}): {}",
                    step.0,
                    step_label(step.0),
                    reason
                ),
                None => format!("escalation: {reason}"),
            }),
            _ => None,
        })
        .collect()
}

fn refusal_feedback(log: &SessionLog) -> Option<String> {
    log.events().iter().find_map(|event| match &event.kind {
        EventKind::MessageSent { message } => match &message.payload {
            Payload::Control(ControlPayload::ApprovalRefused { feedback }) => {
                Some(feedback.clone())
            }
            _ => None,
        },
        _ => None,
    })
}

// ============================================================================
// Commands
// ============================================================================

fn cmd_simulate(
    config_path: Option<&Path>,
    sessions: Option<u64>,
    seed: Option<u64>,
    out_root: &Path,
) -> Result<(), CliError> {
    let mut config = load_config(config_path)?;
    if let Some(n) = sessions {
        config.cohort.sessions = n;
    }
    if let Some(base_seed) = seed {
        config.cohort.base_seed = base_seed;
    }
    config.validate()?;
    let n = config.cohort.sessions;
    let replicate = 0;
    let dir = out_root.join(format!("simulate-n{n}-seed{}", config.cohort.base_seed));
    if dir.exists() {
        return Err(exists_err(&dir));
    }

    let runs = run_cohort_sessions(n, &config, replicate)?;
    let outcomes: Vec<SessionOutcome> = runs
        .iter()
        .map(|run| SessionOutcome::from_log(&run.log))
        .collect::<Result<_, _>>()?;
    let funnel = FunnelStats::from_outcomes(&outcomes);
    let credits = RecoveryLedger::credits_from_outcomes(&outcomes);
    let time = RecoveryLedger::time_from_outcomes(&outcomes);
    let text = [
        report::funnel_table(&funnel),
        report::ledger_table(&credits),
        report::ledger_table(&time),
    ]
    .join("\n");
    let json = report::json(&CohortReport {
        funnel,
        credits,
        time,
    });

    let sessions_dir = dir.join("sessions");
    fs::create_dir_all(&sessions_dir).map_err(io_err)?;
    let meta = RunMeta::Simulate {
        sessions: n,
        replicate,
        config,
    };
    fs::write(dir.join(META_FILE), report::json(&meta)).map_err(io_err)?;
    for (index, run) in runs.iter().enumerate() {
        run.log
            .write_to(&sessions_dir.join(format!("session-{index:04}.jsonl")))?;
    }
    fs::write(dir.join("report.txt"), &text).map_err(io_err)?;
    fs::write(dir.join("report.json"), &json).map_err(io_err)?;

    print!("{text}");
    println!("\n{} session logs under {}", runs.len(), dir.display());
    Ok(())
}

/// Report files for a single-session run: the walkthrough table when it
/// completed, otherwise the verdict and any refusal feedback.
fn scenario_report_files(run: &SessionRun) -> Result<(String, String), CliError> {
    if run.verdict == UserVerdict::Approved {
        let scenario = ScenarioReport::from_log(&run.log)?;
        Ok((report::scenario_table(&scenario), report::json(&scenario)))
    } else {
        let feedback = refusal_feedback(&run.log);
        let mut text = String::from("quarterly close walkthrough\n");
        text.push_str(&format!("verdict  {}\n", run.verdict.as_str()));
        if let Some(feedback) = &feedback {
            text.push_str(&format!("plan refused: {feedback}\n"));
        }
        let json = report::json(&serde_json::json!({
            "verdict": run.verdict,
            "refusal": feedback,
        }));
        Ok((text, json))
    }
}

fn cmd_scenario(
    name: &str,
    config_path: Option<&Path>,
    seed: u64,
    interactive: bool,
    out_root: &Path,
) -> Result<(), CliError> {
    if name != SCENARIO_NAME {
        return Err(CliError::Reference(format!(
            "unknown scenario {name:?}; the bundled fixture is {SCENARIO_NAME:?}"
        )));
    }
    let dir = out_root.join(format!("scenario-{name}-seed{seed}"));
    if dir.exists() {
        return Err(exists_err(&dir));
    }
    let config = load_config(config_path)?;
    let mut definition = financial_close_definition(SCENARIO_SESSION_ID, seed, &config);
    if interactive {
        definition.approval_policy = prompt_approval(&definition)?;
    }

    let producer = ScenarioProducer::for_definition(&definition);
    let run = run_session(definition.clone(), producer)?;

    let escalations = escalation_lines(&run.log);
    for line in &escalations {
        println!("{line}");
    }
    if interactive && !escalations.is_empty() {
        prompt_line("acknowledge escalations [enter]: ")?;
    }

    let (text, json) = scenario_report_files(&run)?;
    let meta = RunMeta::Scenario {
        name: name.to_string(),
        definition,
    };
    write_run_dir(&dir, &meta, &run, &text, &json)?;
    print!("{text}");
    println!("\nwrote {}", dir.display());
    Ok(())
}

/// The checkpoint to fork: the requested id, or the newest one on disk.
fn load_checkpoint(dir: &Path, id: Option<u64>) -> Result<Checkpoint, CliError> {
    let checkpoint_dir = dir.join(CHECKPOINT_DIR);
    if !checkpoint_dir.is_dir() {
        return Err(CliError::Reference(format!(
            "{} holds no checkpoints",
            dir.display()
        )));
    }
    let id = match id {
        Some(id) => id,
        None => {
            let mut newest = None;
            for entry in fs::read_dir(&checkpoint_dir).map_err(io_err)? {
                let name = entry.map_err(io_err)?.file_name();
                let parsed = name
                    .to_str()
                    .and_then(|n| n.strip_prefix("checkpoint-"))
                    .and_then(|n| n.strip_suffix(".json"))
                    .and_then(|n| n.parse::<u64>().ok());
                if let Some(found) = parsed {
                    newest = Some(newest.map_or(found, |best: u64| best.max(found)));
                }
            }
            newest.ok_or_else(|| {
                CliError::Reference(format!("{} holds no checkpoints", dir.display()))
            })?
        }
    };
    let path = checkpoint_dir.join(format!("checkpoint-{id:03}.json"));
    if !path.is_file() {
        return Err(CliError::Reference(format!(
            "no checkpoint {id} under {}",
            checkpoint_dir.display()
        )));
    }
    Ok(Checkpoint::read_from(&path)?)
}

fn next_free_branch(dir: &Path) -> u32 {
    (1..)
        .find(|n| !dir.join(format!("branch-{n}")).exists())
        .expect("some branch number is free")
}

fn cmd_replay(path: &Path, checkpoint: Option<u64>, branch: Option<u32>) -> Result<(), CliError> {
    let dir = run_dir_of(path)?;
    let definition = match read_meta(&dir)? {
        RunMeta::Scenario { definition, .. } | RunMeta::Replay { definition, .. } => definition,
        RunMeta::Simulate { .. } => {
            return Err(CliError::Reference(
                "cohort runs keep no checkpoints; replay targets scenario runs".to_string(),
            ));
        }
    };
    let log = SessionLog::read_from(&dir.join(LOG_FILE))?;
    let checkpoint = load_checkpoint(&dir, checkpoint)?;
    let n = branch.unwrap_or_else(|| next_free_branch(&dir));
    let branch_dir = dir.join(format!("branch-{n}"));
    if branch_dir.exists() {
        return Err(exists_err(&branch_dir));
    }

    let forked = log.fork(checkpoint.at_event, n);
    let producer = ScenarioProducer::for_definition(&definition);
    let mut session = Session::restore(definition.clone(), producer, &checkpoint, forked)?;
    let verdict = session.run()?;
    let run = session.into_run(verdict);

    println!(
        "forked {} at event {} (checkpoint {}, {})",
        run.log.header.branch, checkpoint.at_event, checkpoint.id, checkpoint.label
    );
    let (text, json) = scenario_report_files(&run)?;
    let meta = RunMeta::Replay {
        parent: dir.display().to_string(),
        checkpoint: checkpoint.id,
        definition,
    };
    write_run_dir(&branch_dir, &meta, &run, &text, &json)?;
    print!("{text}");
    println!("\nwrote {}", branch_dir.display());
    Ok(())
}

fn cmd_trace(path: &Path, target: &str) -> Result<(), CliError> {
    let log = read_log_at(path)?;
    let target: Ref = target.parse().map_err(CliError::Reference)?;
    let graph = trace_backward(&log, &target)?;
    println!("upstream of {target}");
    println!("  nodes ({}):", graph.nodes.len());
    for node in &graph.nodes {
        println!("    {node}");
    }
    println!("  edges ({}):", graph.edges.len());
    for (src, dst) in &graph.edges {
        println!("    {src} -> {dst}");
    }
    Ok(())
}

fn cmd_expose(path: &Path, fact: &str) -> Result<(), CliError> {
    let log = read_log_at(path)?;
    let fact: Ref = fact.parse().map_err(CliError::Reference)?;
    let reached = exposure_analysis(&log, &fact)?;
    println!("downstream of {fact} ({} refs):", reached.len());
    for node in &reached {
        println!("  {node}");
    }
    Ok(())
}

fn cmd_report(path: &Path) -> Result<(), CliError> {
    let logs = collect_logs(path)?;
    if logs.len() == 1 {
        if let Ok(scenario) = ScenarioReport::from_log(&logs[0]) {
            print!("{}", report::scenario_table(&scenario));
            return Ok(());
        }
    }
    let outcomes: Vec<SessionOutcome> = logs
        .iter()
        .map(SessionOutcome::from_log)
        .collect::<Result<_, _>>()?;
    let funnel = FunnelStats::from_outcomes(&outcomes);
    let credits = RecoveryLedger::credits_from_outcomes(&outcomes);
    let time = RecoveryLedger::time_from_outcomes(&outcomes);
    let text = [
        report::funnel_table(&funnel),
        report::ledger_table(&credits),
        report::ledger_table(&time),
    ]
    .join("\n");
    print!("{text}");
    Ok(())
}

// ============================================================================
// Entry point
// ============================================================================

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let out_root = cli.out.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    });
    match cli.command {
        Command::Simulate {
            config,
            sessions,
            seed,
        } => cmd_simulate(config.as_deref(), sessions, seed, &out_root),
        Command::Scenario {
            name,
            config,
            seed,
            interactive,
        } => cmd_scenario(&name, config.as_deref(), seed, interactive, &out_root),
        Command::Replay {
            path,
            checkpoint,
            branch,
        } => cmd_replay(&path, checkpoint, branch),
        Command::Trace { path, target } => cmd_trace(&path, &target),
        Command::Expose { path, fact } => cmd_expose(&path, &fact),
        Command::Report { path } => cmd_report(&path),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {}", error.message());
            ExitCode::from(error.code())
        }
    }
}
