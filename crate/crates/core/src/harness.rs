//! Monte Carlo cohorts, funnel statistics, recovery-cost ledgers, and the
//! architecture comparison runner.
//!
//! Every aggregate here is computed from session event logs, never from the
//! closed-form cascade model: a cohort drives full kernel sessions and then
//! reads each log back through [`SessionOutcome::from_log`]. That keeps the
//! statistics honest — the formula in [`crate::cascade`] is something the
//! simulation can be checked against, not a shortcut it takes.
//!
//! Money and time aggregate as integers (milli-credits, milliseconds,
//! milli-hours) with half-up rounding applied exactly once, at display
//! precision, so ledger output is reproducible to the digit.

use crate::artifact::DefectKind;
use crate::cascade::{CritiqueLayer, Verdict};
use crate::config::{CheckpointCadence, ConfigError, SimConfig};
use crate::kernel::{ControlPayload, Payload, UserVerdict};
use crate::session::{run_session, SessionDefinition, SessionError, SessionRun, WriterProducer};
use crate::store::{EventKind, SessionLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// User idle gaps strictly longer than this are excluded from time totals
/// at aggregation time; the events themselves record the full gap.
pub const IDLE_EXCLUSION_THRESHOLD_MS: u64 = 30_000;

/// Seed lane for council trials in the architecture comparison, keeping
/// them off the cohort replicate lanes.
const COUNCIL_SEED_LANE: u64 = 0xC0;

/// How many parallel workers the sub-agent architecture shards a task
/// across. The merge applies no conflict detection, so one wrong shard
/// corrupts the merged answer.
pub const SUB_AGENT_FANOUT: u32 = 2;

// ============================================================================
// Seed derivation
// ============================================================================

/// SplitMix64 finalizer: the standard add-xor-multiply mix with full 64-bit
/// avalanche, used to derive independent session seeds from a base seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-session seed: three chained mixes over (base, lane, index) so that
/// neighboring replicates and neighboring session indices land on
/// uncorrelated streams.
pub fn derive_session_seed(base_seed: u64, lane: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed).wrapping_add(lane)).wrapping_add(index))
}

// ============================================================================
// Session outcomes, read back from logs
// ============================================================================

/// Everything the reporting layer needs to know about one finished session,
/// extracted from its event log alone. Integer fields keep milli-credit and
/// millisecond precision; the seconds view is derived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: u64,
    pub seed: u64,
    /// Approved with no rejection anywhere.
    pub first_pass: bool,
    /// Recovered inside the team loop: inner rejections, no outer ones.
    pub inner_caught: bool,
    /// Which inner reviewer fired first, when the session was inner-caught.
    pub inner_caught_by: Option<DefectKind>,
    /// Recovered at the output gate: at least one outer rejection, approved.
    pub outer_caught: bool,
    pub user_verdict: UserVerdict,
    /// Rejection rounds beyond the first attempt, inner and outer combined.
    pub extra_iterations: u32,
    pub credits_total_milli: i64,
    pub credits_recovery_milli: i64,
    /// Wall time plus user idle gaps at or under the exclusion threshold.
    pub time_total_ms: u64,
    /// Wall time attributed to recovery work (attempts after a rejection).
    pub time_recovery_ms: u64,
}

impl SessionOutcome {
    /// Fold one event log into an outcome. The user's decision is the last
    /// user-decision control message; costs come from event attribution;
    /// idle gaps above [`IDLE_EXCLUSION_THRESHOLD_MS`] are dropped.
    pub fn from_log(log: &SessionLog) -> Result<SessionOutcome, HarnessError> {
        let mut user_verdict = None;
        let mut inner_rejects: u32 = 0;
        let mut outer_rejects: u32 = 0;
        let mut first_inner_layer: Option<CritiqueLayer> = None;
        let mut credits_total_milli: i64 = 0;
        let mut credits_recovery_milli: i64 = 0;
        let mut time_total_ms: u64 = 0;
        let mut time_recovery_ms: u64 = 0;

        for event in log.events() {
            time_total_ms += event.wall_ms;
            if event.idle_ms <= IDLE_EXCLUSION_THRESHOLD_MS {
                time_total_ms += event.idle_ms;
            }
            credits_total_milli += event.credits_milli;
            match &event.kind {
                EventKind::VerdictIssued {
                    verdict: Verdict::Reject,
                    layer,
                    ..
                } => match layer {
                    CritiqueLayer::L1Code | CritiqueLayer::L1Chart => {
                        inner_rejects += 1;
                        first_inner_layer.get_or_insert(*layer);
                    }
                    CritiqueLayer::L2Output => outer_rejects += 1,
                },
                EventKind::CostIncurred { recovery: true, .. } => {
                    credits_recovery_milli += event.credits_milli;
                    time_recovery_ms += event.wall_ms;
                }
                EventKind::MessageSent { message } => {
                    if let Payload::Control(ControlPayload::UserDecision { verdict }) =
                        &message.payload
                    {
                        user_verdict = Some(*verdict);
                    }
                }
                _ => {}
            }
        }

        let user_verdict = user_verdict.ok_or(HarnessError::NoUserDecision {
            session_id: log.header.session_id,
        })?;
        let extra_iterations = inner_rejects + outer_rejects;
        let approved = user_verdict == UserVerdict::Approved;
        let inner_caught = approved && inner_rejects > 0 && outer_rejects == 0;
        Ok(SessionOutcome {
            session_id: log.header.session_id,
            seed: log.header.seed,
            first_pass: approved && extra_iterations == 0,
            inner_caught,
            inner_caught_by: if inner_caught {
                first_inner_layer.map(|layer| layer.catchable_kind())
            } else {
                None
            },
            outer_caught: approved && outer_rejects > 0,
            user_verdict,
            extra_iterations,
            credits_total_milli,
            credits_recovery_milli,
            time_total_ms,
            time_recovery_ms,
        })
    }

    pub fn time_total_seconds(&self) -> f64 {
        self.time_total_ms as f64 / 1_000.0
    }

    pub fn time_recovery_seconds(&self) -> f64 {
        self.time_recovery_ms as f64 / 1_000.0
    }

    /// Recovery bucket, when the session needed recovery at all.
    pub fn recovery_level(&self) -> Option<RecoveryLevel> {
        if self.user_verdict == UserVerdict::ReplanRequested {
            return None;
        }
        RecoveryLevel::classify(self.extra_iterations)
    }
}

// ============================================================================
// Funnel statistics
// ============================================================================

/// Pooled counts over a batch of outcomes, bucketed the way the layered
/// funnel reports them. Replan-requested sessions never enter the funnel:
/// they end before (or instead of) cascade arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStats {
    pub sessions: u64,
    pub replan_requests: u64,
    /// Sessions in the funnel: everything except replan requests.
    pub funnel_sessions: u64,
    pub first_pass: u64,
    pub inner_caught: u64,
    pub inner_caught_code: u64,
    pub inner_caught_chart: u64,
    pub outer_caught: u64,
    pub user_rejected: u64,
}

impl FunnelStats {
    pub fn from_outcomes(outcomes: &[SessionOutcome]) -> FunnelStats {
        let mut stats = FunnelStats {
            sessions: outcomes.len() as u64,
            replan_requests: 0,
            funnel_sessions: 0,
            first_pass: 0,
            inner_caught: 0,
            inner_caught_code: 0,
            inner_caught_chart: 0,
            outer_caught: 0,
            user_rejected: 0,
        };
        for outcome in outcomes {
            if outcome.user_verdict == UserVerdict::ReplanRequested {
                stats.replan_requests += 1;
                continue;
            }
            stats.funnel_sessions += 1;
            if outcome.first_pass {
                stats.first_pass += 1;
            } else if outcome.inner_caught {
                stats.inner_caught += 1;
                match outcome.inner_caught_by {
                    Some(DefectKind::Chart) => stats.inner_caught_chart += 1,
                    _ => stats.inner_caught_code += 1,
                }
            } else if outcome.outer_caught {
                stats.outer_caught += 1;
            }
            if outcome.user_verdict == UserVerdict::Rejected {
                stats.user_rejected += 1;
            }
        }
        stats
    }

    /// Sessions that needed any recovery: the funnel minus first passes.
    pub fn needed_recovery(&self) -> u64 {
        self.funnel_sessions - self.first_pass
    }

    fn pct(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    }

    /// Share of funnel sessions approved with no rejection anywhere.
    pub fn first_pass_pct(&self) -> f64 {
        Self::pct(self.first_pass, self.funnel_sessions)
    }

    /// Share of recovery-needing sessions the inner loop caught.
    pub fn inner_catch_pct(&self) -> f64 {
        Self::pct(self.inner_caught, self.needed_recovery())
    }

    /// Share of inner-loop escapes the output gate caught.
    pub fn outer_catch_pct(&self) -> f64 {
        Self::pct(self.outer_caught, self.outer_caught + self.user_rejected)
    }

    /// Share of funnel sessions whose defect reached the user.
    pub fn residual_pct(&self) -> f64 {
        Self::pct(self.user_rejected, self.funnel_sessions)
    }
}

/// Funnel percentages averaged across independent cohort replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelAverages {
    pub replicates: u64,
    pub sessions_per_replicate: u64,
    pub mean_first_pass_pct: f64,
    pub mean_inner_catch_pct: f64,
    pub mean_outer_catch_pct: f64,
    pub mean_residual_pct: f64,
}

// ============================================================================
// Recovery ledgers
// ============================================================================

/// Cost bucket by how many extra iterations a session burned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryLevel {
    Level1,
    Level2,
    Level3,
}

impl RecoveryLevel {
    pub const ALL: [RecoveryLevel; 3] =
        [RecoveryLevel::Level1, RecoveryLevel::Level2, RecoveryLevel::Level3];

    /// Bucket a session by extra iterations; zero means no recovery.
    pub fn classify(extra_iterations: u32) -> Option<RecoveryLevel> {
        match extra_iterations {
            0 => None,
            1..=2 => Some(RecoveryLevel::Level1),
            3..=5 => Some(RecoveryLevel::Level2),
            _ => Some(RecoveryLevel::Level3),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RecoveryLevel::Level1 => "Level 1 (1-2 extra)",
            RecoveryLevel::Level2 => "Level 2 (3-5 extra)",
            RecoveryLevel::Level3 => "Level 3 (6+ extra)",
        }
    }
}

/// Which quantity a ledger aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerUnit {
    Credits,
    Hours,
}

impl LedgerUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            LedgerUnit::Credits => "credits",
            LedgerUnit::Hours => "hours",
        }
    }
}

/// One recovery level's aggregate: session count, total spend, and the
/// portion attributable to recovery work. Values are integer thousandths
/// of the display unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub level: RecoveryLevel,
    pub sessions: u64,
    pub total_milli: i64,
    pub recovery_milli: i64,
}

/// Column sums over a ledger's rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub sessions: u64,
    pub total_milli: i64,
    pub recovery_milli: i64,
}

/// Per-level cost table over the sessions that needed recovery. Sessions
/// with zero extra iterations are excluded entirely, and so are replan
/// requests (they leave the funnel before any recovery accounting).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryLedger {
    pub unit: LedgerUnit,
    pub rows: Vec<LedgerRow>,
}

impl RecoveryLedger {
    /// Build a ledger from pre-aggregated per-level rows (the ingestion
    /// path used by bundled fixtures).
    pub fn from_rows(unit: LedgerUnit, rows: Vec<LedgerRow>) -> RecoveryLedger {
        RecoveryLedger { unit, rows }
    }

    /// Credit ledger over simulated outcomes.
    pub fn credits_from_outcomes(outcomes: &[SessionOutcome]) -> RecoveryLedger {
        Self::from_outcomes(LedgerUnit::Credits, outcomes, |o| {
            (o.credits_total_milli, o.credits_recovery_milli)
        })
    }

    /// Time ledger over simulated outcomes. Each session's milliseconds
    /// convert to milli-hours once, half-up, before any summation, so row
    /// sums and whole-table folds agree to the last integer.
    pub fn time_from_outcomes(outcomes: &[SessionOutcome]) -> RecoveryLedger {
        Self::from_outcomes(LedgerUnit::Hours, outcomes, |o| {
            (ms_to_milli_hours(o.time_total_ms), ms_to_milli_hours(o.time_recovery_ms))
        })
    }

    fn from_outcomes(
        unit: LedgerUnit,
        outcomes: &[SessionOutcome],
        amounts: impl Fn(&SessionOutcome) -> (i64, i64),
    ) -> RecoveryLedger {
        let mut rows: Vec<LedgerRow> = RecoveryLevel::ALL
            .iter()
            .map(|&level| LedgerRow {
                level,
                sessions: 0,
                total_milli: 0,
                recovery_milli: 0,
            })
            .collect();
        for outcome in outcomes {
            let Some(level) = outcome.recovery_level() else {
                continue;
            };
            let row = &mut rows[RecoveryLevel::ALL
                .iter()
                .position(|&l| l == level)
                .expect("level present")];
            let (total, recovery) = amounts(outcome);
            row.sessions += 1;
            row.total_milli += total;
            row.recovery_milli += recovery;
        }
        RecoveryLedger { unit, rows }
    }

    pub fn totals(&self) -> LedgerTotals {
        let mut totals = LedgerTotals {
            sessions: 0,
            total_milli: 0,
            recovery_milli: 0,
        };
        for row in &self.rows {
            totals.sessions += row.sessions;
            totals.total_milli += row.total_milli;
            totals.recovery_milli += row.recovery_milli;
        }
        totals
    }

    pub fn row(&self, level: RecoveryLevel) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.level == level)
    }
}

/// Milliseconds to milli-hours (thousandths of an hour), half-up.
pub fn ms_to_milli_hours(ms: u64) -> i64 {
    ((ms + 1_800) / 3_600) as i64
}

/// Milli-units to tenths of a unit, rounded half up: the single rounding
/// step between exact integer aggregation and one-decimal display.
pub fn milli_to_tenths(milli: i64) -> i64 {
    let m = milli as i128;
    let tenths = if m >= 0 { (m + 50) / 100 } else { -((-m + 50) / 100) };
    tenths as i64
}

/// Share of `part_milli` in `whole_milli` as tenths of a percent, half-up.
pub fn share_pct_tenths(part_milli: i64, whole_milli: i64) -> i64 {
    if whole_milli == 0 {
        return 0;
    }
    let scaled = part_milli as i128 * 1_000;
    ((scaled + whole_milli as i128 / 2) / whole_milli as i128) as i64
}

/// Render tenths as a one-decimal number with thousands separators,
/// e.g. 203259 → "20,325.9".
pub fn format_tenths(tenths: i64) -> String {
    let negative = tenths < 0;
    let magnitude = tenths.unsigned_abs();
    let whole = magnitude / 10;
    let frac = magnitude % 10;
    let digits = whole.to_string();
    let mut grouped = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{}{grouped}.{frac}", if negative { "-" } else { "" })
}

// ============================================================================
// Cohort running
// ============================================================================

/// A finished cohort: per-session outcomes plus the aggregates reports use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRun {
    pub outcomes: Vec<SessionOutcome>,
    pub funnel: FunnelStats,
    pub credits: RecoveryLedger,
    pub time: RecoveryLedger,
}

impl CohortRun {
    pub fn from_outcomes(outcomes: Vec<SessionOutcome>) -> CohortRun {
        let funnel = FunnelStats::from_outcomes(&outcomes);
        let credits = RecoveryLedger::credits_from_outcomes(&outcomes);
        let time = RecoveryLedger::time_from_outcomes(&outcomes);
        CohortRun {
            outcomes,
            funnel,
            credits,
            time,
        }
    }
}

fn check_cohort_args(n: u64, config: &SimConfig) -> Result<(), HarnessError> {
    config.validate()?;
    if n == 0 {
        return Err(HarnessError::Config(ConfigError::OutOfRange {
            field: "cohort.sessions",
            value: 0.0,
            expected: "a count of at least 1",
        }));
    }
    Ok(())
}

/// One cohort session, outcome only. Checkpointing is switched off here:
/// cohort statistics never replay, and the log is dropped as soon as the
/// outcome is extracted from it.
fn run_one_outcome(
    config: &SimConfig,
    replicate: u64,
    index: u64,
) -> Result<SessionOutcome, HarnessError> {
    let seed = derive_session_seed(config.cohort.base_seed, replicate, index);
    let mut definition = SessionDefinition::cohort(index, seed, config.clone());
    definition.config.session.checkpoint_cadence = CheckpointCadence::Off;
    let run = run_session(definition, WriterProducer)?;
    SessionOutcome::from_log(&run.log)
}

/// One cohort session with its full log and checkpoints retained, honoring
/// the configured checkpoint cadence.
fn run_one_session(
    config: &SimConfig,
    replicate: u64,
    index: u64,
) -> Result<SessionRun, HarnessError> {
    let seed = derive_session_seed(config.cohort.base_seed, replicate, index);
    let definition = SessionDefinition::cohort(index, seed, config.clone());
    Ok(run_session(definition, WriterProducer)?)
}

#[cfg(feature = "parallel")]
fn collect_outcomes(
    n: u64,
    config: &SimConfig,
    replicate: u64,
) -> Result<Vec<SessionOutcome>, HarnessError> {
    (0..n)
        .into_par_iter()
        .map(|index| run_one_outcome(config, replicate, index))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn collect_outcomes(
    n: u64,
    config: &SimConfig,
    replicate: u64,
) -> Result<Vec<SessionOutcome>, HarnessError> {
    (0..n)
        .map(|index| run_one_outcome(config, replicate, index))
        .collect()
}

/// Drive `n` full kernel sessions on the given replicate lane and fold
/// their logs into outcomes and aggregates. Sessions are independent;
/// aggregation order is session index, so the result is identical whether
/// the sessions ran in parallel or not.
pub fn run_cohort(n: u64, config: &SimConfig, replicate: u64) -> Result<CohortRun, HarnessError> {
    check_cohort_args(n, config)?;
    Ok(CohortRun::from_outcomes(collect_outcomes(n, config, replicate)?))
}

/// [`run_cohort`] forced onto one thread; the baseline the parallel path
/// is benchmarked against, and the fallback when the `parallel` feature is
/// disabled.
pub fn run_cohort_sequential(
    n: u64,
    config: &SimConfig,
    replicate: u64,
) -> Result<CohortRun, HarnessError> {
    check_cohort_args(n, config)?;
    let outcomes = (0..n)
        .map(|index| run_one_outcome(config, replicate, index))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CohortRun::from_outcomes(outcomes))
}

/// Run a cohort keeping every session's full log and checkpoints, for
/// audits, persistence, and property tests. Sequential by design: callers
/// that want this much data rarely want it raced.
pub fn run_cohort_sessions(
    n: u64,
    config: &SimConfig,
    replicate: u64,
) -> Result<Vec<SessionRun>, HarnessError> {
    check_cohort_args(n, config)?;
    (0..n)
        .map(|index| run_one_session(config, replicate, index))
        .collect()
}

/// Run `replicates` independent cohorts of `n` sessions each and average
/// their funnel percentages, replicate by replicate.
pub fn average_funnel(
    n: u64,
    config: &SimConfig,
    replicates: u64,
) -> Result<FunnelAverages, HarnessError> {
    check_cohort_args(n, config)?;
    if replicates == 0 {
        return Err(HarnessError::Config(ConfigError::OutOfRange {
            field: "cohort.seeds",
            value: 0.0,
            expected: "a count of at least 1",
        }));
    }
    #[cfg(feature = "parallel")]
    let per_replicate: Vec<FunnelStats> = (0..replicates)
        .into_par_iter()
        .map(|replicate| {
            collect_outcomes(n, config, replicate)
                .map(|outcomes| FunnelStats::from_outcomes(&outcomes))
        })
        .collect::<Result<_, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_replicate: Vec<FunnelStats> = (0..replicates)
        .map(|replicate| {
            collect_outcomes(n, config, replicate)
                .map(|outcomes| FunnelStats::from_outcomes(&outcomes))
        })
        .collect::<Result<_, _>>()?;

    let count = replicates as f64;
    Ok(FunnelAverages {
        replicates,
        sessions_per_replicate: n,
        mean_first_pass_pct: per_replicate.iter().map(FunnelStats::first_pass_pct).sum::<f64>()
            / count,
        mean_inner_catch_pct: per_replicate
            .iter()
            .map(FunnelStats::inner_catch_pct)
            .sum::<f64>()
            / count,
        mean_outer_catch_pct: per_replicate
            .iter()
            .map(FunnelStats::outer_catch_pct)
            .sum::<f64>()
            / count,
        mean_residual_pct: per_replicate.iter().map(FunnelStats::residual_pct).sum::<f64>()
            / count,
    })
}

// ============================================================================
// Architecture comparison
// ============================================================================

/// The task both architectures are measured on: its single ground-truth
/// answer, in cents, computed from the comparison fixture's tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparativeTask {
    pub ground_truth_cents: i64,
}

/// Execution architecture under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    /// One agent, tools chained directly, no review of any kind.
    ToolChain,
    /// The single agent re-examines its own answer and may flip it.
    SelfVerify,
    /// Parallel workers over disjoint shards, merged without conflict
    /// detection: the merge is right only when every shard is.
    SubAgent,
    /// The full kernel: writers behind layered critics with veto authority.
    Council,
}

impl ArchMode {
    pub fn label(&self) -> &'static str {
        match self {
            ArchMode::ToolChain => "single agent (tool chain)",
            ArchMode::SelfVerify => "single agent + self-verify",
            ArchMode::SubAgent => "parallel sub-agents",
            ArchMode::Council => "organizational council",
        }
    }
}

/// One architecture's measured row: trials, hits, and mean latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchRow {
    pub mode: ArchMode,
    pub trials: u64,
    pub correct: u64,
    pub mean_latency_ms: u64,
}

impl ArchRow {
    pub fn accuracy_pct(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.trials as f64
        }
    }
}

/// Accuracy and latency across architectures on one fixed task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub ground_truth_cents: i64,
    pub rows: Vec<ArchRow>,
}

impl Comparison {
    pub fn row(&self, mode: ArchMode) -> &ArchRow {
        self.rows
            .iter()
            .find(|r| r.mode == mode)
            .expect("every mode has a row")
    }
}

/// Compare architectures on the fixed task. The single-agent, self-verify,
/// and sub-agent modes draw per-trial correctness straight from the
/// configured error rate (there is nothing else in those architectures to
/// simulate); council trials run the full kernel with the writer error
/// rate set to the single-agent rate, and a trial counts as correct only
/// when the session ends user-approved. Self-verify re-examines the
/// single-agent baseline answers trial for trial and applies the
/// configured flip probabilities.
pub fn compare_architectures(
    task: ComparativeTask,
    config: &SimConfig,
) -> Result<Comparison, HarnessError> {
    config.validate()?;
    let comparative = &config.comparative;
    if task.ground_truth_cents != comparative.discrepancy_cents {
        return Err(HarnessError::GroundTruthMismatch {
            fixture_cents: task.ground_truth_cents,
            config_cents: comparative.discrepancy_cents,
        });
    }
    let error = comparative.single_agent_error;
    let costs = &config.costs;

    // Single agent: one writer call per trial, nobody checks the answer.
    let mut single_rng = ChaCha8Rng::seed_from_u64(comparative.seed);
    single_rng.set_stream(1);
    let baseline: Vec<bool> = (0..comparative.single_trials)
        .map(|_| single_rng.gen::<f64>() >= error)
        .collect();
    let single = ArchRow {
        mode: ArchMode::ToolChain,
        trials: comparative.single_trials,
        correct: baseline.iter().filter(|&&c| c).count() as u64,
        mean_latency_ms: costs.writer_time_ms,
    };

    // Self-verify: the same answers re-examined by their own author.
    let mut self_rng = ChaCha8Rng::seed_from_u64(comparative.seed);
    self_rng.set_stream(2);
    let self_correct = baseline
        .iter()
        .filter(|&&was_correct| {
            let flip_p = if was_correct {
                comparative.flip_correct_to_wrong
            } else {
                comparative.flip_wrong_to_right
            };
            let flipped = self_rng.gen::<f64>() < flip_p;
            was_correct != flipped
        })
        .count() as u64;
    let self_verify = ArchRow {
        mode: ArchMode::SelfVerify,
        trials: comparative.single_trials,
        correct: self_correct,
        mean_latency_ms: costs.writer_time_ms * 2,
    };

    // Sub-agents: shards run in parallel (latency of one writer plus the
    // merge), but an undetected conflict in any shard corrupts the merge.
    let mut sub_rng = ChaCha8Rng::seed_from_u64(comparative.seed);
    sub_rng.set_stream(3);
    let sub_correct = (0..comparative.single_trials)
        .filter(|_| (0..SUB_AGENT_FANOUT).all(|_| sub_rng.gen::<f64>() >= error))
        .count() as u64;
    let sub_agent = ArchRow {
        mode: ArchMode::SubAgent,
        trials: comparative.single_trials,
        correct: sub_correct,
        mean_latency_ms: costs.writer_time_ms + costs.executor_time_ms,
    };

    // Council: full kernel sessions, writer error pinned to the single-agent
    // rate, replan draws off so every trial reaches a user verdict.
    let mut council_config = config.clone();
    council_config.rates.error = error;
    council_config.rates.replan = 0.0;
    council_config.session.checkpoint_cadence = CheckpointCadence::Off;
    let mut council_correct = 0u64;
    let mut council_wall_ms = 0u64;
    for trial in 0..comparative.council_trials {
        let seed = derive_session_seed(comparative.seed, COUNCIL_SEED_LANE, trial);
        let definition = SessionDefinition::cohort(trial, seed, council_config.clone());
        let run = run_session(definition, WriterProducer)?;
        if run.verdict == UserVerdict::Approved {
            council_correct += 1;
        }
        council_wall_ms += run.log.events().iter().map(|e| e.wall_ms).sum::<u64>();
    }
    let council = ArchRow {
        mode: ArchMode::Council,
        trials: comparative.council_trials,
        correct: council_correct,
        mean_latency_ms: (council_wall_ms + comparative.council_trials / 2)
            / comparative.council_trials,
    };

    Ok(Comparison {
        ground_truth_cents: task.ground_truth_cents,
        rows: vec![single, self_verify, sub_agent, council],
    })
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("session {session_id} log ended without a user decision")]
    NoUserDecision { session_id: u64 },
    #[error(
        "comparison fixture ground truth is {fixture_cents} cents but config declares {config_cents}"
    )]
    GroundTruthMismatch { fixture_cents: i64, config_cents: i64 },
}
