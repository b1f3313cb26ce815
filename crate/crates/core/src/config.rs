//! Run configuration: TOML-loadable knobs with calibrated defaults.
//!
//! The default rate constants are derived from an observed 522-session
//! funnel (embedded below as integer counts) rather than written out as
//! magic decimals, so the derivation is checkable: error and catch rates
//! are straight count ratios, and the retry persistence is a one-parameter
//! truncated-geometric fit to the recovery-level bucket counts, solved by
//! bisection on the top bucket's share.
//!
//! Unknown keys are rejected, and every section may be omitted — a partial
//! file overrides only what it names. All validation errors surface before
//! any session runs.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Observed session funnel used for calibration, as raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunnelCounts {
    pub sessions: u64,
    pub first_pass: u64,
    pub needed_recovery: u64,
    pub inner_caught: u64,
    pub inner_caught_code: u64,
    pub inner_caught_chart: u64,
    pub escaped_inner: u64,
    pub outer_caught: u64,
    pub user_rejected: u64,
    pub replan_requests: u64,
    /// Recovery sessions by extra iterations: 1–2, 3–5, 6+.
    pub level_sessions: [u64; 3],
}

/// The observed funnel every default rate is derived from.
pub const OBSERVED_FUNNEL: FunnelCounts = FunnelCounts {
    sessions: 522,
    first_pass: 130,
    needed_recovery: 392,
    inner_caught: 344,
    inner_caught_code: 337,
    inner_caught_chart: 7,
    escaped_inner: 48,
    outer_caught: 7,
    user_rejected: 41,
    replan_requests: 30,
    level_sessions: [157, 126, 109],
};

fn ratio(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

/// Fit the retry-persistence probability q of a truncated geometric
/// (extra iterations k ≥ 1 with P(k) = q^(k-1)·(1-q)) to recovery-level
/// bucket counts by matching the top bucket: P(k ≥ 6) = q^5. Solved by
/// bisection; deterministic to the last bit.
pub fn fit_persistence(levels: [u64; 3]) -> f64 {
    let total: u64 = levels.iter().sum();
    let top_share = ratio(levels[2], total);
    let f = |q: f64| q * q * q * q * q - top_share;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

/// How many sessions to run and from which seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub sessions: u64,
    pub seeds: u64,
    pub base_seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            sessions: OBSERVED_FUNNEL.sessions,
            seeds: 200,
            base_seed: 2025,
        }
    }
}

/// Stochastic behavior of the stand-in agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateConfig {
    /// Chance a fresh artifact carries a defect.
    pub error: f64,
    /// Chance a defect is of a class the inner critics can see.
    pub inner_detectable: f64,
    /// Chance an inner-invisible defect is visible at the output gate.
    pub outer_detectable: f64,
    /// Split of inner-visible defects that are chart rather than code.
    pub chart_share: f64,
    /// Chance a caught defect survives one repair attempt.
    pub persistence: f64,
    /// Chance a session's query is unplannable and escalates to a replan.
    pub replan: f64,
    /// Coupling between inner and outer visibility draws (0 = independent).
    pub correlation: f64,
    /// Critic false-positive rate on clean artifacts.
    pub false_positive: f64,
    /// Error rate of the senior tier relative to junior (multiplier).
    pub senior_error_factor: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        let f = OBSERVED_FUNNEL;
        RateConfig {
            error: ratio(f.needed_recovery, f.sessions),
            inner_detectable: ratio(f.inner_caught, f.needed_recovery),
            outer_detectable: ratio(f.outer_caught, f.escaped_inner),
            chart_share: ratio(f.inner_caught_chart, f.inner_caught),
            persistence: fit_persistence(f.level_sessions),
            replan: ratio(f.replan_requests, f.sessions),
            correlation: 0.0,
            false_positive: 0.0,
            senior_error_factor: 0.5,
        }
    }
}

/// When the orchestrator takes checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointCadence {
    /// No automatic checkpoints.
    Off,
    /// At every phase boundary.
    PhaseBoundaries,
    /// At phase boundaries and before every verdict decision.
    Decisions,
}

/// Loop bounds and orchestration knobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionTuning {
    /// Inner-loop retries per step before escalation.
    pub max_inner_retries: u32,
    /// Full re-executions after an output-gate rejection before escalation.
    pub re_execution_cap: u32,
    /// Consecutive rejections before the writer is escalated a tier.
    pub tier_escalation_after: u32,
    pub checkpoint_cadence: CheckpointCadence,
    pub sample_row_cap: usize,
}

impl Default for SessionTuning {
    fn default() -> Self {
        SessionTuning {
            // Sized so retry exhaustion is rare enough not to distort the
            // funnel (q^20 under the fitted persistence is ~0.6%).
            max_inner_retries: 20,
            re_execution_cap: 2,
            tier_escalation_after: 2,
            checkpoint_cadence: CheckpointCadence::PhaseBoundaries,
            sample_row_cap: crate::exec::DEFAULT_SAMPLE_ROW_CAP,
        }
    }
}

/// Per-call cost attribution in milli-credits and milliseconds. The credit
/// unit is declared here, not measured; ledger acceptance runs on the
/// fixture-ingestion path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub writer_call_milli: i64,
    pub critic_call_milli: i64,
    pub executor_call_milli: i64,
    pub writer_time_ms: u64,
    pub critic_time_ms: u64,
    pub executor_time_ms: u64,
    /// Deterministic user idle before each verdict kind; gaps above the
    /// reporting rule's threshold are excluded at aggregation time.
    pub user_idle_approve_ms: u64,
    pub user_idle_reject_ms: u64,
    pub user_idle_replan_ms: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            writer_call_milli: 5_000,
            critic_call_milli: 2_000,
            executor_call_milli: 1_000,
            writer_time_ms: 2_000,
            critic_time_ms: 800,
            executor_time_ms: 500,
            user_idle_approve_ms: 4_000,
            user_idle_reject_ms: 12_000,
            user_idle_replan_ms: 45_000,
        }
    }
}

/// Which model vendor each seat uses, and the cross-vendor fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VendorConfig {
    pub writer: String,
    pub critics: String,
    pub fallback: String,
}

impl Default for VendorConfig {
    fn default() -> Self {
        VendorConfig {
            writer: "helios".to_string(),
            critics: "borealis".to_string(),
            fallback: "meridian".to_string(),
        }
    }
}

/// Architecture-comparison knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparativeConfig {
    /// Error rate of one agent working alone.
    pub single_agent_error: f64,
    /// Self-verification flip chances.
    pub flip_correct_to_wrong: f64,
    pub flip_wrong_to_right: f64,
    pub single_trials: u64,
    pub council_trials: u64,
    /// Ground-truth discrepancy the task must surface, in cents.
    pub discrepancy_cents: i64,
    pub seed: u64,
}

impl Default for ComparativeConfig {
    fn default() -> Self {
        ComparativeConfig {
            single_agent_error: 0.4,
            flip_correct_to_wrong: 0.6,
            flip_wrong_to_right: 0.0,
            single_trials: 10,
            council_trials: 20,
            discrepancy_cents: 4_000,
            seed: 64,
        }
    }
}

/// Record-linkage and period settings for the reconciliation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub match_threshold: f64,
    pub amount_tolerance_cents: i64,
    pub date_window_days: i64,
    pub recency_horizon_days: i64,
    pub period_end: NaiveDate,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            match_threshold: 0.85,
            amount_tolerance_cents: 1,
            date_window_days: 7,
            recency_horizon_days: 14,
            period_end: NaiveDate::from_ymd_opt(2025, 3, 31).expect("valid date"),
        }
    }
}

impl ScenarioConfig {
    /// These knobs as the data engine's record-linkage settings.
    pub fn match_config(&self) -> crate::exec::MatchConfig {
        crate::exec::MatchConfig {
            threshold: self.match_threshold,
            amount_tolerance_cents: self.amount_tolerance_cents,
            date_window_days: self.date_window_days,
            recency_horizon_days: self.recency_horizon_days,
            period_end: self.period_end,
        }
    }
}

/// Everything a run needs, with calibrated defaults throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub cohort: CohortConfig,
    pub rates: RateConfig,
    pub session: SessionTuning,
    pub costs: CostConfig,
    pub vendors: VendorConfig,
    pub comparative: ComparativeConfig,
    pub scenario: ScenarioConfig,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<SimConfig, ConfigError> {
        let config: SimConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<SimConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        SimConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let probabilities = [
            ("rates.error", self.rates.error),
            ("rates.inner_detectable", self.rates.inner_detectable),
            ("rates.outer_detectable", self.rates.outer_detectable),
            ("rates.chart_share", self.rates.chart_share),
            ("rates.persistence", self.rates.persistence),
            ("rates.replan", self.rates.replan),
            ("rates.correlation", self.rates.correlation),
            ("rates.false_positive", self.rates.false_positive),
            (
                "comparative.single_agent_error",
                self.comparative.single_agent_error,
            ),
            (
                "comparative.flip_correct_to_wrong",
                self.comparative.flip_correct_to_wrong,
            ),
            (
                "comparative.flip_wrong_to_right",
                self.comparative.flip_wrong_to_right,
            ),
            ("scenario.match_threshold", self.scenario.match_threshold),
        ];
        for (field, p) in probabilities {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(ConfigError::OutOfRange {
                    field,
                    value: p,
                    expected: "a probability in [0, 1]",
                });
            }
        }
        if !(0.0..=1.0).contains(&self.rates.senior_error_factor) {
            return Err(ConfigError::OutOfRange {
                field: "rates.senior_error_factor",
                value: self.rates.senior_error_factor,
                expected: "a factor in [0, 1]",
            });
        }
        let positive_counts = [
            ("cohort.sessions", self.cohort.sessions),
            ("cohort.seeds", self.cohort.seeds),
            ("comparative.single_trials", self.comparative.single_trials),
            ("comparative.council_trials", self.comparative.council_trials),
        ];
        for (field, n) in positive_counts {
            if n == 0 {
                return Err(ConfigError::OutOfRange {
                    field,
                    value: 0.0,
                    expected: "a count of at least 1",
                });
            }
        }
        if self.session.max_inner_retries == 0 {
            return Err(ConfigError::OutOfRange {
                field: "session.max_inner_retries",
                value: 0.0,
                expected: "at least 1",
            });
        }
        if self.session.tier_escalation_after == 0 {
            return Err(ConfigError::OutOfRange {
                field: "session.tier_escalation_after",
                value: 0.0,
                expected: "at least 1",
            });
        }
        let costs = [
            ("costs.writer_call_milli", self.costs.writer_call_milli),
            ("costs.critic_call_milli", self.costs.critic_call_milli),
            ("costs.executor_call_milli", self.costs.executor_call_milli),
        ];
        for (field, c) in costs {
            if c < 0 {
                return Err(ConfigError::OutOfRange {
                    field,
                    value: c as f64,
                    expected: "a non-negative cost",
                });
            }
        }
        for (field, name) in [
            ("vendors.writer", &self.vendors.writer),
            ("vendors.critics", &self.vendors.critics),
            ("vendors.fallback", &self.vendors.fallback),
        ] {
            if name.is_empty() {
                return Err(ConfigError::Empty { field });
            }
        }
        if self.scenario.amount_tolerance_cents < 0
            || self.scenario.date_window_days < 0
            || self.scenario.recency_horizon_days < 0
        {
            return Err(ConfigError::OutOfRange {
                field: "scenario tolerances",
                value: -1.0,
                expected: "non-negative tolerances",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config failed to parse: {0}")]
    Parse(String),
    #[error("config io failure: {0}")]
    Io(String),
    #[error("{field} = {value} out of range; expected {expected}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("{field} must not be empty")]
    Empty { field: &'static str },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rates_are_the_observed_ratios() {
        let rates = RateConfig::default();
        assert!((rates.error - 392.0 / 522.0).abs() < 1e-12);
        assert!((rates.inner_detectable - 344.0 / 392.0).abs() < 1e-12);
        assert!((rates.outer_detectable - 7.0 / 48.0).abs() < 1e-12);
        assert!((rates.chart_share - 7.0 / 344.0).abs() < 1e-12);
        assert!((rates.replan - 30.0 / 522.0).abs() < 1e-12);
    }

    #[test]
    fn persistence_fit_matches_the_level_buckets() {
        let q = fit_persistence(OBSERVED_FUNNEL.level_sessions);
        // Matching the top bucket exactly...
        assert!((q.powi(5) - 109.0 / 392.0).abs() < 1e-9);
        // ...lands the other two buckets within a fraction of a session.
        let total = 392.0;
        let level1 = (1.0 - q * q) * total;
        let level2 = (q * q - q.powi(5)) * total;
        assert!((level1 - 157.0).abs() < 0.3, "level1 {level1}");
        assert!((level2 - 126.0).abs() < 0.3, "level2 {level2}");
        assert!((q - 0.7742).abs() < 5e-4);
    }

    #[test]
    fn empty_toml_yields_the_calibrated_defaults() {
        let config = SimConfig::from_toml_str("").unwrap();
        assert_eq!(config, SimConfig::default());
        assert_eq!(config.cohort.sessions, 522);
        assert_eq!(config.vendors.writer, "helios");
        assert_eq!(config.vendors.fallback, "meridian");
    }

    #[test]
    fn partial_toml_overrides_only_named_fields() {
        let config = SimConfig::from_toml_str(
            "[cohort]\nsessions = 10\n\n[rates]\nerror = 0.0\n",
        )
        .unwrap();
        assert_eq!(config.cohort.sessions, 10);
        assert_eq!(config.rates.error, 0.0);
        assert_eq!(config.cohort.seeds, 200);
        assert!((config.rates.inner_detectable - 344.0 / 392.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SimConfig::from_toml_str("[cohort]\nsesions = 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn out_of_range_rates_are_rejected() {
        let err = SimConfig::from_toml_str("[rates]\nerror = 1.5\n").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::OutOfRange { field: "rates.error", .. }
        ));
        let err = SimConfig::from_toml_str("[cohort]\nsessions = 0\n").unwrap_err();
        assert!(matches!(err, ConfigError::OutOfRange { .. }));
    }

    #[test]
    fn config_toml_round_trip() {
        let config = SimConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
