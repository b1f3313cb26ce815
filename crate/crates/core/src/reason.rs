//! Closed vocabulary of rejection and escalation reasons.
//!
//! Every `Reject`/`Escalate` verdict cites one or more of these codes, and the
//! codes double as log vocabulary, so the set is frozen in a versioned
//! registry file (`fixtures/reason_codes.toml`) that ships with the crate.
//! A unit test keeps the enum and the registry in lockstep.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Registry file contents, embedded at compile time.
pub const REGISTRY_TOML: &str = include_str!("../fixtures/reason_codes.toml");

/// Version of the reason-code vocabulary.
pub const REGISTRY_VERSION: u32 = 1;

/// Machine-diffable reason attached to rejections and escalations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    MissingField,
    SchemaMismatch,
    NullValues,
    RowCount,
    NumericMismatch,
    PolicyViolation,
    DefectCode,
    DefectChart,
    DefectIntent,
    ReviewDiscretion,
    RetriesExhausted,
    GuardrailBlock,
    ReplanMissingInputs,
    ConflictUnresolved,
}

impl ReasonCode {
    /// All codes, in registry order.
    pub const ALL: [ReasonCode; 14] = [
        ReasonCode::MissingField,
        ReasonCode::SchemaMismatch,
        ReasonCode::NullValues,
        ReasonCode::RowCount,
        ReasonCode::NumericMismatch,
        ReasonCode::PolicyViolation,
        ReasonCode::DefectCode,
        ReasonCode::DefectChart,
        ReasonCode::DefectIntent,
        ReasonCode::ReviewDiscretion,
        ReasonCode::RetriesExhausted,
        ReasonCode::GuardrailBlock,
        ReasonCode::ReplanMissingInputs,
        ReasonCode::ConflictUnresolved,
    ];

    /// Stable string form used in logs and the registry file.
    pub fn as_str(&self) -> &'static str {
        match self {
            ReasonCode::MissingField => "missing_field",
            ReasonCode::SchemaMismatch => "schema_mismatch",
            ReasonCode::NullValues => "null_values",
            ReasonCode::RowCount => "row_count",
            ReasonCode::NumericMismatch => "numeric_mismatch",
            ReasonCode::PolicyViolation => "policy_violation",
            ReasonCode::DefectCode => "defect_code",
            ReasonCode::DefectChart => "defect_chart",
            ReasonCode::DefectIntent => "defect_intent",
            ReasonCode::ReviewDiscretion => "review_discretion",
            ReasonCode::RetriesExhausted => "retries_exhausted",
            ReasonCode::GuardrailBlock => "guardrail_block",
            ReasonCode::ReplanMissingInputs => "replan_missing_inputs",
            ReasonCode::ConflictUnresolved => "conflict_unresolved",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
