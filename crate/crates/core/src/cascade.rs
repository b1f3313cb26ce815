//! Layered critique: verdict vocabulary, reviewer evaluation, and the
//! closed-form cascade model.
//!
//! Evaluation order is fixed: deterministic criteria checks first, then
//! ground-truth defect visibility for the reviewer's layer, then the
//! reviewer's false-positive draw. Each defect class is visible to exactly
//! one layer, so a review never catches out-of-lane defects. The loop
//! driver that sequences produce → critique → retry lives in
//! [`crate::session`]; this module supplies its verdict-level pieces.

use crate::agent::AgentInstance;
use crate::artifact::{ArtifactPayload, DefectKind};
use crate::ids::{CriterionId, StepId};
use crate::kernel::AgentRole;
use crate::plan::{AcceptanceCriterion, CriterionPredicate, StepKind};
use crate::reason::ReasonCode;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Reviewer decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Reject,
    Escalate,
}

/// Where in the cascade a review happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiqueLayer {
    L1Code,
    L1Chart,
    L2Output,
}

impl CritiqueLayer {
    /// The single defect class visible at this layer.
    pub fn catchable_kind(&self) -> DefectKind {
        match self {
            CritiqueLayer::L1Code => DefectKind::Code,
            CritiqueLayer::L1Chart => DefectKind::Chart,
            CritiqueLayer::L2Output => DefectKind::Intent,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CritiqueLayer::L1Code => "l1_code",
            CritiqueLayer::L1Chart => "l1_chart",
            CritiqueLayer::L2Output => "l2_output",
        }
    }
}

impl fmt::Display for CritiqueLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A reviewer's full decision, as carried in messages and logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictPayload {
    pub verdict: Verdict,
    pub layer: CritiqueLayer,
    pub critic: AgentRole,
    pub step: Option<StepId>,
    pub iteration: u32,
    pub reasons: Vec<ReasonCode>,
    pub failed_criteria: Vec<CriterionId>,
}

impl VerdictPayload {
    /// Rejections and escalations must say why.
    pub fn validate(&self) -> Result<(), String> {
        match self.verdict {
            Verdict::Approve => Ok(()),
            Verdict::Reject | Verdict::Escalate => {
                if self.reasons.is_empty() && self.failed_criteria.is_empty() {
                    Err("non-approval verdict must cite a reason or criterion".to_string())
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Map a failed predicate to its reason code.
fn predicate_reason(predicate: &CriterionPredicate) -> ReasonCode {
    match predicate {
        CriterionPredicate::FieldPresent { .. } => ReasonCode::MissingField,
        CriterionPredicate::NumericTolerance { .. } => ReasonCode::NumericMismatch,
        CriterionPredicate::RowCountBound { .. } => ReasonCode::RowCount,
        CriterionPredicate::SchemaMatch { .. } => ReasonCode::SchemaMismatch,
        CriterionPredicate::NamedPolicy { name } => {
            if name.starts_with("non-null:") {
                ReasonCode::NullValues
            } else {
                ReasonCode::PolicyViolation
            }
        }
    }
}

fn defect_reason(kind: DefectKind) -> ReasonCode {
    match kind {
        DefectKind::Code => ReasonCode::DefectCode,
        DefectKind::Chart => ReasonCode::DefectChart,
        DefectKind::Intent => ReasonCode::DefectIntent,
    }
}

/// Review one artifact at one layer.
///
/// Approves iff every criterion predicate holds, no defect visible at this
/// layer fires, and the reviewer's false-positive draw stays quiet.
/// Criteria checks are deterministic; they never approve a failing artifact.
/// Chart reviewers only review chart artifacts.
pub fn evaluate(
    critic: &mut AgentInstance,
    layer: CritiqueLayer,
    artifact: &ArtifactPayload,
    criteria: &[&AcceptanceCriterion],
) -> Result<VerdictPayload, CascadeError> {
    if layer == CritiqueLayer::L1Chart && artifact.kind != StepKind::Chart {
        return Err(CascadeError::LayerMismatch {
            layer,
            artifact_kind: artifact.kind,
        });
    }
    assert!(
        critic.role != artifact.producer,
        "no self-certification: {} reviewing its own artifact",
        critic.role
    );

    let mut reasons: Vec<ReasonCode> = Vec::new();
    let mut failed: Vec<CriterionId> = Vec::new();
    for criterion in criteria {
        if !criterion.predicate.holds(artifact) {
            failed.push(criterion.id);
            let reason = predicate_reason(&criterion.predicate);
            if !reasons.contains(&reason) {
                reasons.push(reason);
            }
        }
    }

    let visible_kind = layer.catchable_kind();
    for defect in &artifact.defects {
        if defect.kind != visible_kind {
            continue;
        }
        let fires = match layer {
            CritiqueLayer::L1Code | CritiqueLayer::L1Chart => defect.catch_inner,
            CritiqueLayer::L2Output => defect.catch_outer,
        };
        if fires {
            let reason = defect_reason(defect.kind);
            if !reasons.contains(&reason) {
                reasons.push(reason);
            }
        }
    }

    if reasons.is_empty() && failed.is_empty() {
        let fpr = critic.profile().false_positive_rate;
        if critic.draw_event(fpr) {
            reasons.push(ReasonCode::ReviewDiscretion);
        }
    }

    let verdict = if reasons.is_empty() && failed.is_empty() {
        Verdict::Approve
    } else {
        Verdict::Reject
    };
    Ok(VerdictPayload {
        verdict,
        layer,
        critic: critic.role.clone(),
        step: Some(artifact.step),
        iteration: artifact.iteration,
        reasons,
        failed_criteria: failed,
    })
}

/// Feedback handed back to the writer after a rejected iteration: the union
/// of all rejecting reviewers' reasons and failed criteria, merged into one
/// message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectFeedback {
    pub reasons: Vec<ReasonCode>,
    pub failed_criteria: Vec<CriterionId>,
}

/// Combine simultaneous verdicts from one iteration's reviewers.
/// Advancement requires unanimity; any rejection wins and the feedback
/// merges every cited reason and criterion.
pub fn combine_verdicts(verdicts: &[VerdictPayload]) -> Option<RejectFeedback> {
    let mut feedback = RejectFeedback::default();
    for v in verdicts {
        if v.verdict == Verdict::Approve {
            continue;
        }
        for r in &v.reasons {
            if !feedback.reasons.contains(r) {
                feedback.reasons.push(*r);
            }
        }
        for c in &v.failed_criteria {
            if !feedback.failed_criteria.contains(c) {
                feedback.failed_criteria.push(*c);
            }
        }
    }
    if feedback.reasons.is_empty() && feedback.failed_criteria.is_empty() {
        None
    } else {
        Some(feedback)
    }
}

// ============================================================================
// Closed-form model
// ============================================================================

/// Independent-layer cascade arithmetic.
///
/// `p_error` is the chance a session needs intervention at all,
/// `p_catch_inner` the chance the inner loop absorbs it, and `p_catch_outer`
/// the chance the output gate catches what escaped. The expected escape rate
/// is the product of the misses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub p_error: f64,
    pub p_catch_inner: f64,
    pub p_catch_outer: f64,
}

impl CascadeModel {
    pub fn new(p_error: f64, p_catch_inner: f64, p_catch_outer: f64) -> Result<Self, CascadeError> {
        for (name, p) in [
            ("p_error", p_error),
            ("p_catch_inner", p_catch_inner),
            ("p_catch_outer", p_catch_outer),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(CascadeError::InvalidProbability {
                    field: name,
                    value: p,
                });
            }
        }
        Ok(CascadeModel {
            p_error,
            p_catch_inner,
            p_catch_outer,
        })
    }

    /// P(error reaches the user) under layer independence.
    pub fn expected_escape_rate(&self) -> f64 {
        self.p_error * (1.0 - self.p_catch_inner) * (1.0 - self.p_catch_outer)
    }

    /// Escape rate with hypothetical additional review layers appended,
    /// each with its own catch probability.
    pub fn expected_escape_with_layers(&self, extra_catch: &[f64]) -> Result<f64, CascadeError> {
        let mut escape = self.expected_escape_rate();
        for (i, p) in extra_catch.iter().enumerate() {
            if !(0.0..=1.0).contains(p) || !p.is_finite() {
                return Err(CascadeError::InvalidProbability {
                    field: if i == 0 { "extra_catch[0]" } else { "extra_catch[..]" },
                    value: *p,
                });
            }
            escape *= 1.0 - p;
        }
        Ok(escape)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("{layer} cannot review a {artifact_kind} artifact")]
    LayerMismatch {
        layer: CritiqueLayer,
        artifact_kind: StepKind,
    },
    #[error("{field} must be a probability in [0,1], got {value}")]
    InvalidProbability { field: &'static str, value: f64 },
    #[error("step {step} exhausted its retry budget of {max_retries}")]
    RetriesExhausted { step: StepId, max_retries: u32 },
}
