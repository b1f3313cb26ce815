//! Typed message kernel: roles, phases, envelopes, and visibility-scoped
//! dispatch.
//!
//! Every inter-agent communication is a [`MessageEnvelope`] with a structured,
//! versioned payload and an explicit visibility allow-list of `(role, phase)`
//! pairs. Delivery is computed from that list and the session's current
//! phase — there is no broadcast and no free-text channel. Team-internal
//! traffic is summarized upward through [`relay_summary`], which preserves
//! causal lineage without copying rejected-attempt payloads.

use crate::artifact::ArtifactPayload;
use crate::cascade::VerdictPayload;
use crate::ids::{MessageId, StepId, TeamId};
use crate::reason::ReasonCode;
use crate::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

// ============================================================================
// Roles and phases
// ============================================================================

/// Fixed vocabulary of agent roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    PrePlanner,
    Planner,
    PlanRefiner,
    PlanCritic,
    SmeConsultant,
    Coordinator,
    PlanExecutor,
    Writer,
    CodeExecutor,
    CodeCritic,
    ChartCritic,
    OutputCritic,
    Summarizer,
    UserProxy,
    Guardrails,
}

impl RoleKind {
    /// Only writers and summarizers carry a specialization tag.
    pub fn allows_specialization(&self) -> bool {
        matches!(self, RoleKind::Writer | RoleKind::Summarizer)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RoleKind::PrePlanner => "pre_planner",
            RoleKind::Planner => "planner",
            RoleKind::PlanRefiner => "plan_refiner",
            RoleKind::PlanCritic => "plan_critic",
            RoleKind::SmeConsultant => "sme_consultant",
            RoleKind::Coordinator => "coordinator",
            RoleKind::PlanExecutor => "plan_executor",
            RoleKind::Writer => "writer",
            RoleKind::CodeExecutor => "code_executor",
            RoleKind::CodeCritic => "code_critic",
            RoleKind::ChartCritic => "chart_critic",
            RoleKind::OutputCritic => "output_critic",
            RoleKind::Summarizer => "summarizer",
            RoleKind::UserProxy => "user_proxy",
            RoleKind::Guardrails => "guardrails",
        }
    }
}

/// A role, optionally specialized (e.g. `writer:pdf-extract`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentRole {
    pub kind: RoleKind,
    pub specialization: Option<String>,
}

impl AgentRole {
    pub fn new(kind: RoleKind) -> Self {
        AgentRole {
            kind,
            specialization: None,
        }
    }

    /// Specialized role; rejected for kinds that do not take a tag.
    pub fn specialized(kind: RoleKind, tag: &str) -> Result<Self, KernelError> {
        if !kind.allows_specialization() {
            return Err(KernelError::SpecializationNotAllowed { kind });
        }
        if tag.is_empty() {
            return Err(KernelError::SchemaViolation {
                detail: "empty specialization tag".to_string(),
            });
        }
        Ok(AgentRole {
            kind,
            specialization: Some(tag.to_string()),
        })
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.specialization {
            Some(tag) => write!(f, "{}:{}", self.kind.as_str(), tag),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

/// Session phases, totally ordered by pipeline stage.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Approval,
    Execution,
    InnerCritique,
    OuterCritique,
    Synthesis,
    Escalation,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Planning,
        Phase::Approval,
        Phase::Execution,
        Phase::InnerCritique,
        Phase::OuterCritique,
        Phase::Synthesis,
        Phase::Escalation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Planning => "planning",
            Phase::Approval => "approval",
            Phase::Execution => "execution",
            Phase::InnerCritique => "inner_critique",
            Phase::OuterCritique => "outer_critique",
            Phase::Synthesis => "synthesis",
            Phase::Escalation => "escalation",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Message scope: inside one step's team, or session-wide coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    Session,
    Team(TeamId),
}

// ============================================================================
// Payloads
// ============================================================================

/// Compact description of a plan for approval traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDigest {
    pub step_count: u32,
    pub criterion_count: u32,
}

/// Rollup of one team's traffic; carries lineage, not rejected payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPayload {
    pub team: Option<TeamId>,
    pub source_count: u32,
    /// Envelope id of the approved artifact, when the transcript has one.
    pub approved_artifact: Option<MessageId>,
    /// Number of verdict rounds observed in the transcript.
    pub iterations: u32,
}

/// Final user decision on a session's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserVerdict {
    Approved,
    Rejected,
    ReplanRequested,
}

impl UserVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            UserVerdict::Approved => "approved",
            UserVerdict::Rejected => "rejected",
            UserVerdict::ReplanRequested => "replan_requested",
        }
    }
}

/// Structured control traffic (approvals, assignments, escalations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum ControlPayload {
    ApprovalRequest,
    ApprovalGranted,
    ApprovalRefused { feedback: String },
    StepAssignment { step: StepId },
    ReExecution { steps: Vec<StepId> },
    EscalationNotice { reason: ReasonCode },
    ReplanRequest { reason: ReasonCode, missing: Vec<String> },
    UserDecision { verdict: UserVerdict },
}

/// The closed set of payload shapes a message may carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "payload")]
pub enum Payload {
    Plan(PlanDigest),
    Artifact(ArtifactPayload),
    Verdict(VerdictPayload),
    Summary(SummaryPayload),
    Control(ControlPayload),
}

impl Payload {
    /// Structural validation applied at envelope construction.
    fn validate(&self) -> Result<(), KernelError> {
        match self {
            Payload::Verdict(v) => v.validate().map_err(|detail| {
                KernelError::SchemaViolation { detail }
            }),
            Payload::Control(ControlPayload::ApprovalRefused { feedback }) => {
                if feedback.is_empty() {
                    Err(KernelError::SchemaViolation {
                        detail: "approval refusal requires feedback".to_string(),
                    })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Payload::Plan(_) => "plan",
            Payload::Artifact(_) => "artifact",
            Payload::Verdict(_) => "verdict",
            Payload::Summary(_) => "summary",
            Payload::Control(_) => "control",
        }
    }
}

// ============================================================================
// Envelopes
// ============================================================================

/// A visibility pair: who may receive, and during which phase.
pub type Visibility = BTreeSet<(AgentRole, Phase)>;

/// Typed, versioned message with an explicit visibility allow-list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageEnvelope {
    pub schema_version: u32,
    pub id: MessageId,
    pub sender: AgentRole,
    /// Phase the session was in when the message was sent.
    pub sent_phase: Phase,
    pub scope: Scope,
    pub visibility: Visibility,
    pub payload: Payload,
    /// Messages this one causally depends on; all strictly earlier.
    pub causal_parents: Vec<MessageId>,
}

impl MessageEnvelope {
    /// Construct and validate an envelope. Causal parents must be strictly
    /// earlier than `id`, and the payload must pass schema validation.
    pub fn new(
        id: MessageId,
        sender: AgentRole,
        sent_phase: Phase,
        scope: Scope,
        visibility: Visibility,
        payload: Payload,
        causal_parents: Vec<MessageId>,
    ) -> Result<Self, KernelError> {
        payload.validate()?;
        for parent in &causal_parents {
            if parent.0 >= id.0 {
                return Err(KernelError::CausalOrderViolation {
                    message: id,
                    parent: *parent,
                });
            }
        }
        Ok(MessageEnvelope {
            schema_version: SCHEMA_VERSION,
            id,
            sender,
            sent_phase,
            scope,
            visibility,
            payload,
            causal_parents,
        })
    }

    /// Parse an envelope from its serialized form, rejecting unknown schema
    /// versions.
    pub fn from_json(json: &str) -> Result<Self, KernelError> {
        let envelope: MessageEnvelope =
            serde_json::from_str(json).map_err(|e| KernelError::SchemaViolation {
                detail: format!("malformed envelope: {e}"),
            })?;
        if envelope.schema_version > SCHEMA_VERSION {
            return Err(KernelError::UnknownSchemaVersion {
                found: envelope.schema_version,
            });
        }
        envelope.payload.validate()?;
        Ok(envelope)
    }

    /// Would this envelope be visible to `role` during `phase`?
    pub fn visible_to(&self, role: &AgentRole, phase: Phase) -> bool {
        self.visibility.contains(&(role.clone(), phase))
    }
}

// ============================================================================
// Registry and dispatch
// ============================================================================

/// Ordered set of roles registered in a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRegistry {
    roles: BTreeSet<AgentRole>,
}

impl RoleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, role: AgentRole) {
        self.roles.insert(role);
    }

    pub fn contains(&self, role: &AgentRole) -> bool {
        self.roles.contains(role)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AgentRole> {
        self.roles.iter()
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }
}

/// Compute the recipients of `envelope` given the session's current phase.
///
/// Recipients are exactly the registered roles whose `(role, current_phase)`
/// pair appears in the envelope's visibility list, in registry order. An
/// empty recipient list is a routing bug and is returned as
/// [`KernelError::EmptyVisibility`]; agents whose pair names a later phase
/// receive the message when the session reaches that phase.
pub fn dispatch(
    envelope: &MessageEnvelope,
    registry: &RoleRegistry,
    current_phase: Phase,
) -> Result<Vec<AgentRole>, KernelError> {
    let recipients: Vec<AgentRole> = registry
        .iter()
        .filter(|role| envelope.visible_to(role, current_phase))
        .cloned()
        .collect();
    if recipients.is_empty() {
        return Err(KernelError::EmptyVisibility {
            message: envelope.id,
            phase: current_phase,
        });
    }
    Ok(recipients)
}

/// Recipients that become newly eligible when the session advances to
/// `new_phase`. Used by the orchestrator's phase-transition sweep; never
/// errors, because a message legitimately may have no recipients in a given
/// later phase.
pub fn phase_sweep_recipients(
    envelope: &MessageEnvelope,
    registry: &RoleRegistry,
    new_phase: Phase,
) -> Vec<AgentRole> {
    registry
        .iter()
        .filter(|role| envelope.visible_to(role, new_phase))
        .cloned()
        .collect()
}

// ============================================================================
// Upward summarization
// ============================================================================

/// Collapse one team's transcript into a single envelope for the parent
/// coordinator scope.
///
/// The summary's causal parents cover every input message; rejected-attempt
/// payloads are not copied, only counted. All inputs must belong to one team
/// scope.
pub fn relay_summary(
    inputs: &[&MessageEnvelope],
    id: MessageId,
    summarizer: &AgentRole,
    coordinator: &AgentRole,
    deliver_phase: Phase,
) -> Result<MessageEnvelope, KernelError> {
    let mut teams: BTreeSet<TeamId> = BTreeSet::new();
    for env in inputs {
        match env.scope {
            Scope::Team(t) => {
                teams.insert(t);
            }
            Scope::Session => {
                return Err(KernelError::MixedScope {
                    detail: format!("message {} is session-scoped", env.id),
                })
            }
        }
    }
    if teams.len() > 1 {
        return Err(KernelError::MixedScope {
            detail: format!(
                "inputs span teams {}",
                teams
                    .iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        });
    }

    let approved_artifact = inputs
        .iter()
        .rev()
        .find(|env| matches!(env.payload, Payload::Artifact(_)))
        .map(|env| env.id);
    let iterations = inputs
        .iter()
        .filter(|env| matches!(env.payload, Payload::Verdict(_)))
        .count() as u32;

    let payload = Payload::Summary(SummaryPayload {
        team: teams.iter().next().copied(),
        source_count: inputs.len() as u32,
        approved_artifact,
        iterations,
    });

    let mut visibility = Visibility::new();
    visibility.insert((coordinator.clone(), deliver_phase));

    MessageEnvelope::new(
        id,
        summarizer.clone(),
        deliver_phase,
        Scope::Session,
        visibility,
        payload,
        inputs.iter().map(|env| env.id).collect(),
    )
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("message {message} has no recipient in phase {phase}")]
    EmptyVisibility { message: MessageId, phase: Phase },
    #[error("payload schema violation: {detail}")]
    SchemaViolation { detail: String },
    #[error("summary inputs must share one team scope: {detail}")]
    MixedScope { detail: String },
    #[error("unknown payload schema version {found}")]
    UnknownSchemaVersion { found: u32 },
    #[error("role kind {kind:?} does not take a specialization")]
    SpecializationNotAllowed { kind: RoleKind },
    #[error("message {message} lists parent {parent} that is not earlier")]
    CausalOrderViolation { message: MessageId, parent: MessageId },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{CritiqueLayer, Verdict};

    fn role(kind: RoleKind) -> AgentRole {
        AgentRole::new(kind)
    }

    fn control_envelope(
        id: u64,
        sender: RoleKind,
        visibility: &[(RoleKind, Phase)],
        parents: &[u64],
    ) -> MessageEnvelope {
        let vis: Visibility = visibility
            .iter()
            .map(|(k, p)| (role(*k), *p))
            .collect();
        MessageEnvelope::new(
            MessageId(id),
            role(sender),
            Phase::Planning,
            Scope::Session,
            vis,
            Payload::Control(ControlPayload::ApprovalRequest),
            parents.iter().map(|p| MessageId(*p)).collect(),
        )
        .expect("valid envelope")
    }

    #[test]
    fn phases_are_totally_ordered() {
        for window in Phase::ALL.windows(2) {
            assert!(window[0] < window[1]);
        }
    }

    #[test]
    fn specialization_is_restricted_to_writer_and_summarizer() {
        assert!(AgentRole::specialized(RoleKind::Writer, "pdf-extract").is_ok());
        assert!(AgentRole::specialized(RoleKind::Summarizer, "finance").is_ok());
        let err = AgentRole::specialized(RoleKind::CodeCritic, "x").unwrap_err();
        assert_eq!(
            err,
            KernelError::SpecializationNotAllowed {
                kind: RoleKind::CodeCritic
            }
        );
    }

    #[test]
    fn dispatch_delivers_to_single_matching_critic() {
        let mut registry = RoleRegistry::new();
        registry.register(role(RoleKind::CodeCritic));
        registry.register(role(RoleKind::Coordinator));
        let env = control_envelope(
            1,
            RoleKind::Writer,
            &[(RoleKind::CodeCritic, Phase::InnerCritique)],
            &[],
        );
        let delivered = dispatch(&env, &registry, Phase::InnerCritique).unwrap();
        assert_eq!(delivered, vec![role(RoleKind::CodeCritic)]);
    }

    #[test]
    fn dispatch_respects_current_phase() {
        let mut registry = RoleRegistry::new();
        registry.register(role(RoleKind::CodeExecutor));
        registry.register(role(RoleKind::CodeCritic));
        let env = control_envelope(
            1,
            RoleKind::Writer,
            &[
                (RoleKind::CodeExecutor, Phase::Execution),
                (RoleKind::CodeCritic, Phase::InnerCritique),
            ],
            &[],
        );
        // During execution only the executor sees it.
        let delivered = dispatch(&env, &registry, Phase::Execution).unwrap();
        assert_eq!(delivered, vec![role(RoleKind::CodeExecutor)]);
        // The critic becomes eligible once the phase advances.
        let later = phase_sweep_recipients(&env, &registry, Phase::InnerCritique);
        assert_eq!(later, vec![role(RoleKind::CodeCritic)]);
    }

    #[test]
    fn dispatch_with_no_match_is_a_routing_error() {
        let mut registry = RoleRegistry::new();
        registry.register(role(RoleKind::Planner));
        let env = control_envelope(
            7,
            RoleKind::Coordinator,
            &[(RoleKind::Planner, Phase::Planning)],
            &[],
        );
        let err = dispatch(&env, &registry, Phase::Execution).unwrap_err();
        assert_eq!(
            err,
            KernelError::EmptyVisibility {
                message: MessageId(7),
                phase: Phase::Execution
            }
        );
    }

    #[test]
    fn causal_parents_must_be_earlier() {
        let vis: Visibility = [(role(RoleKind::Coordinator), Phase::Planning)]
            .into_iter()
            .collect();
        let err = MessageEnvelope::new(
            MessageId(3),
            role(RoleKind::Planner),
            Phase::Planning,
            Scope::Session,
            vis,
            Payload::Control(ControlPayload::ApprovalRequest),
            vec![MessageId(3)],
        )
        .unwrap_err();
        assert_eq!(
            err,
            KernelError::CausalOrderViolation {
                message: MessageId(3),
                parent: MessageId(3)
            }
        );
    }

    #[test]
    fn reject_verdict_requires_a_reason() {
        let bare = VerdictPayload {
            verdict: Verdict::Reject,
            layer: CritiqueLayer::L1Code,
            critic: role(RoleKind::CodeCritic),
            step: None,
            iteration: 1,
            reasons: vec![],
            failed_criteria: vec![],
        };
        let vis: Visibility = [(role(RoleKind::Writer), Phase::InnerCritique)]
            .into_iter()
            .collect();
        let err = MessageEnvelope::new(
            MessageId(2),
            role(RoleKind::CodeCritic),
            Phase::InnerCritique,
            Scope::Team(TeamId(1)),
            vis,
            Payload::Verdict(bare),
            vec![MessageId(1)],
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::SchemaViolation { .. }));
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let env = control_envelope(1, RoleKind::Planner, &[(RoleKind::Coordinator, Phase::Planning)], &[]);
        let mut json = serde_json::to_value(&env).unwrap();
        json["schema_version"] = serde_json::json!(99);
        let err = MessageEnvelope::from_json(&json.to_string()).unwrap_err();
        assert_eq!(err, KernelError::UnknownSchemaVersion { found: 99 });
    }

    #[test]
    fn relay_rejects_mixed_team_scopes() {
        let mut a = control_envelope(1, RoleKind::Writer, &[(RoleKind::CodeCritic, Phase::InnerCritique)], &[]);
        a.scope = Scope::Team(TeamId(1));
        let mut b = control_envelope(2, RoleKind::Writer, &[(RoleKind::CodeCritic, Phase::InnerCritique)], &[]);
        b.scope = Scope::Team(TeamId(2));
        let err = relay_summary(
            &[&a, &b],
            MessageId(3),
            &role(RoleKind::Summarizer),
            &role(RoleKind::Coordinator),
            Phase::Execution,
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::MixedScope { .. }));
    }

    #[test]
    fn relay_of_empty_input_has_no_parents() {
        let summary = relay_summary(
            &[],
            MessageId(1),
            &role(RoleKind::Summarizer),
            &role(RoleKind::Coordinator),
            Phase::Execution,
        )
        .unwrap();
        assert!(summary.causal_parents.is_empty());
        match summary.payload {
            Payload::Summary(s) => {
                assert_eq!(s.source_count, 0);
                assert_eq!(s.team, None);
                assert_eq!(s.approved_artifact, None);
            }
            other => panic!("expected summary payload, got {other:?}"),
        }
    }

    #[test]
    fn relay_covers_all_inputs_causally() {
        let mut inputs = Vec::new();
        for i in 1..=4u64 {
            let mut env = control_envelope(
                i,
                RoleKind::Writer,
                &[(RoleKind::CodeCritic, Phase::InnerCritique)],
                &[],
            );
            env.scope = Scope::Team(TeamId(9));
            inputs.push(env);
        }
        let refs: Vec<&MessageEnvelope> = inputs.iter().collect();
        let summary = relay_summary(
            &refs,
            MessageId(10),
            &role(RoleKind::Summarizer),
            &role(RoleKind::Coordinator),
            Phase::Execution,
        )
        .unwrap();
        let parents: Vec<u64> = summary.causal_parents.iter().map(|m| m.0).collect();
        assert_eq!(parents, vec![1, 2, 3, 4]);
        assert_eq!(summary.scope, Scope::Session);
    }

    #[test]
    fn envelope_json_roundtrip_is_stable() {
        let env = control_envelope(
            5,
            RoleKind::Coordinator,
            &[(RoleKind::UserProxy, Phase::Approval)],
            &[1, 2],
        );
        let json = serde_json::to_string(&env).unwrap();
        let back = MessageEnvelope::from_json(&json).unwrap();
        assert_eq!(back, env);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
