//! Execution plans: DAGs of typed steps with acceptance criteria declared
//! before any execution begins.
//!
//! A plan is immutable once approved. Scheduling is deterministic — the ready
//! set is every unfinished step whose dependencies are complete, ordered by
//! ascending step id — so a given plan and completion state always yield the
//! same dispatch order.

use crate::artifact::{ArtifactPayload, FieldValue};
use crate::ids::{CriterionId, EventIndex, StepId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// What kind of work a step performs; also selects the applicable critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Extract,
    Transform,
    Reconcile,
    Chart,
    Synthesize,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StepKind::Extract => "extract",
            StepKind::Transform => "transform",
            StepKind::Reconcile => "reconcile",
            StepKind::Chart => "chart",
            StepKind::Synthesize => "synthesize",
        };
        f.write_str(s)
    }
}

// ============================================================================
// Acceptance criteria
// ============================================================================

/// Closed predicate vocabulary for acceptance criteria.
///
/// Predicates are pure functions of the artifact under review: no clock, no
/// randomness, no external lookups. `NamedPolicy` names a check from the
/// fixed policy table below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "check")]
pub enum CriterionPredicate {
    /// The named scalar field is present on the artifact.
    FieldPresent { field: String },
    /// Numeric field matches `expected` within `tolerance` (both in the
    /// field's own integer unit, e.g. cents).
    NumericTolerance {
        field: String,
        expected: i64,
        tolerance: i64,
    },
    /// The artifact's table has between `min` and `max` rows inclusive.
    RowCountBound { min: u64, max: u64 },
    /// The artifact's table contains at least these columns.
    SchemaMatch { columns: Vec<String> },
    /// A check from the named-policy table (see [`named_policy_holds`]).
    NamedPolicy { name: String },
}

impl CriterionPredicate {
    /// Evaluate against an artifact. Deterministic; missing data fails the
    /// predicate rather than erroring.
    pub fn holds(&self, artifact: &ArtifactPayload) -> bool {
        match self {
            CriterionPredicate::FieldPresent { field } => artifact.fields.contains_key(field),
            CriterionPredicate::NumericTolerance {
                field,
                expected,
                tolerance,
            } => match artifact.fields.get(field) {
                Some(FieldValue::Int(v)) => (v - expected).abs() <= *tolerance,
                Some(FieldValue::Cents(v)) => (v - expected).abs() <= *tolerance,
                _ => false,
            },
            CriterionPredicate::RowCountBound { min, max } => artifact
                .table
                .as_ref()
                .map(|t| t.row_count >= *min && t.row_count <= *max)
                .unwrap_or(false),
            CriterionPredicate::SchemaMatch { columns } => artifact
                .table
                .as_ref()
                .map(|t| columns.iter().all(|c| t.column(c).is_some()))
                .unwrap_or(false),
            CriterionPredicate::NamedPolicy { name } => {
                named_policy_holds(name, artifact).unwrap_or(false)
            }
        }
    }

    /// Validate that a `NamedPolicy` names a known policy.
    fn known(&self) -> Result<(), PlanError> {
        if let CriterionPredicate::NamedPolicy { name } = self {
            if parse_policy(name).is_none() {
                return Err(PlanError::UnknownPolicy { name: name.clone() });
            }
        }
        Ok(())
    }
}

enum Policy<'a> {
    NonNull(&'a str),
    FieldZero(&'a str),
}

fn parse_policy(name: &str) -> Option<Policy<'_>> {
    if let Some(col) = name.strip_prefix("non-null:") {
        (!col.is_empty()).then_some(Policy::NonNull(col))
    } else if let Some(field) = name.strip_prefix("zero:") {
        (!field.is_empty()).then_some(Policy::FieldZero(field))
    } else {
        None
    }
}

/// Policy table backing `NamedPolicy` predicates.
///
/// - `non-null:<column>` — the table column exists and has no null cells.
/// - `zero:<field>` — the integer field is present and equals zero.
///
/// Returns `None` for unknown names; plan construction rejects those up
/// front.
pub fn named_policy_holds(name: &str, artifact: &ArtifactPayload) -> Option<bool> {
    match parse_policy(name)? {
        Policy::NonNull(col) => Some(
            artifact
                .table
                .as_ref()
                .and_then(|t| t.column(col))
                .map(|c| c.null_count == 0)
                .unwrap_or(false),
        ),
        Policy::FieldZero(field) => Some(matches!(
            artifact.fields.get(field),
            Some(FieldValue::Int(0)) | Some(FieldValue::Cents(0))
        )),
    }
}

/// A criterion: declared before execution, checked by critics afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCriterion {
    pub id: CriterionId,
    pub description: String,
    pub predicate: CriterionPredicate,
    /// Log index of the declaration event; always earlier than any
    /// execution event that cites the criterion.
    pub declared_at: EventIndex,
}

// ============================================================================
// Steps and plans
// ============================================================================

/// Default retry budget per step.
pub const DEFAULT_MAX_RETRIES: u32 = 8;

/// One node of the plan DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: StepId,
    pub kind: StepKind,
    pub depends_on: Vec<StepId>,
    /// Which writer specialization performs the step, when it matters.
    pub writer_spec: Option<String>,
    /// Criteria the step's artifact must satisfy.
    pub criteria: Vec<CriterionId>,
    pub max_retries: u32,
}

impl PlanStep {
    pub fn new(id: u64, kind: StepKind) -> Self {
        PlanStep {
            id: StepId(id),
            kind,
            depends_on: Vec::new(),
            writer_spec: None,
            criteria: Vec::new(),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn depends_on(mut self, deps: &[u64]) -> Self {
        self.depends_on = deps.iter().map(|d| StepId(*d)).collect();
        self
    }

    pub fn written_by(mut self, spec: &str) -> Self {
        self.writer_spec = Some(spec.to_string());
        self
    }

    pub fn with_criteria(mut self, ids: &[CriterionId]) -> Self {
        self.criteria = ids.to_vec();
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }
}

/// A validated plan DAG plus its declared criteria and approval state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    steps: Vec<PlanStep>,
    criteria: BTreeMap<CriterionId, AcceptanceCriterion>,
    /// Criteria evaluated at the outer gate against the assembled result.
    plan_criteria: Vec<CriterionId>,
    approved: bool,
    approval_event: Option<EventIndex>,
}

impl ExecutionPlan {
    /// Build and validate a plan: non-empty, acyclic, with resolvable
    /// dependency and criterion references.
    pub fn new(
        steps: Vec<PlanStep>,
        criteria: Vec<AcceptanceCriterion>,
        plan_criteria: Vec<CriterionId>,
    ) -> Result<Self, PlanError> {
        if steps.is_empty() {
            return Err(PlanError::EmptyPlan);
        }
        let mut by_id: BTreeMap<StepId, &PlanStep> = BTreeMap::new();
        for step in &steps {
            if by_id.insert(step.id, step).is_some() {
                return Err(PlanError::DuplicateStep { step: step.id });
            }
        }
        let criteria_map: BTreeMap<CriterionId, AcceptanceCriterion> =
            criteria.into_iter().map(|c| (c.id, c)).collect();
        for criterion in criteria_map.values() {
            criterion.predicate.known()?;
        }
        for step in &steps {
            for dep in &step.depends_on {
                if !by_id.contains_key(dep) {
                    return Err(PlanError::UnknownDependency {
                        step: step.id,
                        dependency: *dep,
                    });
                }
            }
            for c in &step.criteria {
                if !criteria_map.contains_key(c) {
                    return Err(PlanError::UnknownCriterion { criterion: *c });
                }
            }
        }
        for c in &plan_criteria {
            if !criteria_map.contains_key(c) {
                return Err(PlanError::UnknownCriterion { criterion: *c });
            }
        }

        let mut plan = ExecutionPlan {
            steps,
            criteria: criteria_map,
            plan_criteria,
            approved: false,
            approval_event: None,
        };
        plan.steps.sort_by_key(|s| s.id);
        plan.check_acyclic()?;
        Ok(plan)
    }

    fn check_acyclic(&self) -> Result<(), PlanError> {
        // Kahn's algorithm; anything left over sits on a cycle.
        let mut indegree: BTreeMap<StepId, usize> = self
            .steps
            .iter()
            .map(|s| (s.id, s.depends_on.len()))
            .collect();
        let mut queue: Vec<StepId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut seen = 0usize;
        while let Some(id) = queue.pop() {
            seen += 1;
            for step in &self.steps {
                if step.depends_on.contains(&id) {
                    let d = indegree.get_mut(&step.id).expect("indexed above");
                    *d -= 1;
                    if *d == 0 {
                        queue.push(step.id);
                    }
                }
            }
        }
        if seen != self.steps.len() {
            return Err(PlanError::CycleDetected);
        }
        Ok(())
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn step(&self, id: StepId) -> Option<&PlanStep> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn criterion(&self, id: CriterionId) -> Option<&AcceptanceCriterion> {
        self.criteria.get(&id)
    }

    pub fn criteria(&self) -> impl Iterator<Item = &AcceptanceCriterion> {
        self.criteria.values()
    }

    /// Criteria attached to one step, resolved.
    pub fn step_criteria(&self, id: StepId) -> Vec<&AcceptanceCriterion> {
        self.step(id)
            .map(|s| {
                s.criteria
                    .iter()
                    .filter_map(|c| self.criteria.get(c))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Criteria evaluated at the outer gate.
    pub fn gate_criteria(&self) -> Vec<&AcceptanceCriterion> {
        self.plan_criteria
            .iter()
            .filter_map(|c| self.criteria.get(c))
            .collect()
    }

    pub fn is_approved(&self) -> bool {
        self.approved
    }

    pub fn approval_event(&self) -> Option<EventIndex> {
        self.approval_event
    }

    pub fn digest(&self) -> crate::kernel::PlanDigest {
        crate::kernel::PlanDigest {
            step_count: self.steps.len() as u32,
            criterion_count: self.criteria.len() as u32,
        }
    }
}

// ============================================================================
// Operations
// ============================================================================

/// Structured task description handed to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskQuery {
    pub name: String,
    /// Input sources the caller claims to have available.
    pub inputs: Vec<String>,
}

impl TaskQuery {
    pub fn new(name: &str, inputs: &[&str]) -> Self {
        TaskQuery {
            name: name.to_string(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Deterministic planner behavior: a template to instantiate, plus the
/// inputs it requires. Natural-language plan synthesis is out of scope; the
/// profile supplies the plan shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerProfile {
    pub required_inputs: Vec<String>,
    pub template: PlanTemplate,
}

/// The plan shape a planner profile instantiates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub steps: Vec<PlanStep>,
    pub criteria: Vec<AcceptanceCriterion>,
    pub plan_criteria: Vec<CriterionId>,
}

/// Instantiate a plan for `query` from the profile's template.
///
/// Criteria are stamped with `declared_at` so the pre-declaration invariant
/// is checkable from the log alone. Fails with `UnplannableQuery` when the
/// profile's required inputs are not all present.
pub fn build_plan(
    query: &TaskQuery,
    profile: &PlannerProfile,
    declared_at: EventIndex,
) -> Result<ExecutionPlan, PlanError> {
    if query.name.is_empty() {
        return Err(PlanError::UnplannableQuery {
            missing: vec!["task name".to_string()],
        });
    }
    let missing: Vec<String> = profile
        .required_inputs
        .iter()
        .filter(|r| !query.inputs.contains(r))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(PlanError::UnplannableQuery { missing });
    }
    let criteria = profile
        .template
        .criteria
        .iter()
        .cloned()
        .map(|mut c| {
            c.declared_at = declared_at;
            c
        })
        .collect();
    ExecutionPlan::new(
        profile.template.steps.clone(),
        criteria,
        profile.template.plan_criteria.clone(),
    )
}

/// Ready steps given the completed set: every step not yet complete whose
/// dependencies are all complete, ascending by id.
pub fn schedule(
    plan: &ExecutionPlan,
    completed: &BTreeSet<StepId>,
) -> Result<Vec<StepId>, PlanError> {
    if !plan.approved {
        return Err(PlanError::NotApproved);
    }
    // Steps are stored sorted by id, so the filter preserves the tie-break.
    Ok(plan
        .steps
        .iter()
        .filter(|s| !completed.contains(&s.id))
        .filter(|s| s.depends_on.iter().all(|d| completed.contains(d)))
        .map(|s| s.id)
        .collect())
}

/// How an approval authority responds to a proposed plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ApprovalPolicy {
    /// Accept any structurally valid plan.
    AutoAccept,
    /// Refuse with an edit request.
    Refuse { feedback: String },
    /// Guardrail deny-list: refuse plans containing these step kinds.
    DenyStepKinds { kinds: Vec<StepKind> },
}

/// Outcome of the approval gate. Refusal is a normal outcome, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ApprovalOutcome {
    Approved(ExecutionPlan),
    Refused { plan: ExecutionPlan, feedback: String },
}

/// Apply an approval policy. On acceptance the plan is marked approved and
/// records the approval event for the audit trail.
pub fn approve_plan(
    mut plan: ExecutionPlan,
    policy: &ApprovalPolicy,
    at: EventIndex,
) -> ApprovalOutcome {
    match policy {
        ApprovalPolicy::AutoAccept => {
            plan.approved = true;
            plan.approval_event = Some(at);
            ApprovalOutcome::Approved(plan)
        }
        ApprovalPolicy::Refuse { feedback } => ApprovalOutcome::Refused {
            plan,
            feedback: feedback.clone(),
        },
        ApprovalPolicy::DenyStepKinds { kinds } => {
            let blocked: Vec<String> = plan
                .steps
                .iter()
                .filter(|s| kinds.contains(&s.kind))
                .map(|s| format!("{} ({})", s.id, s.kind))
                .collect();
            if blocked.is_empty() {
                plan.approved = true;
                plan.approval_event = Some(at);
                ApprovalOutcome::Approved(plan)
            } else {
                ApprovalOutcome::Refused {
                    plan,
                    feedback: format!("blocked step kinds: {}", blocked.join(", ")),
                }
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("query cannot be planned; missing: {missing:?}")]
    UnplannableQuery { missing: Vec<String> },
    #[error("plan must contain at least one step")]
    EmptyPlan,
    #[error("duplicate step id {step}")]
    DuplicateStep { step: StepId },
    #[error("step {step} depends on unknown step {dependency}")]
    UnknownDependency { step: StepId, dependency: StepId },
    #[error("reference to unknown criterion {criterion}")]
    UnknownCriterion { criterion: CriterionId },
    #[error("plan dependency graph contains a cycle")]
    CycleDetected,
    #[error("unknown named policy {name:?}")]
    UnknownPolicy { name: String },
    #[error("plan is not approved; scheduling is gated on approval")]
    NotApproved,
}
