//! Session driver: walks one task from query to final user verdict.
//!
//! A session moves through the phase pipeline under a stage machine whose
//! every observable action lands in the append-only event log: messages are
//! sent under explicit visibility allow-lists and delivered either
//! immediately or by the sweep that runs at each phase boundary, artifacts
//! pass through the two-layer critique cascade with bounded retries and a
//! recovery ladder (feedback retry, tier escalation, cross-vendor
//! fallback), and each seat's calls are charged to the cost ledger. The
//! whole driver state is serializable, so a checkpoint plus the log prefix
//! up to it reproduces the remainder of the run event-for-event.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentError, AgentInstance, AgentSpec, Behavior, Fault, Prior, StochasticProfile, Tier,
};
use crate::artifact::ArtifactPayload;
use crate::cascade::{combine_verdicts, evaluate, CascadeError, CritiqueLayer, Verdict};
use crate::config::{CheckpointCadence, SimConfig};
use crate::exec::ExecManifest;
use crate::ids::{HandleId, MessageId, StepId, TeamId};
use crate::kernel::{
    dispatch, phase_sweep_recipients, relay_summary, AgentRole, ControlPayload, KernelError,
    MessageEnvelope, Payload, Phase, RoleKind, RoleRegistry, Scope, UserVerdict,
};
use crate::plan::{
    approve_plan, build_plan, schedule, AcceptanceCriterion, ApprovalOutcome, ApprovalPolicy,
    CriterionPredicate, ExecutionPlan, PlanError, PlanStep, PlanTemplate, PlannerProfile,
    StepKind, TaskQuery,
};
use crate::reason::ReasonCode;
use crate::store::{Checkpoint, EventKind, Ref, SessionEvent, SessionLog, StoreError};

// ============================================================================
// Definition
// ============================================================================

/// Everything needed to start (or re-create) a session deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDefinition {
    pub session_id: u64,
    pub seed: u64,
    pub config: SimConfig,
    pub query: TaskQuery,
    pub profile: PlannerProfile,
    pub approval_policy: ApprovalPolicy,
    /// Scripted writer faults keyed by writer specialization tag; the
    /// unspecialized writer uses the empty-string key. Seats without an
    /// entry behave stochastically.
    pub scripted: BTreeMap<String, Vec<Fault>>,
}

impl SessionDefinition {
    /// Standard single-step session used for cohort statistics: one chart
    /// step, so both inner critics review every artifact.
    pub fn cohort(session_id: u64, seed: u64, config: SimConfig) -> SessionDefinition {
        let retries = config.session.max_inner_retries;
        let c_step = AcceptanceCriterion {
            id: crate::ids::CriterionId(1),
            description: "artifact reports a result field".to_string(),
            predicate: CriterionPredicate::FieldPresent {
                field: "result".to_string(),
            },
            declared_at: 0,
        };
        let c_gate = AcceptanceCriterion {
            id: crate::ids::CriterionId(2),
            description: "assembled output reports a result field".to_string(),
            predicate: CriterionPredicate::FieldPresent {
                field: "result".to_string(),
            },
            declared_at: 0,
        };
        let step = PlanStep::new(1, StepKind::Chart)
            .with_criteria(&[c_step.id])
            .with_max_retries(retries);
        SessionDefinition {
            session_id,
            seed,
            config,
            query: TaskQuery::new("quarterly-close", &["ledger"]),
            profile: PlannerProfile {
                required_inputs: vec!["ledger".to_string()],
                template: PlanTemplate {
                    steps: vec![step],
                    criteria: vec![c_step, c_gate],
                    plan_criteria: vec![crate::ids::CriterionId(2)],
                },
            },
            approval_policy: ApprovalPolicy::AutoAccept,
            scripted: BTreeMap::new(),
        }
    }
}

// ============================================================================
// Step producers
// ============================================================================

/// A lineage-bearing citation recorded while a step runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub label: String,
    pub edges: Vec<(Ref, Ref)>,
}

/// What one step attempt yielded.
#[derive(Debug, Clone, PartialEq)]
pub struct Produced {
    pub artifact: ArtifactPayload,
    /// Data handle backing the artifact, when an executor built one.
    pub handle: Option<HandleId>,
    /// Executor calls to charge for this attempt.
    pub executor_calls: u32,
    pub citations: Vec<Citation>,
}

/// Strategy for turning a step attempt into an artifact. The default
/// wraps the writer's own draw; scenario runs drive a data executor.
pub trait StepProducer {
    fn produce(
        &mut self,
        step: &PlanStep,
        iteration: u32,
        prior: Prior,
        writer: &mut AgentInstance,
    ) -> Result<Produced, SessionError>;

    /// Serializable executor state to embed in checkpoints, if any.
    fn snapshot(&self) -> Option<ExecManifest> {
        None
    }

    /// Rebuild executor state from a checkpointed manifest.
    fn restore(&mut self, _manifest: &ExecManifest) -> Result<(), SessionError> {
        Ok(())
    }
}

/// Producer for simulated sessions: the artifact is whatever the writer
/// draws, with no executor behind it.
#[derive(Debug, Clone, Copy, Default)]
pub struct WriterProducer;

impl StepProducer for WriterProducer {
    fn produce(
        &mut self,
        step: &PlanStep,
        iteration: u32,
        prior: Prior,
        writer: &mut AgentInstance,
    ) -> Result<Produced, SessionError> {
        Ok(Produced {
            artifact: writer.produce(step, iteration, prior),
            handle: None,
            executor_calls: 0,
            citations: Vec::new(),
        })
    }
}

// ============================================================================
// Stage machine
// ============================================================================

/// Where the driver is inside the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Stage {
    Planning,
    AwaitApproval {
        plan_msg: MessageId,
    },
    StepProduce {
        step: StepId,
        iteration: u32,
        prior: Prior,
    },
    StepCritique {
        step: StepId,
        iteration: u32,
        artifact: ArtifactPayload,
        artifact_msg: MessageId,
    },
    OuterGate {
        step: StepId,
        artifact: ArtifactPayload,
        relay_msg: MessageId,
    },
    Synthesize {
        artifact: ArtifactPayload,
        relay_msg: MessageId,
    },
    AwaitUser {
        artifact: ArtifactPayload,
        request_msg: MessageId,
    },
    Escalate {
        reason: ReasonCode,
        step: Option<StepId>,
        missing: Vec<String>,
    },
    Done {
        verdict: UserVerdict,
    },
}

/// A sent message awaiting delivery to the visibility pairs not yet swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingDelivery {
    pub message: MessageEnvelope,
    /// Roles (by display name) already delivered to.
    pub delivered: BTreeSet<String>,
}

/// Complete serializable driver state; a checkpoint embeds this verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: u64,
    pub seed: u64,
    pub branch: String,
    pub team: TeamId,
    pub phase: Phase,
    pub stage: Stage,
    pub next_message: u64,
    pub next_checkpoint: u64,
    pub clock_ms: u64,
    /// Session-level draws (stream 0): the replan pre-draw lives here.
    pub session_rng: ChaCha8Rng,
    pub plan: Option<ExecutionPlan>,
    pub completed: BTreeSet<StepId>,
    /// Monotone attempt counter per step, across re-executions.
    pub step_attempts: BTreeMap<StepId, u32>,
    /// Rejections in the current execution run of each step.
    pub inner_rejections: BTreeMap<StepId, u32>,
    pub re_executions: u32,
    /// Step whose next attempt follows output-gate feedback.
    pub outer_feedback_for: Option<StepId>,
    /// Rejecting verdict messages from the last critique round; the retry
    /// artifact cites them as causal parents.
    pub last_feedback: Vec<MessageId>,
    pub agents: BTreeMap<String, AgentInstance>,
    pub pending: Vec<PendingDelivery>,
    /// Team-scoped traffic, kept for the synthesis rollup.
    pub team_transcript: Vec<MessageEnvelope>,
    /// Executor state captured at the last checkpoint, if the producer
    /// carries any.
    pub exec_manifest: Option<ExecManifest>,
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub verdict: UserVerdict,
    pub log: SessionLog,
    pub checkpoints: Vec<Checkpoint>,
}

// ============================================================================
// Agent roster
// ============================================================================

fn writer_profiles(config: &SimConfig) -> (StochasticProfile, StochasticProfile) {
    let r = &config.rates;
    let c = &config.costs;
    let mut detectable = BTreeMap::new();
    detectable.insert(Phase::InnerCritique, r.inner_detectable);
    detectable.insert(Phase::OuterCritique, r.outer_detectable);
    let junior = StochasticProfile {
        error_rate: r.error,
        detectable,
        false_positive_rate: 0.0,
        chart_share: r.chart_share,
        persistence: r.persistence,
        cost_milli: c.writer_call_milli,
        time_ms: c.writer_time_ms,
    };
    let senior = StochasticProfile {
        error_rate: r.error * r.senior_error_factor,
        ..junior.clone()
    };
    (junior, senior)
}

fn critic_profile(config: &SimConfig) -> StochasticProfile {
    StochasticProfile {
        error_rate: 0.0,
        detectable: BTreeMap::new(),
        false_positive_rate: config.rates.false_positive,
        chart_share: 0.0,
        persistence: 0.0,
        cost_milli: config.costs.critic_call_milli,
        time_ms: config.costs.critic_time_ms,
    }
}

fn executor_profile(config: &SimConfig) -> StochasticProfile {
    StochasticProfile {
        cost_milli: config.costs.executor_call_milli,
        time_ms: config.costs.executor_time_ms,
        ..StochasticProfile::inert()
    }
}

/// Seats that exist in every session, with their fixed rng streams. Writer
/// seats follow from stream 10 in specialization order, so critic streams
/// never shift when the plan shape changes.
const FIXED_SEATS: [(RoleKind, u64); 9] = [
    (RoleKind::Coordinator, 1),
    (RoleKind::Planner, 2),
    (RoleKind::CodeCritic, 3),
    (RoleKind::ChartCritic, 4),
    (RoleKind::OutputCritic, 5),
    (RoleKind::CodeExecutor, 6),
    (RoleKind::Summarizer, 7),
    (RoleKind::UserProxy, 8),
    (RoleKind::Guardrails, 9),
];

const WRITER_STREAM_BASE: u64 = 10;

fn build_agents(
    def: &SessionDefinition,
) -> Result<BTreeMap<String, AgentInstance>, SessionError> {
    let config = &def.config;
    let (junior, senior) = writer_profiles(config);
    let critic = critic_profile(config);
    let mut agents = BTreeMap::new();

    for (kind, stream) in FIXED_SEATS {
        let profile = match kind {
            RoleKind::CodeCritic | RoleKind::ChartCritic | RoleKind::OutputCritic => {
                critic.clone()
            }
            RoleKind::CodeExecutor => executor_profile(config),
            _ => StochasticProfile::inert(),
        };
        let spec = AgentSpec {
            role: AgentRole::new(kind),
            junior: profile.clone(),
            senior: profile,
            vendor: config.vendors.critics.clone(),
            fallback_vendor: config.vendors.fallback.clone(),
            behavior: Behavior::Stochastic,
            correlation: 0.0,
        };
        let instance = AgentInstance::new(spec, def.seed, stream)?;
        agents.insert(instance.role.to_string(), instance);
    }

    let mut writer_specs: BTreeSet<Option<String>> = BTreeSet::new();
    for step in &def.profile.template.steps {
        writer_specs.insert(step.writer_spec.clone());
    }
    if writer_specs.is_empty() {
        writer_specs.insert(None);
    }
    for (offset, tag) in writer_specs.into_iter().enumerate() {
        let role = match &tag {
            Some(t) => AgentRole::specialized(RoleKind::Writer, t)?,
            None => AgentRole::new(RoleKind::Writer),
        };
        let key = tag.unwrap_or_default();
        let behavior = match def.scripted.get(&key) {
            Some(faults) => Behavior::Scripted {
                faults: faults.clone(),
            },
            None => Behavior::Stochastic,
        };
        let spec = AgentSpec {
            role,
            junior: junior.clone(),
            senior: senior.clone(),
            vendor: config.vendors.writer.clone(),
            fallback_vendor: config.vendors.fallback.clone(),
            behavior,
            correlation: config.rates.correlation,
        };
        let instance = AgentInstance::new(spec, def.seed, WRITER_STREAM_BASE + offset as u64)?;
        agents.insert(instance.role.to_string(), instance);
    }
    Ok(agents)
}

fn registry_from(agents: &BTreeMap<String, AgentInstance>) -> RoleRegistry {
    let mut registry = RoleRegistry::new();
    for agent in agents.values() {
        registry.register(agent.role.clone());
    }
    registry
}

// ============================================================================
// Driver
// ============================================================================

pub struct Session<P: StepProducer> {
    pub definition: SessionDefinition,
    pub state: SessionState,
    pub log: SessionLog,
    pub checkpoints: Vec<Checkpoint>,
    registry: RoleRegistry,
    producer: P,
}

impl<P: StepProducer> Session<P> {
    pub fn new(definition: SessionDefinition, producer: P) -> Result<Self, SessionError> {
        let agents = build_agents(&definition)?;
        let registry = registry_from(&agents);
        let mut session_rng = ChaCha8Rng::seed_from_u64(definition.seed);
        session_rng.set_stream(0);
        let state = SessionState {
            session_id: definition.session_id,
            seed: definition.seed,
            branch: "main".to_string(),
            team: TeamId(1),
            phase: Phase::Planning,
            stage: Stage::Planning,
            next_message: 1,
            next_checkpoint: 1,
            clock_ms: 0,
            session_rng,
            plan: None,
            completed: BTreeSet::new(),
            step_attempts: BTreeMap::new(),
            inner_rejections: BTreeMap::new(),
            re_executions: 0,
            outer_feedback_for: None,
            last_feedback: Vec::new(),
            agents,
            pending: Vec::new(),
            team_transcript: Vec::new(),
            exec_manifest: None,
        };
        let log = SessionLog::new(definition.session_id, definition.seed, "main");
        Ok(Session {
            definition,
            state,
            log,
            checkpoints: Vec::new(),
            registry,
            producer,
        })
    }

    /// Resume from a verified checkpoint and the log prefix up to it.
    /// The continuation emits exactly the events the original run would
    /// have emitted from that point.
    pub fn restore(
        definition: SessionDefinition,
        mut producer: P,
        checkpoint: &Checkpoint,
        log: SessionLog,
    ) -> Result<Self, SessionError> {
        checkpoint.verify()?;
        let state: SessionState = serde_json::from_value(checkpoint.state.clone())
            .map_err(|e| SessionError::BadCheckpointState {
                detail: e.to_string(),
            })?;
        if log.next_index() != checkpoint.at_event {
            return Err(SessionError::LogCheckpointMismatch {
                log_next: log.next_index(),
                at_event: checkpoint.at_event,
            });
        }
        if let Some(manifest) = &state.exec_manifest {
            producer.restore(manifest)?;
        }
        let registry = registry_from(&state.agents);
        Ok(Session {
            definition,
            state,
            log,
            checkpoints: Vec::new(),
            registry,
            producer,
        })
    }

    /// Drive to completion and return the final user verdict.
    pub fn run(&mut self) -> Result<UserVerdict, SessionError> {
        loop {
            if let Stage::Done { verdict } = &self.state.stage {
                return Ok(*verdict);
            }
            self.tick()?;
        }
    }

    /// Consume the session, returning its audit log and checkpoints.
    pub fn into_run(self, verdict: UserVerdict) -> SessionRun {
        SessionRun {
            verdict,
            log: self.log,
            checkpoints: self.checkpoints,
        }
    }

    // ------------------------------------------------------------------
    // Event and message plumbing
    // ------------------------------------------------------------------

    fn emit(
        &mut self,
        kind: EventKind,
        lineage_edges: Vec<(Ref, Ref)>,
        wall_ms: u64,
        idle_ms: u64,
        credits_milli: i64,
    ) -> Result<u64, SessionError> {
        let index = self.log.next_index();
        self.state.clock_ms += wall_ms + idle_ms;
        self.log.append(SessionEvent {
            index,
            phase: self.state.phase,
            kind,
            lineage_edges,
            wall_ms,
            idle_ms,
            credits_milli,
        })?;
        Ok(index)
    }

    fn next_message_id(&mut self) -> MessageId {
        let id = MessageId(self.state.next_message);
        self.state.next_message += 1;
        id
    }

    fn envelope(
        &mut self,
        sender: AgentRole,
        scope: Scope,
        visibility: &[(AgentRole, Phase)],
        payload: Payload,
        parents: Vec<MessageId>,
    ) -> Result<MessageEnvelope, SessionError> {
        let id = self.next_message_id();
        MessageEnvelope::new(
            id,
            sender,
            self.state.phase,
            scope,
            visibility.iter().cloned().collect(),
            payload,
            parents,
        )
        .map_err(Into::into)
    }

    /// Record the send, deliver to whoever may see it in the current
    /// phase, and queue the rest for later sweeps.
    fn send(&mut self, message: MessageEnvelope, idle_ms: u64) -> Result<MessageId, SessionError> {
        let id = message.id;
        let edges = message
            .causal_parents
            .iter()
            .map(|p| (Ref::Message(*p), Ref::Message(id)))
            .collect();
        self.emit(
            EventKind::MessageSent {
                message: message.clone(),
            },
            edges,
            0,
            idle_ms,
            0,
        )?;
        if matches!(message.scope, Scope::Team(_)) {
            self.state.team_transcript.push(message.clone());
        }
        let mut delivered = BTreeSet::new();
        match dispatch(&message, &self.registry, self.state.phase) {
            Ok(recipients) => {
                for recipient in recipients {
                    self.emit(
                        EventKind::MessageDelivered {
                            message: id,
                            recipient: recipient.clone(),
                            delivered_in: self.state.phase,
                        },
                        Vec::new(),
                        0,
                        0,
                        0,
                    )?;
                    delivered.insert(recipient.to_string());
                }
            }
            // No recipient yet: the message waits for a phase sweep.
            Err(KernelError::EmptyVisibility { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        self.state.pending.push(PendingDelivery { message, delivered });
        self.prune_pending();
        Ok(id)
    }

    /// Move to `new`, sweep queued messages to newly eligible recipients,
    /// and checkpoint if the cadence asks for phase boundaries.
    fn advance_phase(&mut self, new: Phase) -> Result<(), SessionError> {
        self.state.phase = new;
        let mut deliveries: Vec<(usize, MessageId, AgentRole)> = Vec::new();
        for (i, entry) in self.state.pending.iter().enumerate() {
            for role in phase_sweep_recipients(&entry.message, &self.registry, new) {
                if !entry.delivered.contains(&role.to_string()) {
                    deliveries.push((i, entry.message.id, role));
                }
            }
        }
        for (i, id, role) in deliveries {
            self.emit(
                EventKind::MessageDelivered {
                    message: id,
                    recipient: role.clone(),
                    delivered_in: new,
                },
                Vec::new(),
                0,
                0,
                0,
            )?;
            self.state.pending[i].delivered.insert(role.to_string());
        }
        self.prune_pending();
        if matches!(
            self.definition.config.session.checkpoint_cadence,
            CheckpointCadence::PhaseBoundaries | CheckpointCadence::Decisions
        ) {
            self.take_checkpoint(&format!("phase:{new}"))?;
        }
        Ok(())
    }

    fn prune_pending(&mut self) {
        self.state.pending.retain(|entry| {
            entry
                .message
                .visibility
                .iter()
                .any(|(role, _)| !entry.delivered.contains(&role.to_string()))
        });
    }

    fn take_checkpoint(&mut self, label: &str) -> Result<(), SessionError> {
        self.state.exec_manifest = self.producer.snapshot();
        let id = self.state.next_checkpoint;
        self.state.next_checkpoint += 1;
        // The record lands after the event announcing it, so a resumed run
        // starts exactly at the first un-replayed event.
        let at_event = self.log.next_index() + 1;
        let state = serde_json::to_value(&self.state).map_err(|e| {
            SessionError::BadCheckpointState {
                detail: e.to_string(),
            }
        })?;
        let checkpoint = Checkpoint::new(
            id,
            self.state.session_id,
            self.state.branch.clone(),
            at_event,
            label,
            state,
        );
        self.emit(
            EventKind::CheckpointTaken {
                checkpoint: id,
                label: label.to_string(),
                digest: checkpoint.digest.clone(),
            },
            Vec::new(),
            0,
            0,
            0,
        )?;
        self.checkpoints.push(checkpoint);
        Ok(())
    }

    fn charge(
        &mut self,
        role: AgentRole,
        cost_milli: i64,
        time_ms: u64,
        recovery: bool,
    ) -> Result<(), SessionError> {
        self.emit(
            EventKind::CostIncurred {
                agent: role,
                recovery,
            },
            Vec::new(),
            time_ms,
            0,
            cost_milli,
        )?;
        Ok(())
    }

    // ------------------------------------------------------------------
    // Roster access
    // ------------------------------------------------------------------

    fn seat(kind: RoleKind) -> AgentRole {
        AgentRole::new(kind)
    }

    fn writer_role(step: &PlanStep) -> Result<AgentRole, SessionError> {
        match &step.writer_spec {
            Some(tag) => AgentRole::specialized(RoleKind::Writer, tag).map_err(Into::into),
            None => Ok(AgentRole::new(RoleKind::Writer)),
        }
    }

    fn agent_mut(&mut self, role: &AgentRole) -> Result<&mut AgentInstance, SessionError> {
        self.state
            .agents
            .get_mut(&role.to_string())
            .ok_or_else(|| SessionError::UnknownSeat {
                role: role.to_string(),
            })
    }

    fn plan(&self) -> Result<&ExecutionPlan, SessionError> {
        self.state.plan.as_ref().ok_or(SessionError::NoPlan)
    }

    fn plan_step(&self, id: StepId) -> Result<PlanStep, SessionError> {
        self.plan()?
            .step(id)
            .cloned()
            .ok_or(SessionError::UnknownStep { step: id })
    }

    // ------------------------------------------------------------------
    // Stage transitions
    // ------------------------------------------------------------------

    fn tick(&mut self) -> Result<(), SessionError> {
        match self.state.stage.clone() {
            Stage::Planning => self.tick_planning(),
            Stage::AwaitApproval { plan_msg } => self.tick_approval(plan_msg),
            Stage::StepProduce {
                step,
                iteration,
                prior,
            } => self.tick_produce(step, iteration, prior),
            Stage::StepCritique {
                step,
                iteration,
                artifact,
                artifact_msg,
            } => self.tick_critique(step, iteration, artifact, artifact_msg),
            Stage::OuterGate {
                step,
                artifact,
                relay_msg,
            } => self.tick_outer_gate(step, artifact, relay_msg),
            Stage::Synthesize {
                artifact,
                relay_msg,
            } => self.tick_synthesize(artifact, relay_msg),
            Stage::AwaitUser {
                artifact,
                request_msg,
            } => self.tick_await_user(artifact, request_msg),
            Stage::Escalate {
                reason,
                step,
                missing,
            } => self.tick_escalate(reason, step, missing),
            Stage::Done { .. } => Ok(()),
        }
    }

    fn tick_planning(&mut self) -> Result<(), SessionError> {
        // Session-level pre-draw: some queries arrive missing the inputs
        // the planner needs and can only be kicked back for a replan.
        let replan: bool = {
            let u: f64 = self.state.session_rng.gen();
            u < self.definition.config.rates.replan
        };
        let query = if replan {
            TaskQuery {
                name: self.definition.query.name.clone(),
                inputs: Vec::new(),
            }
        } else {
            self.definition.query.clone()
        };
        match build_plan(&query, &self.definition.profile, self.log.next_index()) {
            Ok(plan) => {
                let digest = plan.digest();
                let message = self.envelope(
                    Self::seat(RoleKind::Planner),
                    Scope::Session,
                    &[
                        (Self::seat(RoleKind::Coordinator), Phase::Approval),
                        (Self::seat(RoleKind::UserProxy), Phase::Approval),
                        (Self::seat(RoleKind::Guardrails), Phase::Approval),
                    ],
                    Payload::Plan(digest),
                    Vec::new(),
                )?;
                let plan_msg = self.send(message, 0)?;
                self.state.plan = Some(plan);
                // The next stage is committed before the phase advance so
                // the boundary checkpoint resumes into it, not behind it.
                self.state.stage = Stage::AwaitApproval { plan_msg };
                self.advance_phase(Phase::Approval)?;
                Ok(())
            }
            Err(PlanError::UnplannableQuery { missing }) => {
                self.begin_escalation(ReasonCode::ReplanMissingInputs, None, missing)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn tick_approval(&mut self, plan_msg: MessageId) -> Result<(), SessionError> {
        let plan = self.state.plan.take().ok_or(SessionError::NoPlan)?;
        let policy = self.definition.approval_policy.clone();
        let at = self.log.next_index();
        match approve_plan(plan, &policy, at) {
            ApprovalOutcome::Approved(plan) => {
                let message = self.envelope(
                    Self::seat(RoleKind::UserProxy),
                    Scope::Session,
                    &[(Self::seat(RoleKind::Coordinator), Phase::Approval)],
                    Payload::Control(ControlPayload::ApprovalGranted),
                    vec![plan_msg],
                )?;
                self.send(message, 0)?;
                self.state.plan = Some(plan);
                self.begin_next_step()?;
                self.advance_phase(Phase::Execution)
            }
            ApprovalOutcome::Refused { plan, feedback } => {
                let message = self.envelope(
                    Self::seat(RoleKind::Guardrails),
                    Scope::Session,
                    &[
                        (Self::seat(RoleKind::Coordinator), Phase::Approval),
                        (Self::seat(RoleKind::Planner), Phase::Approval),
                    ],
                    Payload::Control(ControlPayload::ApprovalRefused { feedback }),
                    vec![plan_msg],
                )?;
                self.send(message, 0)?;
                self.state.plan = Some(plan);
                self.begin_escalation(ReasonCode::GuardrailBlock, None, Vec::new())
            }
        }
    }

    /// Schedule the next ready step, in ascending id order.
    fn begin_next_step(&mut self) -> Result<(), SessionError> {
        let ready = schedule(self.plan()?, &self.state.completed)?;
        let step = *ready.first().ok_or(SessionError::NothingSchedulable)?;
        let iteration = self.state.step_attempts.get(&step).copied().unwrap_or(0) + 1;
        let prior = if self.state.outer_feedback_for == Some(step) {
            self.state.outer_feedback_for = None;
            Prior::OuterFeedback
        } else {
            Prior::Fresh
        };
        self.state.stage = Stage::StepProduce {
            step,
            iteration,
            prior,
        };
        Ok(())
    }

    fn tick_produce(
        &mut self,
        step: StepId,
        iteration: u32,
        prior: Prior,
    ) -> Result<(), SessionError> {
        let plan_step = self.plan_step(step)?;
        let writer_role = Self::writer_role(&plan_step)?;
        let team = self.state.team;

        // A fresh run of the step opens with an assignment; feedback
        // retries continue under the one already sent.
        if prior != Prior::InnerFeedback {
            let assignment = self.envelope(
                Self::seat(RoleKind::Coordinator),
                Scope::Team(team),
                &[(writer_role.clone(), Phase::Execution)],
                Payload::Control(ControlPayload::StepAssignment { step }),
                Vec::new(),
            )?;
            self.send(assignment, 0)?;
        }

        let produced = {
            let writer = self
                .state
                .agents
                .get_mut(&writer_role.to_string())
                .ok_or_else(|| SessionError::UnknownSeat {
                    role: writer_role.to_string(),
                })?;
            self.producer.produce(&plan_step, iteration, prior, writer)?
        };
        self.state.step_attempts.insert(step, iteration);

        let recovery = iteration > 1 || prior == Prior::OuterFeedback;
        let (writer_cost, writer_time) = {
            let writer = self.agent_mut(&writer_role)?;
            (writer.cost_milli(), writer.time_ms())
        };
        self.charge(writer_role.clone(), writer_cost, writer_time, recovery)?;
        if produced.executor_calls > 0 {
            let executor = Self::seat(RoleKind::CodeExecutor);
            let (cost, time) = {
                let seat = self.agent_mut(&executor)?;
                (seat.cost_milli(), seat.time_ms())
            };
            for _ in 0..produced.executor_calls {
                self.charge(executor.clone(), cost, time, recovery)?;
            }
        }

        let mut visibility = vec![
            (Self::seat(RoleKind::CodeCritic), Phase::InnerCritique),
            (Self::seat(RoleKind::Coordinator), Phase::InnerCritique),
        ];
        if plan_step.kind == StepKind::Chart {
            visibility.push((Self::seat(RoleKind::ChartCritic), Phase::InnerCritique));
        }
        let parents = std::mem::take(&mut self.state.last_feedback);
        let message = self.envelope(
            writer_role,
            Scope::Team(team),
            &visibility,
            Payload::Artifact(produced.artifact.clone()),
            parents,
        )?;
        let artifact_msg = self.send(message, 0)?;

        let mut edges = vec![(Ref::Step(step), Ref::Message(artifact_msg))];
        if let Some(handle) = produced.handle {
            edges.push((Ref::Handle(handle), Ref::Message(artifact_msg)));
        }
        self.emit(
            EventKind::ArtifactProduced {
                message: artifact_msg,
                step,
                iteration,
                handle: produced.handle,
            },
            edges,
            0,
            0,
            0,
        )?;
        for citation in produced.citations {
            self.emit(
                EventKind::CitationRecorded {
                    label: citation.label,
                },
                citation.edges,
                0,
                0,
                0,
            )?;
        }

        self.state.stage = Stage::StepCritique {
            step,
            iteration,
            artifact: produced.artifact,
            artifact_msg,
        };
        self.advance_phase(Phase::InnerCritique)?;
        if self.definition.config.session.checkpoint_cadence == CheckpointCadence::Decisions {
            self.take_checkpoint(&format!("decision:{step}:i{iteration}"))?;
        }
        Ok(())
    }

    fn reviewers(kind: StepKind) -> Vec<(RoleKind, CritiqueLayer)> {
        let mut seats = vec![(RoleKind::CodeCritic, CritiqueLayer::L1Code)];
        if kind == StepKind::Chart {
            seats.push((RoleKind::ChartCritic, CritiqueLayer::L1Chart));
        }
        seats
    }

    fn tick_critique(
        &mut self,
        step: StepId,
        iteration: u32,
        artifact: ArtifactPayload,
        artifact_msg: MessageId,
    ) -> Result<(), SessionError> {
        let plan_step = self.plan_step(step)?;
        let writer_role = Self::writer_role(&plan_step)?;
        let criteria: Vec<AcceptanceCriterion> = self
            .plan()?
            .step_criteria(step)
            .into_iter()
            .cloned()
            .collect();
        let team = self.state.team;

        let mut verdicts = Vec::new();
        let mut reject_msgs = Vec::new();
        for (seat_kind, layer) in Self::reviewers(artifact.kind) {
            let critic_role = Self::seat(seat_kind);
            let payload = {
                let refs: Vec<&AcceptanceCriterion> = criteria.iter().collect();
                let critic = self
                    .state
                    .agents
                    .get_mut(&critic_role.to_string())
                    .ok_or_else(|| SessionError::UnknownSeat {
                        role: critic_role.to_string(),
                    })?;
                evaluate(critic, layer, &artifact, &refs)?
            };
            let (cost, time) = {
                let critic = self.agent_mut(&critic_role)?;
                (critic.cost_milli(), critic.time_ms())
            };
            self.charge(critic_role.clone(), cost, time, iteration > 1)?;

            let verdict = payload.verdict;
            let failed = payload.failed_criteria.clone();
            let message = self.envelope(
                critic_role,
                Scope::Team(team),
                &[
                    (writer_role.clone(), Phase::Execution),
                    (Self::seat(RoleKind::Coordinator), Phase::InnerCritique),
                ],
                Payload::Verdict(payload.clone()),
                vec![artifact_msg],
            )?;
            let verdict_msg = self.send(message, 0)?;
            let mut edges = vec![(Ref::Message(artifact_msg), Ref::Message(verdict_msg))];
            for criterion in &failed {
                edges.push((Ref::Criterion(*criterion), Ref::Message(verdict_msg)));
            }
            self.emit(
                EventKind::VerdictIssued {
                    message: verdict_msg,
                    verdict,
                    layer,
                    step: Some(step),
                    iteration,
                },
                edges,
                0,
                0,
                0,
            )?;
            if verdict != Verdict::Approve {
                reject_msgs.push(verdict_msg);
            }
            verdicts.push(payload);
        }

        match combine_verdicts(&verdicts) {
            None => {
                self.agent_mut(&writer_role)?.note_approval();
                self.state.last_feedback.clear();
                self.state.completed.insert(step);
                let all_done =
                    self.state.completed.len() == self.plan()?.steps().len();
                if all_done {
                    self.relay_to_gate(step, artifact, artifact_msg)
                } else {
                    self.begin_next_step()?;
                    self.advance_phase(Phase::Execution)
                }
            }
            Some(feedback) => {
                let consecutive = self.agent_mut(&writer_role)?.note_rejection();
                *self.state.inner_rejections.entry(step).or_insert(0) += 1;
                self.state.last_feedback = reject_msgs;

                if self.state.inner_rejections[&step] > plan_step.max_retries {
                    return self.begin_escalation(
                        ReasonCode::RetriesExhausted,
                        Some(step),
                        Vec::new(),
                    );
                }
                // Recovery ladder: seniority first, cross-vendor after.
                if consecutive >= self.definition.config.session.tier_escalation_after {
                    let reason = feedback
                        .reasons
                        .first()
                        .copied()
                        .unwrap_or(ReasonCode::ReviewDiscretion);
                    let writer = self.agent_mut(&writer_role)?;
                    if writer.tier == Tier::Junior {
                        writer.escalate_tier()?;
                    } else {
                        writer.switch_to_fallback_vendor();
                    }
                    self.emit(
                        EventKind::EscalationRaised {
                            reason,
                            step: Some(step),
                        },
                        vec![(Ref::Step(step), Ref::Event(self.log.next_index()))],
                        0,
                        0,
                        0,
                    )?;
                }
                self.state.stage = Stage::StepProduce {
                    step,
                    iteration: iteration + 1,
                    prior: Prior::InnerFeedback,
                };
                self.advance_phase(Phase::Execution)
            }
        }
    }

    /// Forward the inner-approved final artifact across the team boundary:
    /// the gate and the summarizer see this relay, never the team's drafts.
    fn relay_to_gate(
        &mut self,
        step: StepId,
        artifact: ArtifactPayload,
        artifact_msg: MessageId,
    ) -> Result<(), SessionError> {
        let message = self.envelope(
            Self::seat(RoleKind::Coordinator),
            Scope::Session,
            &[
                (Self::seat(RoleKind::OutputCritic), Phase::OuterCritique),
                (Self::seat(RoleKind::Summarizer), Phase::Synthesis),
            ],
            Payload::Artifact(artifact.clone()),
            vec![artifact_msg],
        )?;
        let relay_msg = self.send(message, 0)?;
        self.state.stage = Stage::OuterGate {
            step,
            artifact,
            relay_msg,
        };
        self.advance_phase(Phase::OuterCritique)?;
        if self.definition.config.session.checkpoint_cadence == CheckpointCadence::Decisions {
            self.take_checkpoint(&format!("decision:gate:{step}"))?;
        }
        Ok(())
    }

    fn tick_outer_gate(
        &mut self,
        step: StepId,
        artifact: ArtifactPayload,
        relay_msg: MessageId,
    ) -> Result<(), SessionError> {
        let criteria: Vec<AcceptanceCriterion> = self
            .plan()?
            .gate_criteria()
            .into_iter()
            .cloned()
            .collect();
        let critic_role = Self::seat(RoleKind::OutputCritic);
        let payload = {
            let refs: Vec<&AcceptanceCriterion> = criteria.iter().collect();
            let critic = self
                .state
                .agents
                .get_mut(&critic_role.to_string())
                .ok_or_else(|| SessionError::UnknownSeat {
                    role: critic_role.to_string(),
                })?;
            evaluate(critic, CritiqueLayer::L2Output, &artifact, &refs)?
        };
        let (cost, time) = {
            let critic = self.agent_mut(&critic_role)?;
            (critic.cost_milli(), critic.time_ms())
        };
        self.charge(critic_role.clone(), cost, time, self.state.re_executions > 0)?;

        let verdict = payload.verdict;
        let failed = payload.failed_criteria.clone();
        let iteration = artifact.iteration;
        let plan_step = self.plan_step(step)?;
        let writer_role = Self::writer_role(&plan_step)?;
        let visibility: Vec<(AgentRole, Phase)> = if verdict == Verdict::Approve {
            vec![
                (Self::seat(RoleKind::Coordinator), Phase::OuterCritique),
                (Self::seat(RoleKind::Summarizer), Phase::Synthesis),
            ]
        } else {
            vec![
                (Self::seat(RoleKind::Coordinator), Phase::OuterCritique),
                (writer_role.clone(), Phase::Execution),
            ]
        };
        let message = self.envelope(
            critic_role,
            Scope::Session,
            &visibility,
            Payload::Verdict(payload),
            vec![relay_msg],
        )?;
        let verdict_msg = self.send(message, 0)?;
        let mut edges = vec![(Ref::Message(relay_msg), Ref::Message(verdict_msg))];
        for criterion in &failed {
            edges.push((Ref::Criterion(*criterion), Ref::Message(verdict_msg)));
        }
        self.emit(
            EventKind::VerdictIssued {
                message: verdict_msg,
                verdict,
                layer: CritiqueLayer::L2Output,
                step: Some(step),
                iteration,
            },
            edges,
            0,
            0,
            0,
        )?;

        if verdict == Verdict::Approve {
            self.state.stage = Stage::Synthesize {
                artifact,
                relay_msg,
            };
            return self.advance_phase(Phase::Synthesis);
        }

        self.state.re_executions += 1;
        if self.state.re_executions > self.definition.config.session.re_execution_cap {
            return self.begin_escalation(
                ReasonCode::ConflictUnresolved,
                Some(step),
                Vec::new(),
            );
        }
        let order = self.envelope(
            Self::seat(RoleKind::Coordinator),
            Scope::Team(self.state.team),
            &[(writer_role, Phase::Execution)],
            Payload::Control(ControlPayload::ReExecution { steps: vec![step] }),
            vec![verdict_msg],
        )?;
        let order_msg = self.send(order, 0)?;
        self.state.last_feedback = vec![order_msg];
        self.state.completed.remove(&step);
        self.state.inner_rejections.insert(step, 0);
        self.state.outer_feedback_for = Some(step);
        self.begin_next_step()?;
        self.advance_phase(Phase::Execution)
    }

    fn tick_synthesize(
        &mut self,
        artifact: ArtifactPayload,
        relay_msg: MessageId,
    ) -> Result<(), SessionError> {
        let summary_id = self.next_message_id();
        let summary = {
            let inputs: Vec<&MessageEnvelope> = self.state.team_transcript.iter().collect();
            relay_summary(
                &inputs,
                summary_id,
                &Self::seat(RoleKind::Summarizer),
                &Self::seat(RoleKind::Coordinator),
                Phase::Synthesis,
            )?
        };
        let summary_msg = self.send(summary, 0)?;
        let request = self.envelope(
            Self::seat(RoleKind::Coordinator),
            Scope::Session,
            &[(Self::seat(RoleKind::UserProxy), Phase::Synthesis)],
            Payload::Control(ControlPayload::ApprovalRequest),
            vec![relay_msg, summary_msg],
        )?;
        let request_msg = self.send(request, 0)?;
        self.state.stage = Stage::AwaitUser {
            artifact,
            request_msg,
        };
        Ok(())
    }

    fn tick_await_user(
        &mut self,
        artifact: ArtifactPayload,
        request_msg: MessageId,
    ) -> Result<(), SessionError> {
        // The proxy stands in for ground truth: anything still defective
        // when it reaches the user is found there.
        let verdict = if artifact.is_clean() {
            UserVerdict::Approved
        } else {
            UserVerdict::Rejected
        };
        let idle_ms = match verdict {
            UserVerdict::Approved => self.definition.config.costs.user_idle_approve_ms,
            _ => self.definition.config.costs.user_idle_reject_ms,
        };
        let message = self.envelope(
            Self::seat(RoleKind::UserProxy),
            Scope::Session,
            &[(Self::seat(RoleKind::Coordinator), Phase::Synthesis)],
            Payload::Control(ControlPayload::UserDecision { verdict }),
            vec![request_msg],
        )?;
        self.send(message, idle_ms)?;
        self.state.stage = Stage::Done { verdict };
        Ok(())
    }

    fn begin_escalation(
        &mut self,
        reason: ReasonCode,
        step: Option<StepId>,
        missing: Vec<String>,
    ) -> Result<(), SessionError> {
        let edges = step
            .map(|s| vec![(Ref::Step(s), Ref::Event(self.log.next_index()))])
            .unwrap_or_default();
        self.emit(EventKind::EscalationRaised { reason, step }, edges, 0, 0, 0)?;
        self.state.stage = Stage::Escalate {
            reason,
            step,
            missing,
        };
        self.advance_phase(Phase::Escalation)
    }

    fn tick_escalate(
        &mut self,
        reason: ReasonCode,
        _step: Option<StepId>,
        missing: Vec<String>,
    ) -> Result<(), SessionError> {
        let notice = self.envelope(
            Self::seat(RoleKind::Coordinator),
            Scope::Session,
            &[(Self::seat(RoleKind::UserProxy), Phase::Escalation)],
            Payload::Control(ControlPayload::EscalationNotice { reason }),
            Vec::new(),
        )?;
        let notice_msg = self.send(notice, 0)?;
        let request = self.envelope(
            Self::seat(RoleKind::Coordinator),
            Scope::Session,
            &[
                (Self::seat(RoleKind::UserProxy), Phase::Escalation),
                (Self::seat(RoleKind::Planner), Phase::Escalation),
            ],
            Payload::Control(ControlPayload::ReplanRequest { reason, missing }),
            vec![notice_msg],
        )?;
        let request_msg = self.send(request, 0)?;
        let decision = self.envelope(
            Self::seat(RoleKind::UserProxy),
            Scope::Session,
            &[(Self::seat(RoleKind::Coordinator), Phase::Escalation)],
            Payload::Control(ControlPayload::UserDecision {
                verdict: UserVerdict::ReplanRequested,
            }),
            vec![request_msg],
        )?;
        self.send(decision, self.definition.config.costs.user_idle_replan_ms)?;
        self.state.stage = Stage::Done {
            verdict: UserVerdict::ReplanRequested,
        };
        Ok(())
    }
}

/// Build, run, and dismantle one session in a single call.
pub fn run_session<P: StepProducer>(
    definition: SessionDefinition,
    producer: P,
) -> Result<SessionRun, SessionError> {
    let mut session = Session::new(definition, producer)?;
    let verdict = session.run()?;
    Ok(session.into_run(verdict))
}

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("producer failure: {detail}")]
    Producer { detail: String },
    #[error("no seat registered for role {role}")]
    UnknownSeat { role: String },
    #[error("no plan in state")]
    NoPlan,
    #[error("plan has no step {step}")]
    UnknownStep { step: StepId },
    #[error("nothing schedulable but plan incomplete")]
    NothingSchedulable,
    #[error("checkpoint state does not deserialize: {detail}")]
    BadCheckpointState { detail: String },
    #[error("log next index {log_next} does not meet checkpoint at_event {at_event}")]
    LogCheckpointMismatch { log_next: u64, at_event: u64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EventKind;

    fn quiet_config() -> SimConfig {
        let mut config = SimConfig::default();
        config.session.checkpoint_cadence = CheckpointCadence::Off;
        config
    }

    fn forced(error: f64, inner: f64, outer: f64, persistence: f64) -> SimConfig {
        let mut config = quiet_config();
        config.rates.error = error;
        config.rates.inner_detectable = inner;
        config.rates.outer_detectable = outer;
        config.rates.persistence = persistence;
        config.rates.replan = 0.0;
        config
    }

    fn run(seed: u64, config: SimConfig) -> SessionRun {
        let def = SessionDefinition::cohort(1, seed, config);
        run_session(def, WriterProducer).expect("session runs")
    }

    fn verdict_of(log: &SessionLog) -> Option<UserVerdict> {
        log.events().iter().rev().find_map(|e| match &e.kind {
            EventKind::MessageSent { message } => match &message.payload {
                Payload::Control(ControlPayload::UserDecision { verdict }) => Some(*verdict),
                _ => None,
            },
            _ => None,
        })
    }

    fn sent_envelopes(log: &SessionLog) -> BTreeMap<MessageId, MessageEnvelope> {
        log.events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::MessageSent { message } => Some((message.id, message.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn clean_session_ends_approved() {
        let out = run(7, forced(0.0, 0.0, 0.0, 0.0));
        assert_eq!(out.verdict, UserVerdict::Approved);
        assert_eq!(verdict_of(&out.log), Some(UserVerdict::Approved));
        let rejects = out
            .log
            .events()
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::VerdictIssued {
                        verdict: Verdict::Reject,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(rejects, 0);
    }

    #[test]
    fn same_seed_same_log() {
        let config = quiet_config();
        let a = run(42, config.clone());
        let b = run(42, config);
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
        assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn different_seeds_differ_somewhere() {
        let config = quiet_config();
        let logs: Vec<String> = (0..20)
            .map(|seed| run(seed, config.clone()).log.to_jsonl())
            .collect();
        let distinct: BTreeSet<&String> = logs.iter().collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn inner_reject_then_repair_is_recovery() {
        // Certain defect, certainly caught, never survives repair: exactly
        // one inner rejection, then a clean approved retry.
        let out = run(3, forced(1.0, 1.0, 0.0, 0.0));
        assert_eq!(out.verdict, UserVerdict::Approved);
        let inner_rejects = out
            .log
            .events()
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::VerdictIssued {
                        verdict: Verdict::Reject,
                        layer: CritiqueLayer::L1Code | CritiqueLayer::L1Chart,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(inner_rejects, 1);
        let recovery_spend: i64 = out
            .log
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::CostIncurred { recovery: true, .. }))
            .map(|e| e.credits_milli)
            .sum();
        assert!(recovery_spend > 0);
    }

    #[test]
    fn outer_reject_forces_reexecution() {
        // Defect invisible inside the team but certain at the gate; the
        // re-executed attempt draws at error x persistence = 0 and passes.
        let out = run(5, forced(1.0, 0.0, 1.0, 0.0));
        assert_eq!(out.verdict, UserVerdict::Approved);
        let outer_rejects = out
            .log
            .events()
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::VerdictIssued {
                        verdict: Verdict::Reject,
                        layer: CritiqueLayer::L2Output,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(outer_rejects, 1);
        let envelopes = sent_envelopes(&out.log);
        assert!(envelopes.values().any(|m| matches!(
            m.payload,
            Payload::Control(ControlPayload::ReExecution { .. })
        )));
    }

    #[test]
    fn uncatchable_defect_reaches_user() {
        let out = run(9, forced(1.0, 0.0, 0.0, 0.0));
        assert_eq!(out.verdict, UserVerdict::Rejected);
    }

    #[test]
    fn retry_exhaustion_escalates_to_replan() {
        let mut config = forced(1.0, 1.0, 0.0, 1.0);
        config.session.max_inner_retries = 4;
        let out = run(11, config);
        assert_eq!(out.verdict, UserVerdict::ReplanRequested);
        let exhausted = out.log.events().iter().any(|e| {
            matches!(
                e.kind,
                EventKind::EscalationRaised {
                    reason: ReasonCode::RetriesExhausted,
                    ..
                }
            )
        });
        assert!(exhausted);
        // Rejections stop one past the budget.
        let inner_rejects = out
            .log
            .events()
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::VerdictIssued {
                        verdict: Verdict::Reject,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(inner_rejects, 5);
    }

    #[test]
    fn tier_ladder_promotes_then_switches_vendor() {
        let mut config = forced(1.0, 1.0, 0.0, 1.0);
        config.session.max_inner_retries = 8;
        config.session.tier_escalation_after = 2;
        let def = SessionDefinition::cohort(1, 13, config);
        let mut session = Session::new(def, WriterProducer).expect("builds");
        let _ = session.run().expect("runs");
        let writer = &session.state.agents["writer"];
        assert_eq!(writer.tier, Tier::Senior);
        assert_eq!(writer.vendor, "meridian");
    }

    #[test]
    fn replan_predraw_skips_planning() {
        let mut config = quiet_config();
        config.rates.replan = 1.0;
        let out = run(17, config);
        assert_eq!(out.verdict, UserVerdict::ReplanRequested);
        let envelopes = sent_envelopes(&out.log);
        assert!(!envelopes
            .values()
            .any(|m| matches!(m.payload, Payload::Plan(_))));
        assert!(out.log.events().iter().any(|e| matches!(
            e.kind,
            EventKind::EscalationRaised {
                reason: ReasonCode::ReplanMissingInputs,
                ..
            }
        )));
    }

    #[test]
    fn guardrail_denial_ends_in_replan() {
        let mut def = SessionDefinition::cohort(1, 19, quiet_config());
        def.approval_policy = ApprovalPolicy::DenyStepKinds {
            kinds: vec![StepKind::Chart],
        };
        let out = run_session(def, WriterProducer).expect("runs");
        assert_eq!(out.verdict, UserVerdict::ReplanRequested);
        assert!(out.log.events().iter().any(|e| matches!(
            e.kind,
            EventKind::EscalationRaised {
                reason: ReasonCode::GuardrailBlock,
                ..
            }
        )));
    }

    #[test]
    fn every_delivery_is_on_the_allow_list() {
        for seed in 0..30 {
            let out = run(seed, quiet_config());
            let envelopes = sent_envelopes(&out.log);
            for event in out.log.events() {
                if let EventKind::MessageDelivered {
                    message,
                    recipient,
                    delivered_in,
                } = &event.kind
                {
                    let envelope = envelopes.get(message).expect("delivered message was sent");
                    assert!(
                        envelope.visible_to(recipient, *delivered_in),
                        "delivery of {message} to {recipient} in {delivered_in} not allowed"
                    );
                }
            }
        }
    }

    #[test]
    fn no_delivery_happens_twice() {
        for seed in 0..20 {
            let out = run(seed, quiet_config());
            let mut seen = BTreeSet::new();
            for event in out.log.events() {
                if let EventKind::MessageDelivered {
                    message, recipient, ..
                } = &event.kind
                {
                    assert!(
                        seen.insert((*message, recipient.to_string())),
                        "{message} delivered twice to {recipient}"
                    );
                }
            }
        }
    }

    #[test]
    fn inner_rejections_stay_inside_the_team() {
        for seed in 0..30 {
            let out = run(seed, forced(0.9, 0.9, 0.5, 0.3));
            for envelope in sent_envelopes(&out.log).values() {
                if let Payload::Verdict(v) = &envelope.payload {
                    if v.layer != CritiqueLayer::L2Output && v.verdict != Verdict::Approve {
                        assert!(matches!(envelope.scope, Scope::Team(_)));
                        for (_, phase) in &envelope.visibility {
                            assert!(
                                *phase <= Phase::InnerCritique,
                                "inner rejection visible at {phase}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn criteria_predate_every_verdict() {
        let out = run(23, quiet_config());
        let plan_declared: Vec<u64> = {
            let def = SessionDefinition::cohort(1, 23, quiet_config());
            let mut session = Session::new(def, WriterProducer).expect("builds");
            session.run().expect("runs");
            session
                .state
                .plan
                .expect("plan kept")
                .criteria()
                .map(|c| c.declared_at)
                .collect()
        };
        let first_verdict = out
            .log
            .events()
            .iter()
            .find(|e| matches!(e.kind, EventKind::VerdictIssued { .. }))
            .map(|e| e.index)
            .expect("at least one verdict");
        for declared in plan_declared {
            assert!(declared < first_verdict);
        }
    }

    #[test]
    fn checkpoints_replay_to_identical_logs() {
        let mut config = SimConfig::default();
        config.session.checkpoint_cadence = CheckpointCadence::PhaseBoundaries;
        config.rates.replan = 0.0;
        // A seed whose run includes at least one inner rejection, so the
        // replay crosses rng-bearing decisions.
        let def = SessionDefinition::cohort(1, 29, config);
        let original = run_session(def.clone(), WriterProducer).expect("runs");
        assert!(!original.checkpoints.is_empty());
        for checkpoint in &original.checkpoints {
            let prefix = original.log.fork(checkpoint.at_event, 1);
            let mut resumed =
                Session::restore(def.clone(), WriterProducer, checkpoint, prefix)
                    .expect("restores");
            let verdict = resumed.run().expect("resumed run completes");
            assert_eq!(verdict, original.verdict);
            assert_eq!(
                resumed.log.events(),
                original.log.events(),
                "divergence replaying from checkpoint {}",
                checkpoint.id
            );
        }
    }

    #[test]
    fn decision_cadence_adds_checkpoints() {
        let mut config = SimConfig::default();
        config.rates.replan = 0.0;
        config.session.checkpoint_cadence = CheckpointCadence::PhaseBoundaries;
        let boundaries = run_session(SessionDefinition::cohort(1, 31, config.clone()), WriterProducer)
            .expect("runs")
            .checkpoints
            .len();
        config.session.checkpoint_cadence = CheckpointCadence::Decisions;
        let decisions = run_session(SessionDefinition::cohort(1, 31, config), WriterProducer)
            .expect("runs")
            .checkpoints
            .len();
        assert!(decisions > boundaries);
    }

    #[test]
    fn corrupted_checkpoint_is_refused() {
        let mut config = SimConfig::default();
        config.rates.replan = 0.0;
        config.session.checkpoint_cadence = CheckpointCadence::PhaseBoundaries;
        let def = SessionDefinition::cohort(1, 37, config);
        let original = run_session(def.clone(), WriterProducer).expect("runs");
        let mut tampered = original.checkpoints[0].clone();
        tampered.at_event += 1;
        let prefix = original.log.fork(tampered.at_event, 1);
        match Session::restore(def, WriterProducer, &tampered, prefix) {
            Err(SessionError::Store(StoreError::CorruptCheckpoint { .. })) => {}
            Err(other) => panic!("wrong error: {other}"),
            Ok(_) => panic!("tampered checkpoint accepted"),
        }
    }

    #[test]
    fn user_idle_is_attributed_to_the_decision() {
        let out = run(41, forced(0.0, 0.0, 0.0, 0.0));
        let idle: Vec<u64> = out
            .log
            .events()
            .iter()
            .filter(|e| e.idle_ms > 0)
            .map(|e| e.idle_ms)
            .collect();
        assert_eq!(idle, vec![4_000]);
    }

    #[test]
    fn costs_cover_every_writer_and_critic_call() {
        let out = run(43, forced(0.0, 0.0, 0.0, 0.0));
        // One writer attempt, two inner reviews, one gate review.
        let charged: Vec<String> = out
            .log
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::CostIncurred { agent, .. } => Some(agent.to_string()),
                _ => None,
            })
            .collect();
        assert_eq!(
            charged,
            vec!["writer", "code_critic", "chart_critic", "output_critic"]
        );
        let total: i64 = out.log.events().iter().map(|e| e.credits_milli).sum();
        assert_eq!(total, 5_000 + 2_000 + 2_000 + 2_000);
    }
}
