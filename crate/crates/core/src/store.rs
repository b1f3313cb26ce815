//! Event-sourced session log, content-hashed checkpoints, and post-hoc
//! audit traversals.
//!
//! A session appends [`SessionEvent`]s with dense indices; nothing ever
//! mutates or removes an event. The on-disk format is one structured record
//! per line with a header record carrying the schema version, session id,
//! seed, and branch. Lineage edges embedded in events form a graph over
//! [`Ref`]s; [`trace_backward`] walks it upstream from a result and
//! [`exposure_analysis`] walks it downstream from a fact, and the two are
//! adjoint. Checkpoints carry opaque serialized session state guarded by a
//! content digest, verified on restore. Time-travel forks land on branch
//! ids of the form `parent/branch-N`; the original log is never rewritten.

use crate::cascade::{CritiqueLayer, Verdict};
use crate::ids::{CriterionId, EventIndex, HandleId, MessageId, StepId};
use crate::kernel::{AgentRole, MessageEnvelope, Phase};
use crate::reason::ReasonCode;
use crate::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// A node in the audit graph: anything lineage edges can connect.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ref {
    /// An event by index.
    Event(EventIndex),
    /// A message by id.
    Message(MessageId),
    /// A stored table by handle.
    Handle(HandleId),
    /// One column of a stored table.
    Column(HandleId, String),
    /// A plan step.
    Step(StepId),
    /// A pre-declared acceptance criterion.
    Criterion(CriterionId),
    /// A configuration key.
    Config(String),
    /// A named session input.
    Input(String),
    /// A named figure in a report or summary.
    Fact(String),
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Event(i) => write!(f, "e{i}"),
            Ref::Message(m) => write!(f, "{m}"),
            Ref::Handle(h) => write!(f, "{h}"),
            Ref::Column(h, c) => write!(f, "{h}.{c}"),
            Ref::Step(s) => write!(f, "{s}"),
            Ref::Criterion(c) => write!(f, "{c}"),
            Ref::Config(k) => write!(f, "cfg:{k}"),
            Ref::Input(n) => write!(f, "in:{n}"),
            Ref::Fact(n) => write!(f, "fact:{n}"),
        }
    }
}

impl FromStr for Ref {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(key) = s.strip_prefix("cfg:") {
            return Ok(Ref::Config(key.to_string()));
        }
        if let Some(name) = s.strip_prefix("in:") {
            return Ok(Ref::Input(name.to_string()));
        }
        if let Some(name) = s.strip_prefix("fact:") {
            return Ok(Ref::Fact(name.to_string()));
        }
        let (prefix, rest) = s.split_at(s.len().min(1));
        let parse_u64 = |digits: &str| {
            digits
                .parse::<u64>()
                .map_err(|_| format!("malformed ref {s:?}"))
        };
        match prefix {
            "e" => Ok(Ref::Event(parse_u64(rest)?)),
            "m" => Ok(Ref::Message(MessageId(parse_u64(rest)?))),
            "s" => Ok(Ref::Step(StepId(parse_u64(rest)?))),
            "c" => Ok(Ref::Criterion(CriterionId(parse_u64(rest)?))),
            "h" => match rest.split_once('.') {
                Some((h, col)) if !col.is_empty() => {
                    Ok(Ref::Column(HandleId(parse_u64(h)?), col.to_string()))
                }
                Some(_) => Err(format!("malformed ref {s:?}")),
                None => Ok(Ref::Handle(HandleId(parse_u64(rest)?))),
            },
            _ => Err(format!("malformed ref {s:?}")),
        }
    }
}

impl TryFrom<String> for Ref {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Ref> for String {
    fn from(r: Ref) -> String {
        r.to_string()
    }
}

/// What happened, with its structured payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    MessageSent {
        message: MessageEnvelope,
    },
    MessageDelivered {
        message: MessageId,
        recipient: AgentRole,
        delivered_in: Phase,
    },
    ArtifactProduced {
        message: MessageId,
        step: StepId,
        iteration: u32,
        handle: Option<HandleId>,
    },
    VerdictIssued {
        message: MessageId,
        verdict: Verdict,
        layer: CritiqueLayer,
        step: Option<StepId>,
        iteration: u32,
    },
    CheckpointTaken {
        checkpoint: u64,
        label: String,
        digest: String,
    },
    EscalationRaised {
        reason: ReasonCode,
        step: Option<StepId>,
    },
    CostIncurred {
        agent: AgentRole,
        recovery: bool,
    },
    CitationRecorded {
        label: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MessageSent { .. } => "message_sent",
            EventKind::MessageDelivered { .. } => "message_delivered",
            EventKind::ArtifactProduced { .. } => "artifact_produced",
            EventKind::VerdictIssued { .. } => "verdict_issued",
            EventKind::CheckpointTaken { .. } => "checkpoint_taken",
            EventKind::EscalationRaised { .. } => "escalation_raised",
            EventKind::CostIncurred { .. } => "cost_incurred",
            EventKind::CitationRecorded { .. } => "citation_recorded",
        }
    }
}

/// One audit record. Lineage edges run source → target. Wall time and
/// credits are attributed on the event itself; `idle_ms` is the portion of
/// the gap before this event spent waiting on the user, which the reporting
/// layer may exclude under its idle rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub index: EventIndex,
    pub phase: Phase,
    #[serde(flatten)]
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lineage_edges: Vec<(Ref, Ref)>,
    #[serde(default)]
    pub wall_ms: u64,
    #[serde(default)]
    pub idle_ms: u64,
    #[serde(default)]
    pub credits_milli: i64,
}

/// First record of every log file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub session_id: u64,
    pub seed: u64,
    pub branch: String,
}

/// Append-only event log for one session (or one branch of one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: LogHeader,
    events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn new(session_id: u64, seed: u64, branch: impl Into<String>) -> Self {
        SessionLog {
            header: LogHeader {
                schema_version: SCHEMA_VERSION,
                session_id,
                seed,
                branch: branch.into(),
            },
            events: Vec::new(),
        }
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_index(&self) -> EventIndex {
        self.events.len() as EventIndex
    }

    /// Append one event; indices must arrive dense from 0.
    pub fn append(&mut self, event: SessionEvent) -> Result<(), StoreError> {
        let expected = self.next_index();
        if event.index != expected {
            return Err(StoreError::NonDenseIndex {
                expected,
                got: event.index,
            });
        }
        self.events.push(event);
        Ok(())
    }

    /// Start a fork at `at_event`: the new log shares the prefix and gets
    /// branch id `<parent-branch>/branch-<n>`.
    pub fn fork(&self, at_event: EventIndex, n: u32) -> SessionLog {
        SessionLog {
            header: LogHeader {
                schema_version: self.header.schema_version,
                session_id: self.header.session_id,
                seed: self.header.seed,
                branch: format!("{}/branch-{n}", self.header.branch),
            },
            events: self
                .events
                .iter()
                .take(at_event as usize)
                .cloned()
                .collect(),
        }
    }

    /// One record per line: header first, then events in index order.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        for event in &self.events {
            out.push('\n');
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
        }
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<SessionLog, StoreError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| StoreError::Malformed("empty log".to_string()))?;
        let header: LogHeader = serde_json::from_str(header_line)
            .map_err(|e| StoreError::Malformed(format!("bad header: {e}")))?;
        if header.schema_version > SCHEMA_VERSION {
            return Err(StoreError::Malformed(format!(
                "log schema version {} is newer than supported {}",
                header.schema_version, SCHEMA_VERSION
            )));
        }
        let mut log = SessionLog {
            header,
            events: Vec::new(),
        };
        for line in lines {
            let event: SessionEvent = serde_json::from_str(line)
                .map_err(|e| StoreError::Malformed(format!("bad event: {e}")))?;
            log.append(event)?;
        }
        Ok(log)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| StoreError::Io(e.to_string()))
    }

    pub fn read_from(path: &Path) -> Result<SessionLog, StoreError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| StoreError::Io(e.to_string()))?;
        SessionLog::from_jsonl(&text)
    }

    /// Every ref this log knows about: all endpoints of lineage edges.
    pub fn known_refs(&self) -> BTreeSet<Ref> {
        let mut refs = BTreeSet::new();
        for event in &self.events {
            for (src, dst) in &event.lineage_edges {
                refs.insert(src.clone());
                refs.insert(dst.clone());
            }
        }
        refs
    }

    fn edges(&self) -> Vec<&(Ref, Ref)> {
        self.events
            .iter()
            .flat_map(|e| e.lineage_edges.iter())
            .collect()
    }
}

/// The upstream subgraph behind one result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceGraph {
    /// The target plus everything it transitively derives from.
    pub nodes: BTreeSet<Ref>,
    /// The lineage edges inside that closure.
    pub edges: Vec<(Ref, Ref)>,
}

/// Walk lineage edges upstream from `target`: everything that fed it,
/// transitively. The target itself is included; a session input traces to
/// just itself.
pub fn trace_backward(log: &SessionLog, target: &Ref) -> Result<TraceGraph, StoreError> {
    let known = log.known_refs();
    if !known.contains(target) {
        return Err(StoreError::UnknownRef(target.clone()));
    }
    let mut incoming: BTreeMap<&Ref, Vec<&Ref>> = BTreeMap::new();
    for (src, dst) in log.edges() {
        incoming.entry(dst).or_default().push(src);
    }
    let mut nodes: BTreeSet<Ref> = BTreeSet::new();
    let mut frontier = vec![target.clone()];
    while let Some(node) = frontier.pop() {
        if !nodes.insert(node.clone()) {
            continue;
        }
        if let Some(parents) = incoming.get(&node) {
            for p in parents {
                frontier.push((*p).clone());
            }
        }
    }
    let edges = log
        .edges()
        .into_iter()
        .filter(|(src, dst)| nodes.contains(src) && nodes.contains(dst))
        .cloned()
        .collect();
    Ok(TraceGraph { nodes, edges })
}

/// Walk lineage edges downstream from `fact`: every result it transitively
/// feeds. Strictly downstream — a leaf exposes nothing.
pub fn exposure_analysis(log: &SessionLog, fact: &Ref) -> Result<BTreeSet<Ref>, StoreError> {
    let known = log.known_refs();
    if !known.contains(fact) {
        return Err(StoreError::UnknownRef(fact.clone()));
    }
    let mut outgoing: BTreeMap<&Ref, Vec<&Ref>> = BTreeMap::new();
    for (src, dst) in log.edges() {
        outgoing.entry(src).or_default().push(dst);
    }
    let mut reached: BTreeSet<Ref> = BTreeSet::new();
    let mut frontier: Vec<Ref> = outgoing
        .get(fact)
        .map(|ds| ds.iter().map(|d| (*d).clone()).collect())
        .unwrap_or_default();
    while let Some(node) = frontier.pop() {
        if !reached.insert(node.clone()) {
            continue;
        }
        if let Some(children) = outgoing.get(&node) {
            for c in children {
                frontier.push((*c).clone());
            }
        }
    }
    Ok(reached)
}

/// Serialized session state at a decision point, digest-guarded.
///
/// `state` is the orchestrator's own serialization (agents, plan, seed
/// position, executor manifest); the store treats it as opaque. `at_event`
/// is the log position when the checkpoint was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub id: u64,
    pub session_id: u64,
    pub branch: String,
    pub at_event: EventIndex,
    pub label: String,
    pub state: serde_json::Value,
    pub digest: String,
}

impl Checkpoint {
    pub fn new(
        id: u64,
        session_id: u64,
        branch: impl Into<String>,
        at_event: EventIndex,
        label: impl Into<String>,
        state: serde_json::Value,
    ) -> Self {
        let branch = branch.into();
        let label = label.into();
        let digest = Checkpoint::compute_digest(id, session_id, &branch, at_event, &label, &state);
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            id,
            session_id,
            branch,
            at_event,
            label,
            state,
            digest,
        }
    }

    fn compute_digest(
        id: u64,
        session_id: u64,
        branch: &str,
        at_event: EventIndex,
        label: &str,
        state: &serde_json::Value,
    ) -> String {
        let mut hasher = Sha256::new();
        hasher.update(id.to_le_bytes());
        hasher.update(session_id.to_le_bytes());
        hasher.update(branch.as_bytes());
        hasher.update([0]);
        hasher.update(at_event.to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_string(state).expect("state serializes").as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Recompute the digest and compare; restore paths call this first.
    pub fn verify(&self) -> Result<(), StoreError> {
        let expected = Checkpoint::compute_digest(
            self.id,
            self.session_id,
            &self.branch,
            self.at_event,
            &self.label,
            &self.state,
        );
        if expected != self.digest {
            return Err(StoreError::CorruptCheckpoint { checkpoint: self.id });
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<(), StoreError> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| StoreError::Io(e.to_string()))
    }

    pub fn read_from(path: &Path) -> Result<Checkpoint, StoreError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| StoreError::Io(e.to_string()))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| StoreError::Malformed(format!("bad checkpoint: {e}")))?;
        checkpoint.verify()?;
        Ok(checkpoint)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("unknown ref {0}")]
    UnknownRef(Ref),
    #[error("checkpoint {checkpoint} failed its digest check")]
    CorruptCheckpoint { checkpoint: u64 },
    #[error("event index {got} out of order (expected {expected})")]
    NonDenseIndex { expected: EventIndex, got: EventIndex },
    #[error("malformed log or checkpoint: {0}")]
    Malformed(String),
    #[error("io failure: {0}")]
    Io(String),
}
