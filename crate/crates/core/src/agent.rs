//! Stand-in agents: stochastic or scripted stubs that reproduce error and
//! detection statistics without any model calls.
//!
//! Each instance owns an independent, seeded rng stream, so agents are
//! order-insensitive within a phase and whole sessions replay byte-for-byte
//! from a seed. Defect catchability is drawn once, when a defect is
//! introduced: the writer's profile says how likely the defect is to be
//! visible to the inner critics (and, failing that, to the output gate).

use crate::artifact::{ArtifactPayload, DefectFlag, DefectKind, FieldValue};
use crate::ids::StepId;
use crate::kernel::{AgentRole, Phase};
use crate::plan::PlanStep;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Seniority tier; escalation swaps the junior profile for the senior one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Junior,
    Senior,
}

/// Behavioral rates and unit economics for one agent tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticProfile {
    /// Probability a fresh artifact carries a defect.
    pub error_rate: f64,
    /// Probability a defect is catchable at a critique layer, keyed by the
    /// layer's phase (`InnerCritique`, `OuterCritique`).
    pub detectable: BTreeMap<Phase, f64>,
    /// Probability a reviewer rejects a defect-free, criteria-passing
    /// artifact.
    pub false_positive_rate: f64,
    /// Among inner-catchable defects, the share that are chart-class.
    pub chart_share: f64,
    /// Probability an already-caught defect survives one feedback round.
    pub persistence: f64,
    /// Credits per call, in milli-credits.
    pub cost_milli: i64,
    /// Simulated processing time per call, in milliseconds.
    pub time_ms: u64,
}

impl StochasticProfile {
    /// A silent, free profile; useful as a base for tests and scripted
    /// agents.
    pub fn inert() -> Self {
        StochasticProfile {
            error_rate: 0.0,
            detectable: BTreeMap::new(),
            false_positive_rate: 0.0,
            chart_share: 0.0,
            persistence: 0.5,
            cost_milli: 0,
            time_ms: 0,
        }
    }

    pub fn detectable_at(&self, phase: Phase) -> f64 {
        self.detectable.get(&phase).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let probs = [
            ("error_rate", self.error_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("chart_share", self.chart_share),
            ("persistence", self.persistence),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(AgentError::InvalidRate {
                    field: name.to_string(),
                    value: p,
                });
            }
        }
        for (phase, p) in &self.detectable {
            if !(0.0..=1.0).contains(p) {
                return Err(AgentError::InvalidRate {
                    field: format!("detectable[{phase}]"),
                    value: *p,
                });
            }
        }
        Ok(())
    }
}

/// Deterministic fault injected by a scripted writer on one attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "fault")]
pub enum Fault {
    /// Extraction drops this column entirely.
    OmitColumn { column: String },
    /// Extraction leaves this column present but fully null.
    NullColumn { column: String },
    /// The final numeric answer comes out wrong.
    WrongAnswer,
}

/// How an agent behaves when asked to produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Behavior {
    /// Draw defects from the profile rates.
    Stochastic,
    /// Attempt `i` (1-based) injects `faults[i-1]`; later attempts are clean.
    Scripted { faults: Vec<Fault> },
}

/// What the previous attempt context looks like to a producing writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// First attempt at this step.
    Fresh,
    /// Retrying after an inner-loop rejection; repair targets the defect.
    InnerFeedback,
    /// Re-executing after an outer-gate rejection.
    OuterFeedback,
}

/// Static description of an agent, from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub role: AgentRole,
    pub junior: StochasticProfile,
    pub senior: StochasticProfile,
    pub vendor: String,
    pub fallback_vendor: String,
    pub behavior: Behavior,
    /// Shared-draw mixture weight coupling inner and outer catch draws.
    pub correlation: f64,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<(), AgentError> {
        self.junior.validate()?;
        self.senior.validate()?;
        if self.senior.error_rate > self.junior.error_rate {
            return Err(AgentError::SeniorWorseThanJunior {
                junior: self.junior.error_rate,
                senior: self.senior.error_rate,
            });
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(AgentError::InvalidRate {
                field: "correlation".to_string(),
                value: self.correlation,
            });
        }
        Ok(())
    }
}

/// A live agent: spec plus tier, vendor, and rng stream state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInstance {
    pub role: AgentRole,
    pub tier: Tier,
    spec: AgentSpec,
    pub vendor: String,
    /// Stream id within the session's seed space; unique per instance.
    pub stream: u64,
    rng: ChaCha8Rng,
    /// Rejections since the last approval or tier change, for escalation.
    pub consecutive_rejections: u32,
    /// Defect currently under repair, if the last attempt was rejected.
    open_defect: Option<DefectFlag>,
}

impl AgentInstance {
    /// Instantiate with an independent rng stream derived from the session
    /// seed. Stream ids must be unique across a session's instances.
    pub fn new(spec: AgentSpec, session_seed: u64, stream: u64) -> Result<Self, AgentError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(session_seed);
        rng.set_stream(stream);
        Ok(AgentInstance {
            role: spec.role.clone(),
            tier: Tier::Junior,
            vendor: spec.vendor.clone(),
            spec,
            stream,
            rng,
            consecutive_rejections: 0,
            open_defect: None,
        })
    }

    /// The profile for the current tier.
    pub fn profile(&self) -> &StochasticProfile {
        match self.tier {
            Tier::Junior => &self.spec.junior,
            Tier::Senior => &self.spec.senior,
        }
    }

    pub fn behavior(&self) -> &Behavior {
        &self.spec.behavior
    }

    pub fn cost_milli(&self) -> i64 {
        self.profile().cost_milli
    }

    pub fn time_ms(&self) -> u64 {
        self.profile().time_ms
    }

    fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.gen::<f64>() < p
        }
    }

    /// Uniform draw used by reviewer false positives and user-side flips.
    pub fn draw_event(&mut self, p: f64) -> bool {
        self.bernoulli(p)
    }

    /// Produce one attempt's artifact for `step`.
    ///
    /// Stochastic writers draw a fresh defect on first attempts, let a caught
    /// defect persist with the profile's persistence on inner-feedback
    /// retries, and draw at a persistence-discounted rate after outer-gate
    /// feedback. Scripted writers never draw; their faults surface through
    /// the data they produce, not through defect flags.
    pub fn produce(&mut self, step: &PlanStep, iteration: u32, prior: Prior) -> ArtifactPayload {
        let artifact = ArtifactPayload::new(step.id, step.kind, iteration, self.role.clone());
        match self.spec.behavior {
            Behavior::Scripted { .. } => artifact,
            Behavior::Stochastic => {
                let defect = self.next_defect(iteration, prior);
                self.open_defect = defect;
                let artifact =
                    artifact.with_field("result", FieldValue::Text("ok".to_string()));
                match defect {
                    Some(d) => artifact.with_defects(vec![d]),
                    None => artifact,
                }
            }
        }
    }

    fn next_defect(&mut self, iteration: u32, prior: Prior) -> Option<DefectFlag> {
        match prior {
            Prior::Fresh => {
                self.open_defect = None;
                let p = self.profile().error_rate;
                self.bernoulli(p).then(|| self.draw_defect_flags(iteration))
            }
            Prior::InnerFeedback => match self.open_defect {
                Some(existing) => {
                    let p = self.profile().persistence;
                    self.bernoulli(p).then_some(existing)
                }
                None => None,
            },
            Prior::OuterFeedback => {
                self.open_defect = None;
                let p = self.profile().error_rate * self.profile().persistence;
                self.bernoulli(p).then(|| self.draw_defect_flags(iteration))
            }
        }
    }

    /// Draw a new defect's class and per-layer catchability.
    ///
    /// One uniform decides inner catchability; inner-catchable defects are
    /// code- or chart-class (chart with probability `chart_share`) and are
    /// repaired inside the loop, while the remainder are intent-class and
    /// face the outer gate's draw. `correlation` > 0 reuses the inner
    /// uniform for the outer draw (shared-draw mixture).
    fn draw_defect_flags(&mut self, iteration: u32) -> DefectFlag {
        let p_inner = self.profile().detectable_at(Phase::InnerCritique);
        let p_outer = self.profile().detectable_at(Phase::OuterCritique);
        let u_inner: f64 = self.rng.gen();
        let catch_inner = u_inner < p_inner;
        if catch_inner {
            let chart = self.bernoulli(self.profile().chart_share);
            DefectFlag {
                kind: if chart { DefectKind::Chart } else { DefectKind::Code },
                catch_inner: true,
                catch_outer: false,
                introduced_iteration: iteration,
            }
        } else {
            let u_outer: f64 = if self.bernoulli(self.spec.correlation) {
                u_inner
            } else {
                self.rng.gen()
            };
            DefectFlag {
                kind: DefectKind::Intent,
                catch_inner: false,
                catch_outer: u_outer < p_outer,
                introduced_iteration: iteration,
            }
        }
    }

    /// The scripted fault for a given attempt, if any.
    pub fn fault_for(&self, iteration: u32) -> Option<&Fault> {
        match &self.spec.behavior {
            Behavior::Scripted { faults } => faults.get(iteration as usize - 1),
            Behavior::Stochastic => None,
        }
    }

    /// Promote Junior → Senior, keeping role, vendor, and rng lineage.
    pub fn escalate_tier(&mut self) -> Result<Tier, AgentError> {
        match self.tier {
            Tier::Junior => {
                self.tier = Tier::Senior;
                self.consecutive_rejections = 0;
                Ok(Tier::Senior)
            }
            Tier::Senior => Err(AgentError::AlreadySenior {
                role: self.role.to_string(),
            }),
        }
    }

    /// Cross-vendor fallback once the tier ladder is exhausted. Returns the
    /// vendor switched to.
    pub fn switch_to_fallback_vendor(&mut self) -> String {
        self.vendor = self.spec.fallback_vendor.clone();
        self.consecutive_rejections = 0;
        self.vendor.clone()
    }

    /// Record a rejection; returns the new consecutive count.
    pub fn note_rejection(&mut self) -> u32 {
        self.consecutive_rejections += 1;
        self.consecutive_rejections
    }

    pub fn note_approval(&mut self) {
        self.consecutive_rejections = 0;
        self.open_defect = None;
    }

    /// Forget any step-local repair state (used between steps).
    pub fn reset_step_state(&mut self) {
        self.consecutive_rejections = 0;
        self.open_defect = None;
    }
}

/// Per-step writer/critic bundle handed to the loop driver.
#[derive(Debug)]
pub struct StepIds {
    pub step: StepId,
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("agent {role} is already senior")]
    AlreadySenior { role: String },
    #[error("{field} must lie in [0,1], got {value}")]
    InvalidRate { field: String, value: f64 },
    #[error("senior error rate {senior} exceeds junior {junior}")]
    SeniorWorseThanJunior { junior: f64, senior: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RoleKind;
    use crate::plan::StepKind;

    fn writer_spec(error_rate: f64, p_inner: f64, p_outer: f64) -> AgentSpec {
        let mut detectable = BTreeMap::new();
        detectable.insert(Phase::InnerCritique, p_inner);
        detectable.insert(Phase::OuterCritique, p_outer);
        let profile = StochasticProfile {
            error_rate,
            detectable,
            false_positive_rate: 0.0,
            chart_share: 0.02,
            persistence: 0.5,
            cost_milli: 1_000,
            time_ms: 30_000,
        };
        AgentSpec {
            role: AgentRole::new(RoleKind::Writer),
            junior: profile.clone(),
            senior: profile,
            vendor: "helios".to_string(),
            fallback_vendor: "meridian".to_string(),
            behavior: Behavior::Stochastic,
            correlation: 0.0,
        }
    }

    fn step() -> PlanStep {
        PlanStep::new(1, StepKind::Transform)
    }

    #[test]
    fn zero_error_rate_never_defects() {
        let mut agent = AgentInstance::new(writer_spec(0.0, 0.9, 0.1), 7, 1).unwrap();
        for _ in 0..200 {
            let a = agent.produce(&step(), 1, Prior::Fresh);
            assert!(a.is_clean());
        }
    }

    #[test]
    fn unit_error_rate_always_defects() {
        let mut agent = AgentInstance::new(writer_spec(1.0, 0.9, 0.1), 7, 1).unwrap();
        for _ in 0..200 {
            let a = agent.produce(&step(), 1, Prior::Fresh);
            assert_eq!(a.defects.len(), 1);
        }
    }

    #[test]
    fn defect_fraction_tracks_error_rate() {
        let mut agent = AgentInstance::new(writer_spec(0.75, 0.878, 0.146), 42, 1).unwrap();
        let n = 10_000;
        let defective = (0..n)
            .filter(|_| !agent.produce(&step(), 1, Prior::Fresh).is_clean())
            .count();
        let fraction = defective as f64 / n as f64;
        assert!(
            (fraction - 0.75).abs() <= 0.02,
            "defect fraction {fraction} strays from 0.75"
        );
    }

    #[test]
    fn detectability_splits_defect_classes() {
        // Fully inner-detectable: everything is code/chart class.
        let mut agent = AgentInstance::new(writer_spec(1.0, 1.0, 0.0), 3, 1).unwrap();
        for _ in 0..100 {
            let a = agent.produce(&step(), 1, Prior::Fresh);
            let d = a.defects[0];
            assert!(d.catch_inner);
            assert_ne!(d.kind, DefectKind::Intent);
        }
        // Inner-invisible: everything is intent class.
        let mut agent = AgentInstance::new(writer_spec(1.0, 0.0, 1.0), 3, 2).unwrap();
        for _ in 0..100 {
            let a = agent.produce(&step(), 1, Prior::Fresh);
            let d = a.defects[0];
            assert!(!d.catch_inner);
            assert_eq!(d.kind, DefectKind::Intent);
            assert!(d.catch_outer);
        }
    }

    #[test]
    fn repair_persistence_halves_open_defects() {
        let mut agent = AgentInstance::new(writer_spec(1.0, 1.0, 0.0), 11, 1).unwrap();
        let n = 4_000;
        let mut persisted = 0;
        for _ in 0..n {
            let first = agent.produce(&step(), 1, Prior::Fresh);
            assert_eq!(first.defects.len(), 1);
            let retry = agent.produce(&step(), 2, Prior::InnerFeedback);
            if !retry.is_clean() {
                persisted += 1;
                // The persisting defect is the same defect, not a redraw.
                assert_eq!(retry.defects[0], first.defects[0]);
            }
        }
        let fraction = persisted as f64 / n as f64;
        assert!(
            (fraction - 0.5).abs() <= 0.03,
            "persistence fraction {fraction} strays from 0.5"
        );
    }

    #[test]
    fn tier_escalation_is_one_way_and_preserves_identity() {
        let mut agent = AgentInstance::new(writer_spec(0.5, 0.9, 0.1), 5, 4).unwrap();
        let role_before = agent.role.clone();
        assert_eq!(agent.escalate_tier().unwrap(), Tier::Senior);
        assert_eq!(agent.role, role_before);
        assert_eq!(agent.stream, 4);
        let err = agent.escalate_tier().unwrap_err();
        assert_eq!(
            err,
            AgentError::AlreadySenior {
                role: "writer".to_string()
            }
        );
        assert_eq!(agent.switch_to_fallback_vendor(), "meridian");
        assert_eq!(agent.vendor, "meridian");
        assert_eq!(agent.role, role_before);
    }

    #[test]
    fn senior_profile_must_not_be_worse() {
        let mut spec = writer_spec(0.5, 0.9, 0.1);
        spec.senior.error_rate = 0.6;
        assert!(matches!(
            spec.validate(),
            Err(AgentError::SeniorWorseThanJunior { .. })
        ));
    }

    #[test]
    fn same_seed_and_stream_reproduce_draws() {
        let mk = || AgentInstance::new(writer_spec(0.4, 0.7, 0.2), 99, 6).unwrap();
        let mut a = mk();
        let mut b = mk();
        for i in 1..=50 {
            assert_eq!(
                a.produce(&step(), i, Prior::Fresh),
                b.produce(&step(), i, Prior::Fresh)
            );
        }
    }

    #[test]
    fn distinct_streams_diverge() {
        let spec = writer_spec(0.5, 0.5, 0.5);
        let mut a = AgentInstance::new(spec.clone(), 99, 1).unwrap();
        let mut b = AgentInstance::new(spec, 99, 2).unwrap();
        let seq_a: Vec<bool> = (0..64).map(|_| a.draw_event(0.5)).collect();
        let seq_b: Vec<bool> = (0..64).map(|_| b.draw_event(0.5)).collect();
        assert_ne!(seq_a, seq_b);
    }

    #[test]
    fn serde_roundtrip_preserves_rng_position() {
        let mut agent = AgentInstance::new(writer_spec(0.5, 0.5, 0.5), 13, 3).unwrap();
        for i in 1..=10 {
            agent.produce(&step(), i, Prior::Fresh);
        }
        let frozen = serde_json::to_string(&agent).unwrap();
        let mut thawed: AgentInstance = serde_json::from_str(&frozen).unwrap();
        for i in 11..=30 {
            assert_eq!(
                agent.produce(&step(), i, Prior::Fresh),
                thawed.produce(&step(), i, Prior::Fresh)
            );
        }
    }

    #[test]
    fn scripted_writers_expose_faults_by_attempt() {
        let spec = AgentSpec {
            behavior: Behavior::Scripted {
                faults: vec![
                    Fault::OmitColumn {
                        column: "invoice_number".to_string(),
                    },
                    Fault::OmitColumn {
                        column: "invoice_number".to_string(),
                    },
                ],
            },
            ..writer_spec(0.0, 0.0, 0.0)
        };
        let agent = AgentInstance::new(spec, 1, 1).unwrap();
        assert!(agent.fault_for(1).is_some());
        assert!(agent.fault_for(2).is_some());
        assert!(agent.fault_for(3).is_none());
    }
}
