//! The quarterly-close walkthrough: an eight-step expense reconciliation
//! driven end to end through the kernel, with every artifact built by the
//! data engine over the bundled feeds.
//!
//! Three extraction writers are scripted to degrade their early drafts —
//! one drops its key column three times running, one drops a date column,
//! one blanks the amount column — so the declared schema and non-null
//! criteria reject exactly those attempts and the retry ladder runs with
//! no stochastic draws at all. Reconciliation links invoices to expenses
//! under the config-declared fuzzy settings, and synthesis reads its
//! headline figures back off stored aggregates, so every number in the
//! final summary is reachable from a handle in the execution store.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentInstance, Fault, Prior};
use crate::artifact::{ArtifactPayload, ColumnMeta, FieldValue, TableMeta};
use crate::config::SimConfig;
use crate::exec::{
    AggFunc, Cmp, ExecError, ExecManifest, ExecutorStore, Literal, MatchConfig, MatchSpec,
    Primitive, ScalarStat, StoredOp, SummaryContent, SummaryRequest, STATUS_MATCHED,
    STATUS_PAYMENT_PENDING,
};
use crate::fixtures::{self, FIXTURE_DELIMITER};
use crate::ids::{CriterionId, HandleId, StepId};
use crate::kernel::{ControlPayload, Payload, UserVerdict};
use crate::plan::{
    AcceptanceCriterion, ApprovalPolicy, CriterionPredicate, PlanStep, PlanTemplate,
    PlannerProfile, StepKind, TaskQuery,
};
use crate::session::{
    run_session, Citation, Produced, SessionDefinition, SessionError, SessionRun, StepProducer,
};
use crate::store::{EventKind, Ref, SessionLog};

// ============================================================================
// Plan shape
// ============================================================================

pub const STEP_EXTRACT_HEALTHCARE: u64 = 1;
pub const STEP_EXTRACT_TELECOM: u64 = 2;
pub const STEP_EXTRACT_CLOUD: u64 = 3;
pub const STEP_EXTRACT_EXPENSES: u64 = 4;
pub const STEP_CONSOLIDATE: u64 = 5;
pub const STEP_STANDARDIZE: u64 = 6;
pub const STEP_RECONCILE: u64 = 7;
pub const STEP_SYNTHESIZE: u64 = 8;

/// Vendor-feed extraction steps with their writer tags and input names.
const EXTRACT_RECIPES: [(u64, &str, &str); 4] = [
    (
        STEP_EXTRACT_HEALTHCARE,
        "healthcare-extractor",
        fixtures::INPUT_INVOICES_HEALTHCARE,
    ),
    (
        STEP_EXTRACT_TELECOM,
        "telecom-extractor",
        fixtures::INPUT_INVOICES_TELECOM,
    ),
    (
        STEP_EXTRACT_CLOUD,
        "cloud-extractor",
        fixtures::INPUT_INVOICES_CLOUD,
    ),
    (
        STEP_EXTRACT_EXPENSES,
        "expense-extractor",
        fixtures::INPUT_EXPENSES,
    ),
];

fn extract_input(step: u64) -> Option<&'static str> {
    EXTRACT_RECIPES
        .iter()
        .find(|(id, _, _)| *id == step)
        .map(|(_, _, input)| *input)
}

/// Human-readable name for a walkthrough step, for report tables.
pub fn step_label(step: u64) -> &'static str {
    match step {
        STEP_EXTRACT_HEALTHCARE => "extract healthcare invoices",
        STEP_EXTRACT_TELECOM => "extract telecom invoices",
        STEP_EXTRACT_CLOUD => "extract cloud invoices",
        STEP_EXTRACT_EXPENSES => "extract expense feed",
        STEP_CONSOLIDATE => "consolidate invoices",
        STEP_STANDARDIZE => "standardize invoices",
        STEP_RECONCILE => "reconcile against expenses",
        STEP_SYNTHESIZE => "synthesize close summary",
        _ => "unnamed step",
    }
}

fn invoice_columns() -> Vec<String> {
    ["invoice_number", "vendor_name", "date_of_issue", "total_in_usd"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn expense_columns() -> Vec<String> {
    ["expense_id", "vendor_name", "amount_in_usd", "posted_date"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn close_criteria() -> Vec<AcceptanceCriterion> {
    let declare = |id: u64, description: &str, predicate: CriterionPredicate| AcceptanceCriterion {
        id: CriterionId(id),
        description: description.to_string(),
        predicate,
        declared_at: 0,
    };
    vec![
        declare(
            1,
            "invoice tables keep all four declared columns",
            CriterionPredicate::SchemaMatch {
                columns: invoice_columns(),
            },
        ),
        declare(
            2,
            "invoice totals arrive populated",
            CriterionPredicate::NamedPolicy {
                name: "non-null:total_in_usd".to_string(),
            },
        ),
        declare(
            3,
            "the expense table keeps all four declared columns",
            CriterionPredicate::SchemaMatch {
                columns: expense_columns(),
            },
        ),
        declare(
            4,
            "consolidation preserves all nine invoices",
            CriterionPredicate::RowCountBound { min: 9, max: 9 },
        ),
        declare(
            5,
            "invoice numbers arrive populated",
            CriterionPredicate::NamedPolicy {
                name: "non-null:invoice_number".to_string(),
            },
        ),
        declare(
            6,
            "reconciliation reports its match rate",
            CriterionPredicate::FieldPresent {
                field: "match_rate".to_string(),
            },
        ),
        declare(
            7,
            "every invoice is either settled or pending",
            CriterionPredicate::NamedPolicy {
                name: "zero:unmatched_count".to_string(),
            },
        ),
        declare(
            8,
            "pending settlements are quantified",
            CriterionPredicate::FieldPresent {
                field: "payment_pending_total".to_string(),
            },
        ),
    ]
}

fn close_steps(retries: u32) -> Vec<PlanStep> {
    let c = |ids: &[u64]| ids.iter().map(|i| CriterionId(*i)).collect::<Vec<_>>();
    let mut steps = Vec::new();
    for (id, tag, _) in EXTRACT_RECIPES {
        let criteria = if id == STEP_EXTRACT_EXPENSES {
            c(&[3])
        } else {
            c(&[1, 2, 5])
        };
        steps.push(
            PlanStep::new(id, StepKind::Extract)
                .written_by(tag)
                .with_criteria(&criteria)
                .with_max_retries(retries),
        );
    }
    steps.push(
        PlanStep::new(STEP_CONSOLIDATE, StepKind::Transform)
            .written_by("consolidator")
            .depends_on(&[
                STEP_EXTRACT_HEALTHCARE,
                STEP_EXTRACT_TELECOM,
                STEP_EXTRACT_CLOUD,
            ])
            .with_criteria(&c(&[1, 4]))
            .with_max_retries(retries),
    );
    steps.push(
        PlanStep::new(STEP_STANDARDIZE, StepKind::Transform)
            .written_by("standardizer")
            .depends_on(&[STEP_CONSOLIDATE])
            .with_criteria(&c(&[1, 4, 5]))
            .with_max_retries(retries),
    );
    steps.push(
        PlanStep::new(STEP_RECONCILE, StepKind::Reconcile)
            .written_by("reconciler")
            .depends_on(&[STEP_STANDARDIZE, STEP_EXTRACT_EXPENSES])
            .with_criteria(&c(&[6, 7, 8]))
            .with_max_retries(retries),
    );
    steps.push(
        PlanStep::new(STEP_SYNTHESIZE, StepKind::Synthesize)
            .written_by("synthesist")
            .depends_on(&[STEP_RECONCILE])
            .with_criteria(&c(&[6, 8]))
            .with_max_retries(retries),
    );
    steps
}

/// The walkthrough's session definition: the eight-step close plan over
/// the bundled feeds, extraction faults scripted onto three writers, and
/// the replan draw pinned off so the trace is identical for every seed.
pub fn financial_close_definition(
    session_id: u64,
    seed: u64,
    config: &SimConfig,
) -> SessionDefinition {
    let mut config = config.clone();
    config.rates.replan = 0.0;
    let retries = config.session.max_inner_retries;
    let inputs: Vec<&str> = EXTRACT_RECIPES.iter().map(|(_, _, input)| *input).collect();
    let query = TaskQuery::new("quarterly-close", &inputs);
    let profile = PlannerProfile {
        required_inputs: inputs.iter().map(|s| s.to_string()).collect(),
        template: PlanTemplate {
            steps: close_steps(retries),
            criteria: close_criteria(),
            plan_criteria: vec![CriterionId(6), CriterionId(7), CriterionId(8)],
        },
    };
    let mut scripted: BTreeMap<String, Vec<Fault>> = BTreeMap::new();
    scripted.insert(
        "healthcare-extractor".to_string(),
        vec![
            Fault::OmitColumn {
                column: "invoice_number".to_string(),
            };
            3
        ],
    );
    scripted.insert(
        "telecom-extractor".to_string(),
        vec![Fault::OmitColumn {
            column: "date_of_issue".to_string(),
        }],
    );
    scripted.insert(
        "cloud-extractor".to_string(),
        vec![Fault::NullColumn {
            column: "total_in_usd".to_string(),
        }],
    );
    for tag in [
        "expense-extractor",
        "consolidator",
        "standardizer",
        "reconciler",
        "synthesist",
    ] {
        scripted.insert(tag.to_string(), Vec::new());
    }
    SessionDefinition {
        session_id,
        seed,
        config,
        query,
        profile,
        approval_policy: ApprovalPolicy::AutoAccept,
        scripted,
    }
}

// ============================================================================
// Step producer
// ============================================================================

/// Builds every step artifact by running the data engine over the bundled
/// feeds. All state lives in the executor store, so a checkpointed
/// manifest restores the producer exactly; step outputs are recovered
/// from the store's marks rather than kept as side maps.
pub struct ScenarioProducer {
    store: ExecutorStore,
    knobs: MatchConfig,
}

fn exec_err(e: ExecError) -> SessionError {
    SessionError::Producer {
        detail: e.to_string(),
    }
}

fn producer_err(detail: impl Into<String>) -> SessionError {
    SessionError::Producer {
        detail: detail.into(),
    }
}

fn step_mark(step: u64, iteration: u32) -> String {
    format!("step:{step}:i{iteration}")
}

impl ScenarioProducer {
    pub fn new(seed: u64, knobs: MatchConfig) -> Self {
        ScenarioProducer {
            store: ExecutorStore::new(seed),
            knobs,
        }
    }

    /// Producer for a definition built by [`financial_close_definition`].
    pub fn for_definition(definition: &SessionDefinition) -> Self {
        ScenarioProducer::new(definition.seed, definition.config.scenario.match_config())
    }

    pub fn store(&self) -> &ExecutorStore {
        &self.store
    }

    /// The handle a named input was last loaded under, if any.
    fn loaded_handle(&self, name: &str) -> Option<HandleId> {
        self.store.ops().iter().rev().find_map(|op| match op {
            StoredOp::LoadInput {
                output,
                name: loaded,
                ..
            } if loaded == name => Some(*output),
            _ => None,
        })
    }

    /// The latest marked output for a step: its most recent attempt, which
    /// for completed steps is the approved one.
    fn step_output(&self, step: u64) -> Result<HandleId, SessionError> {
        let prefix = format!("step:{step}:i");
        self.store
            .marks()
            .iter()
            .rev()
            .find(|(_, label)| {
                label
                    .strip_prefix(&prefix)
                    .is_some_and(|rest| rest.parse::<u32>().is_ok())
            })
            .map(|(handle, _)| *handle)
            .ok_or_else(|| producer_err(format!("step {step} has no stored output yet")))
    }

    /// The reconcile attempt's stored products: the classified table and
    /// the two aggregate tables carved off it.
    fn reconcile_products(&self) -> Result<(HandleId, HandleId, HandleId), SessionError> {
        let matched = self
            .store
            .ops()
            .iter()
            .rev()
            .find_map(|op| match op {
                StoredOp::Match { output, .. } => Some(*output),
                _ => None,
            })
            .ok_or_else(|| producer_err("no reconciliation stored yet"))?;
        let by_suffix = |suffix: &str| {
            self.store
                .marks()
                .iter()
                .rev()
                .find(|(_, label)| label.ends_with(suffix))
                .map(|(handle, _)| *handle)
                .ok_or_else(|| producer_err(format!("no {suffix} aggregate stored yet")))
        };
        Ok((matched, by_suffix(":matched")?, by_suffix(":pending")?))
    }

    fn load(&mut self, name: &str) -> Result<(HandleId, bool), SessionError> {
        if let Some(handle) = self.loaded_handle(name) {
            return Ok((handle, false));
        }
        let text =
            fixtures::resolve_input(name).ok_or_else(|| producer_err(format!("no bundled input named {name:?}")))?;
        let schema = fixtures::schema_for(name)
            .ok_or_else(|| producer_err(format!("no schema sidecar for {name:?}")))?;
        let handle = self
            .store
            .load_input(name, &text, FIXTURE_DELIMITER, &schema)
            .map_err(exec_err)?;
        Ok((handle.id, true))
    }

    fn table_meta(&self, id: HandleId) -> Result<TableMeta, SessionError> {
        let handle = self.store.handle(id).map_err(exec_err)?;
        let mut columns = Vec::new();
        for (name, dtype) in handle.schema.clone() {
            let summary = self
                .store
                .summarize(
                    id,
                    &SummaryRequest::Stats {
                        column: name.clone(),
                    },
                )
                .map_err(exec_err)?;
            let null_count = match summary.content {
                SummaryContent::Stats { null_count, .. } => null_count,
                _ => 0,
            };
            columns.push(ColumnMeta {
                name,
                dtype,
                null_count,
            });
        }
        Ok(TableMeta {
            handle: id,
            row_count: handle.row_count,
            columns,
        })
    }

    /// Read a single aggregate cell back as integer cents (a sum) or a
    /// count; one-row tables make min carry the value.
    fn scalar(&self, id: HandleId, column: &str) -> Result<i64, SessionError> {
        let summary = self
            .store
            .summarize(
                id,
                &SummaryRequest::Stats {
                    column: column.to_string(),
                },
            )
            .map_err(exec_err)?;
        match summary.content {
            SummaryContent::Stats {
                min: Some(ScalarStat::Cents(v)),
                ..
            }
            | SummaryContent::Stats {
                min: Some(ScalarStat::Int(v)),
                ..
            } => Ok(v),
            SummaryContent::Stats { min: None, .. } => Ok(0),
            other => Err(producer_err(format!(
                "aggregate column {column:?} summarized as {other:?}"
            ))),
        }
    }

    fn extract(
        &mut self,
        base: ArtifactPayload,
        step: u64,
        iteration: u32,
        input: &'static str,
        fault: Option<Fault>,
    ) -> Result<Produced, SessionError> {
        let schema = fixtures::schema_for(input)
            .ok_or_else(|| producer_err(format!("no schema sidecar for {input:?}")))?;
        let all: Vec<String> = schema.iter().map(|(n, _)| n.clone()).collect();
        let (load_name, keep) = match fault {
            None => (input.to_string(), all),
            Some(Fault::OmitColumn { column }) => {
                let keep = all.into_iter().filter(|c| *c != column).collect();
                (input.to_string(), keep)
            }
            Some(Fault::NullColumn { column }) => (
                format!("{input}{}{column}", fixtures::NULL_VARIANT_MARKER),
                all,
            ),
            Some(Fault::WrongAnswer) => {
                return Err(producer_err("extraction steps cannot script a wrong answer"))
            }
        };
        let mut calls = 0;
        let mut citations = Vec::new();
        let (source, fresh) = self.load(&load_name)?;
        if fresh {
            calls += 1;
            citations.push(Citation {
                label: "source intake".to_string(),
                edges: vec![(Ref::Input(load_name.clone()), Ref::Handle(source))],
            });
        }
        let out = self
            .store
            .submit(
                &[
                    Primitive::Select { columns: keep },
                    Primitive::CheckpointMark {
                        label: step_mark(step, iteration),
                    },
                ],
                &[source],
            )
            .map_err(exec_err)?;
        calls += 1;
        citations.push(Citation {
            label: "extraction basis".to_string(),
            edges: vec![(Ref::Handle(source), Ref::Handle(out.id))],
        });
        Ok(Produced {
            artifact: base.with_table(self.table_meta(out.id)?),
            handle: Some(out.id),
            executor_calls: calls,
            citations,
        })
    }

    fn consolidate(
        &mut self,
        base: ArtifactPayload,
        iteration: u32,
    ) -> Result<Produced, SessionError> {
        let sources = [
            self.step_output(STEP_EXTRACT_HEALTHCARE)?,
            self.step_output(STEP_EXTRACT_TELECOM)?,
            self.step_output(STEP_EXTRACT_CLOUD)?,
        ];
        let out = self
            .store
            .submit(
                &[
                    Primitive::Union { with: 1 },
                    Primitive::Union { with: 2 },
                    Primitive::CheckpointMark {
                        label: step_mark(STEP_CONSOLIDATE, iteration),
                    },
                ],
                &sources,
            )
            .map_err(exec_err)?;
        let citations = vec![
            Citation {
                label: "consolidation basis".to_string(),
                edges: sources
                    .iter()
                    .map(|s| (Ref::Handle(*s), Ref::Handle(out.id)))
                    .collect(),
            },
            Citation {
                label: "amount provenance".to_string(),
                edges: vec![(
                    Ref::Column(sources[0], "total_in_usd".to_string()),
                    Ref::Handle(out.id),
                )],
            },
        ];
        Ok(Produced {
            artifact: base.with_table(self.table_meta(out.id)?),
            handle: Some(out.id),
            executor_calls: 1,
            citations,
        })
    }

    fn standardize(
        &mut self,
        base: ArtifactPayload,
        iteration: u32,
    ) -> Result<Produced, SessionError> {
        let source = self.step_output(STEP_CONSOLIDATE)?;
        let out = self
            .store
            .submit(
                &[
                    Primitive::Sort {
                        by: vec![("invoice_number".to_string(), true)],
                    },
                    Primitive::Distinct,
                    Primitive::CheckpointMark {
                        label: step_mark(STEP_STANDARDIZE, iteration),
                    },
                ],
                &[source],
            )
            .map_err(exec_err)?;
        let citations = vec![Citation {
            label: "standardization basis".to_string(),
            edges: vec![(Ref::Handle(source), Ref::Handle(out.id))],
        }];
        Ok(Produced {
            artifact: base.with_table(self.table_meta(out.id)?),
            handle: Some(out.id),
            executor_calls: 1,
            citations,
        })
    }

    fn reconcile(
        &mut self,
        base: ArtifactPayload,
        iteration: u32,
    ) -> Result<Produced, SessionError> {
        let left = self.step_output(STEP_STANDARDIZE)?;
        let right = self.step_output(STEP_EXTRACT_EXPENSES)?;
        let outcome = self
            .store
            .fuzzy_match(&MatchSpec {
                left,
                right,
                left_key: "vendor_name".to_string(),
                right_key: "vendor_name".to_string(),
                left_amount: "total_in_usd".to_string(),
                right_amount: "amount_in_usd".to_string(),
                left_date: "date_of_issue".to_string(),
                right_date: "posted_date".to_string(),
                config: self.knobs.clone(),
            })
            .map_err(exec_err)?;
        let matched_handle = outcome.handle.id;
        let carve = |status: &str, total: &str, count: &str, suffix: &str| {
            vec![
                Primitive::Filter {
                    column: "match_status".to_string(),
                    cmp: Cmp::Eq,
                    value: Literal::Text(status.to_string()),
                },
                Primitive::Aggregate {
                    aggs: vec![
                        (total.to_string(), AggFunc::Sum, "total_in_usd".to_string()),
                        (count.to_string(), AggFunc::Count, "total_in_usd".to_string()),
                    ],
                },
                Primitive::CheckpointMark {
                    label: format!("{}{}", step_mark(STEP_RECONCILE, iteration), suffix),
                },
            ]
        };
        let agg_matched = self
            .store
            .submit(
                &carve(STATUS_MATCHED, "matched_total", "matched_count", ":matched"),
                &[matched_handle],
            )
            .map_err(exec_err)?
            .id;
        let agg_pending = self
            .store
            .submit(
                &carve(
                    STATUS_PAYMENT_PENDING,
                    "pending_total",
                    "pending_count",
                    ":pending",
                ),
                &[matched_handle],
            )
            .map_err(exec_err)?
            .id;
        let figures = self.close_figures(matched_handle, agg_matched, agg_pending)?;
        let citations = vec![
            Citation {
                label: "reconciliation basis".to_string(),
                edges: vec![
                    (Ref::Handle(left), Ref::Handle(matched_handle)),
                    (Ref::Handle(right), Ref::Handle(matched_handle)),
                ],
            },
            Citation {
                label: "match rate derivation".to_string(),
                edges: vec![
                    (Ref::Step(StepId(STEP_RECONCILE)), Ref::Fact("match_rate".to_string())),
                    (Ref::Handle(matched_handle), Ref::Fact("match_rate".to_string())),
                ],
            },
            Citation {
                label: "pending classification".to_string(),
                edges: vec![(
                    Ref::Config("match.recency_horizon_days".to_string()),
                    Ref::Fact("payment_pending".to_string()),
                )],
            },
        ];
        Ok(Produced {
            artifact: figures.apply(base.with_table(self.table_meta(matched_handle)?)),
            handle: Some(matched_handle),
            executor_calls: 3,
            citations,
        })
    }

    fn synthesize(&mut self, base: ArtifactPayload) -> Result<Produced, SessionError> {
        let (matched_handle, agg_matched, agg_pending) = self.reconcile_products()?;
        let figures = self.close_figures(matched_handle, agg_matched, agg_pending)?;
        let citations = vec![Citation {
            label: "close summary basis".to_string(),
            edges: vec![(
                Ref::Handle(matched_handle),
                Ref::Fact("close_summary".to_string()),
            )],
        }];
        Ok(Produced {
            artifact: figures.apply(base.with_table(self.table_meta(matched_handle)?)),
            handle: Some(matched_handle),
            executor_calls: 0,
            citations,
        })
    }

    /// Read the headline close figures off the stored aggregates.
    fn close_figures(
        &self,
        matched_handle: HandleId,
        agg_matched: HandleId,
        agg_pending: HandleId,
    ) -> Result<CloseFigures, SessionError> {
        let invoices = self.store.handle(matched_handle).map_err(exec_err)?.row_count;
        let matched_total = self.scalar(agg_matched, "matched_total")?;
        let matched_count = self.scalar(agg_matched, "matched_count")?;
        let pending_total = self.scalar(agg_pending, "pending_total")?;
        let pending_count = self.scalar(agg_pending, "pending_count")?;
        Ok(CloseFigures {
            invoices,
            matched_total,
            matched_count,
            pending_total,
            pending_count,
        })
    }
}

/// The figures the reconcile and synthesize artifacts carry.
struct CloseFigures {
    invoices: u64,
    matched_total: i64,
    matched_count: i64,
    pending_total: i64,
    pending_count: i64,
}

impl CloseFigures {
    fn apply(&self, artifact: ArtifactPayload) -> ArtifactPayload {
        let unmatched = self.invoices as i64 - self.matched_count - self.pending_count;
        artifact
            .with_field(
                "match_rate",
                FieldValue::Ratio {
                    num: self.matched_count as u64,
                    den: self.invoices,
                },
            )
            .with_field("matched_total", FieldValue::Cents(self.matched_total))
            .with_field("matched_count", FieldValue::Int(self.matched_count))
            .with_field(
                "payment_pending_total",
                FieldValue::Cents(self.pending_total),
            )
            .with_field("payment_pending_count", FieldValue::Int(self.pending_count))
            .with_field("unmatched_count", FieldValue::Int(unmatched))
    }
}

impl StepProducer for ScenarioProducer {
    fn produce(
        &mut self,
        step: &PlanStep,
        iteration: u32,
        prior: Prior,
        writer: &mut AgentInstance,
    ) -> Result<Produced, SessionError> {
        let base = writer.produce(step, iteration, prior);
        let fault = writer.fault_for(iteration).cloned();
        match step.id.0 {
            id if extract_input(id).is_some() => {
                let input = extract_input(id).expect("checked above");
                self.extract(base, id, iteration, input, fault)
            }
            STEP_CONSOLIDATE => self.consolidate(base, iteration),
            STEP_STANDARDIZE => self.standardize(base, iteration),
            STEP_RECONCILE => self.reconcile(base, iteration),
            STEP_SYNTHESIZE => self.synthesize(base),
            other => Err(producer_err(format!("no recipe for step {other}"))),
        }
    }

    fn snapshot(&self) -> Option<ExecManifest> {
        Some(self.store.manifest())
    }

    fn restore(&mut self, manifest: &ExecManifest) -> Result<(), SessionError> {
        self.store = ExecutorStore::restore(manifest, fixtures::resolve_input).map_err(exec_err)?;
        Ok(())
    }
}

// ============================================================================
// Report
// ============================================================================

/// Headline results of a walkthrough run, computed from the log alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub verdict: UserVerdict,
    /// Critique iterations each step took, by step id.
    pub step_iterations: BTreeMap<StepId, u32>,
    /// Total critique iterations across the run.
    pub total_iterations: u32,
    pub match_rate: FieldValue,
    pub matched_total_cents: i64,
    pub payment_pending_total_cents: i64,
    pub payment_pending_count: i64,
    pub unmatched_count: i64,
}

impl ScenarioReport {
    /// Fold the report out of a completed session log.
    pub fn from_log(log: &SessionLog) -> Result<ScenarioReport, ScenarioError> {
        let mut artifacts: BTreeMap<u64, &ArtifactPayload> = BTreeMap::new();
        let mut step_iterations: BTreeMap<StepId, u32> = BTreeMap::new();
        let mut total_iterations = 0;
        let mut final_message = None;
        let mut verdict = None;
        for event in log.events() {
            match &event.kind {
                EventKind::MessageSent { message } => {
                    match &message.payload {
                        Payload::Artifact(a) => {
                            artifacts.insert(message.id.0, a);
                        }
                        Payload::Control(ControlPayload::UserDecision { verdict: v }) => {
                            verdict = Some(*v);
                        }
                        _ => {}
                    };
                }
                EventKind::ArtifactProduced {
                    message,
                    step,
                    iteration,
                    ..
                } => {
                    total_iterations += 1;
                    let slot = step_iterations.entry(*step).or_insert(0);
                    *slot = (*slot).max(*iteration);
                    final_message = Some(message.0);
                }
                _ => {}
            }
        }
        let verdict = verdict.ok_or(ScenarioError::NoUserDecision)?;
        let final_message = final_message.ok_or(ScenarioError::NoArtifacts)?;
        let summary = artifacts
            .get(&final_message)
            .ok_or(ScenarioError::NoArtifacts)?;
        let field = |name: &'static str| {
            summary
                .fields
                .get(name)
                .cloned()
                .ok_or(ScenarioError::MissingField { field: name })
        };
        let cents = |name: &'static str| match field(name)? {
            FieldValue::Cents(c) => Ok(c),
            other => Err(ScenarioError::WrongFieldShape {
                field: name,
                found: format!("{other:?}"),
            }),
        };
        let int = |name: &'static str| match field(name)? {
            FieldValue::Int(v) => Ok(v),
            other => Err(ScenarioError::WrongFieldShape {
                field: name,
                found: format!("{other:?}"),
            }),
        };
        Ok(ScenarioReport {
            verdict,
            step_iterations,
            total_iterations,
            match_rate: field("match_rate")?,
            matched_total_cents: cents("matched_total")?,
            payment_pending_total_cents: cents("payment_pending_total")?,
            payment_pending_count: int("payment_pending_count")?,
            unmatched_count: int("unmatched_count")?,
        })
    }

    /// The match rate as a two-decimal percentage string.
    pub fn match_rate_pct(&self) -> Option<String> {
        self.match_rate.percent_2dp()
    }
}

/// A finished walkthrough: the session run plus its folded report.
pub struct ScenarioRun {
    pub run: SessionRun,
    pub report: ScenarioReport,
}

/// Run the quarterly-close walkthrough once.
pub fn run_financial_close(
    session_id: u64,
    seed: u64,
    config: &SimConfig,
) -> Result<ScenarioRun, ScenarioError> {
    let definition = financial_close_definition(session_id, seed, config);
    let producer = ScenarioProducer::for_definition(&definition);
    let run = run_session(definition, producer)?;
    let report = ScenarioReport::from_log(&run.log)?;
    Ok(ScenarioRun { run, report })
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("log ends without a user decision")]
    NoUserDecision,
    #[error("log holds no produced artifacts")]
    NoArtifacts,
    #[error("final summary lacks field {field:?}")]
    MissingField { field: &'static str },
    #[error("field {field:?} has unexpected shape {found}")]
    WrongFieldShape { field: &'static str, found: String },
}
