//! Isolated execution context: the store that holds every raw dataset and
//! intermediate result, exposing only [`DataHandle`]s and [`Summary`]s to
//! the rest of the system.
//!
//! The tabular engine and its row/cell types live in a private submodule;
//! no other module can name them. Agents describe work as programs of
//! [`Primitive`]s over handles, and perceive results through schema, stats,
//! bounded sample rows, group breakdowns, and distributions. Every operation
//! is recorded in a replayable manifest with column-level lineage, so a
//! checkpoint can carry the store by reference and rebuild it exactly.

mod engine;
mod similarity;

pub use engine::{AggFunc, Cmp, ProjectSource, WindowFunc};
pub use similarity::edit_ratio;

use crate::artifact::DType;
use crate::ids::HandleId;
use chrono::NaiveDate;
use engine::{Table, Value};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default field delimiter for fixture tables.
pub const DEFAULT_DELIMITER: char = '|';

/// Default cap on rows a SampleRows summary may return.
pub const DEFAULT_SAMPLE_ROW_CAP: usize = 5;

/// Opaque reference to a stored table: everything an agent may know about
/// it except the rows themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataHandle {
    pub id: HandleId,
    pub schema: Vec<(String, DType)>,
    pub row_count: u64,
    /// Parent handles with the operation that consumed them.
    pub lineage_parents: Vec<(HandleId, String)>,
}

/// Typed literal for filter comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Null,
    Text(String),
    Int(i64),
    Cents(i64),
    Date(NaiveDate),
    Bool(bool),
}

impl Literal {
    fn to_value(&self) -> Value {
        match self {
            Literal::Null => Value::Null,
            Literal::Text(s) => Value::Text(s.clone()),
            Literal::Int(i) => Value::Int(*i),
            Literal::Cents(c) => Value::Cents(*c),
            Literal::Date(d) => Value::Date(*d),
            Literal::Bool(b) => Value::Bool(*b),
        }
    }
}

/// Row-count condition for the conditional primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    RowCountAtLeast(u64),
    RowCountIs(u64),
}

/// One step of a submitted program. Binary primitives name their second
/// operand as an index into the submit call's input list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Filter {
        column: String,
        cmp: Cmp,
        value: Literal,
    },
    Select {
        columns: Vec<String>,
    },
    Project {
        outputs: Vec<(String, ProjectSource)>,
    },
    Join {
        with: usize,
        left_key: String,
        right_key: String,
    },
    Aggregate {
        aggs: Vec<(String, AggFunc, String)>,
    },
    GroupBy {
        keys: Vec<String>,
        aggs: Vec<(String, AggFunc, String)>,
    },
    Pivot {
        index: String,
        column: String,
        value: String,
        func: AggFunc,
    },
    Unpivot {
        columns: Vec<String>,
        name_column: String,
        value_column: String,
    },
    Union {
        with: usize,
    },
    Difference {
        with: usize,
    },
    Distinct,
    Sort {
        by: Vec<(String, bool)>,
    },
    Limit {
        n: u64,
    },
    Window {
        order_by: Vec<(String, bool)>,
        func: WindowFunc,
        value_column: String,
        output: String,
    },
    TypeConvert {
        column: String,
        target: DType,
    },
    /// Apply `then` when the condition holds on the current table,
    /// `otherwise` when it does not.
    Conditional {
        when: Condition,
        then: Vec<Primitive>,
        otherwise: Vec<Primitive>,
    },
    /// Try `primary`; if it fails, apply `alternate` instead of surfacing
    /// the failure.
    Fallback {
        primary: Box<Primitive>,
        alternate: Box<Primitive>,
    },
    /// No data effect; records a labeled marker the orchestrator can use
    /// as a checkpoint cue.
    CheckpointMark {
        label: String,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Filter { .. } => "filter",
            Primitive::Select { .. } => "select",
            Primitive::Project { .. } => "project",
            Primitive::Join { .. } => "join",
            Primitive::Aggregate { .. } => "aggregate",
            Primitive::GroupBy { .. } => "group_by",
            Primitive::Pivot { .. } => "pivot",
            Primitive::Unpivot { .. } => "unpivot",
            Primitive::Union { .. } => "union",
            Primitive::Difference { .. } => "difference",
            Primitive::Distinct => "distinct",
            Primitive::Sort { .. } => "sort",
            Primitive::Limit { .. } => "limit",
            Primitive::Window { .. } => "window",
            Primitive::TypeConvert { .. } => "type_convert",
            Primitive::Conditional { .. } => "conditional",
            Primitive::Fallback { .. } => "fallback",
            Primitive::CheckpointMark { .. } => "checkpoint_mark",
        }
    }

    /// Structural argument validation, independent of any input table.
    fn validate_args(&self, input_count: usize) -> Result<(), String> {
        let check_with = |with: usize| {
            if with == 0 || with >= input_count {
                Err(format!(
                    "operand index {with} out of range (inputs: {input_count})"
                ))
            } else {
                Ok(())
            }
        };
        match self {
            Primitive::Select { columns } if columns.is_empty() => {
                Err("select needs at least one column".to_string())
            }
            Primitive::Project { outputs } if outputs.is_empty() => {
                Err("project needs at least one output".to_string())
            }
            Primitive::Join { with, .. }
            | Primitive::Union { with }
            | Primitive::Difference { with } => check_with(*with),
            Primitive::Aggregate { aggs } | Primitive::GroupBy { aggs, .. } if aggs.is_empty() => {
                Err("aggregation needs at least one aggregate".to_string())
            }
            Primitive::Sort { by } if by.is_empty() => {
                Err("sort needs at least one key".to_string())
            }
            Primitive::Unpivot { columns, .. } if columns.is_empty() => {
                Err("unpivot needs at least one column".to_string())
            }
            Primitive::Conditional { then, otherwise, .. } => {
                for p in then.iter().chain(otherwise) {
                    p.validate_args(input_count)?;
                }
                Ok(())
            }
            Primitive::Fallback { primary, alternate } => {
                primary.validate_args(input_count)?;
                alternate.validate_args(input_count)
            }
            Primitive::CheckpointMark { label } if label.is_empty() => {
                Err("checkpoint mark needs a label".to_string())
            }
            _ => Ok(()),
        }
    }
}

/// What a summary request asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryRequest {
    SchemaOnly,
    Stats { column: String },
    SampleRows { limit: usize },
    GroupBreakdown { by: String },
    Distribution { column: String, buckets: u32 },
}

/// A single aggregate value as it crosses the isolation boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarStat {
    Text(String),
    Int(i64),
    Cents(i64),
    Date(NaiveDate),
    Float(f64),
    Bool(bool),
}

impl ScalarStat {
    fn from_value(value: &Value) -> Option<ScalarStat> {
        match value {
            Value::Null => None,
            Value::Text(s) => Some(ScalarStat::Text(s.clone())),
            Value::Int(i) => Some(ScalarStat::Int(*i)),
            Value::Cents(c) => Some(ScalarStat::Cents(*c)),
            Value::Date(d) => Some(ScalarStat::Date(*d)),
            Value::Bool(b) => Some(ScalarStat::Bool(*b)),
            Value::Float(f) => Some(ScalarStat::Float(*f)),
        }
    }

    pub fn render(&self) -> String {
        match self {
            ScalarStat::Text(s) => s.clone(),
            ScalarStat::Int(i) => i.to_string(),
            ScalarStat::Cents(c) => engine::render_cents(*c),
            ScalarStat::Date(d) => d.format("%Y-%m-%d").to_string(),
            ScalarStat::Float(f) => format!("{f}"),
            ScalarStat::Bool(b) => b.to_string(),
        }
    }
}

/// One histogram bucket; bounds are in the column's base unit
/// (cents for currency columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistBucket {
    pub lo: i64,
    pub hi: i64,
    pub count: u64,
}

/// The content side of a summary. Aggregates only; never whole rows beyond
/// the bounded, rendered sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryContent {
    Schema {
        columns: Vec<(String, DType)>,
        row_count: u64,
    },
    Stats {
        column: String,
        count: u64,
        null_count: u64,
        distinct: u64,
        min: Option<ScalarStat>,
        max: Option<ScalarStat>,
        /// Mean in thousandths of the column's base unit, rounded half-up;
        /// absent for non-numeric columns and empty tables.
        mean_milli: Option<i64>,
    },
    SampleRows {
        columns: Vec<String>,
        rows: Vec<Vec<String>>,
    },
    GroupBreakdown {
        by: String,
        groups: Vec<(String, u64)>,
    },
    Distribution {
        column: String,
        buckets: Vec<DistBucket>,
    },
}

/// A summary as delivered to an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub source: HandleId,
    pub content: SummaryContent,
}

/// Knobs governing record linkage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Minimum normalized edit similarity on the key columns.
    pub threshold: f64,
    pub amount_tolerance_cents: i64,
    /// A candidate pair may differ by at most this many days either way.
    pub date_window_days: i64,
    /// Unmatched rows dated within this many days before period end are
    /// classified as payment-pending rather than unmatched.
    pub recency_horizon_days: i64,
    pub period_end: NaiveDate,
}

/// Arguments to [`ExecutorStore::fuzzy_match`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub left: HandleId,
    pub right: HandleId,
    pub left_key: String,
    pub right_key: String,
    pub left_amount: String,
    pub right_amount: String,
    pub left_date: String,
    pub right_date: String,
    pub config: MatchConfig,
}

/// Row classification produced by record linkage.
pub const STATUS_MATCHED: &str = "MATCHED";
pub const STATUS_PAYMENT_PENDING: &str = "PAYMENT_PENDING";
pub const STATUS_UNMATCHED: &str = "UNMATCHED";

/// Aggregate view of one linkage run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchStats {
    pub left_rows: u64,
    pub matched: u64,
    pub payment_pending: u64,
    pub unmatched: u64,
    pub matched_total_cents: i64,
    pub payment_pending_total_cents: i64,
}

/// Linkage result: the classified table plus its aggregate stats.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub handle: DataHandle,
    pub stats: MatchStats,
}

/// Where an output column's values come from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineageSource {
    InputColumn { handle: HandleId, column: String },
    Constant,
    Config { key: String },
}

/// Column-level lineage record for one output column of one handle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLineage {
    pub handle: HandleId,
    pub column: String,
    pub sources: Vec<LineageSource>,
}

/// One replayable operation in the store's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredOp {
    LoadInput {
        output: HandleId,
        name: String,
        sha256: String,
        delimiter: char,
        schema: Vec<(String, DType)>,
    },
    Submit {
        output: HandleId,
        inputs: Vec<HandleId>,
        program: Vec<Primitive>,
    },
    Match {
        output: HandleId,
        spec: MatchSpec,
    },
}

impl StoredOp {
    pub fn output(&self) -> HandleId {
        match self {
            StoredOp::LoadInput { output, .. }
            | StoredOp::Submit { output, .. }
            | StoredOp::Match { output, .. } => *output,
        }
    }
}

/// Serializable description of the whole store: replaying the ops against
/// the original inputs rebuilds every table. Checkpoints carry this instead
/// of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecManifest {
    pub seed: u64,
    pub sample_row_cap: usize,
    pub ops: Vec<StoredOp>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("unknown handle {0}")]
    UnknownHandle(HandleId),
    #[error("unknown column {column:?}")]
    UnknownColumn { column: String },
    #[error("program step {step} ({name}) failed: {reason}")]
    PrimitiveFailure {
        step: usize,
        name: &'static str,
        reason: String,
    },
    #[error("program step {step}: {reason}")]
    InvalidArgs { step: usize, reason: String },
    #[error("empty program")]
    EmptyProgram,
    #[error("sample of {requested} rows exceeds the cap of {cap}")]
    BudgetExceeded { requested: usize, cap: usize },
    #[error("input {name:?} failed to load: {reason}")]
    InputRejected { name: String, reason: String },
    #[error("no source registered for input {name:?}")]
    MissingInput { name: String },
    #[error("input {name:?} does not match its recorded digest")]
    IntegrityMismatch { name: String },
    #[error("{field} must be within {lo}..={hi}")]
    ConfigOutOfRange {
        field: &'static str,
        lo: f64,
        hi: f64,
    },
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Session-local store of tables, handles, lineage, and the op manifest.
/// Handles are immutable; every mutation appends a new handle.
#[derive(Debug)]
pub struct ExecutorStore {
    seed: u64,
    sample_row_cap: usize,
    tables: BTreeMap<HandleId, Table>,
    handles: BTreeMap<HandleId, DataHandle>,
    ops: Vec<StoredOp>,
    lineage: Vec<ColumnLineage>,
    marks: Vec<(HandleId, String)>,
    next_handle: u64,
}

type LineageVec = Vec<Vec<LineageSource>>;

impl ExecutorStore {
    pub fn new(seed: u64) -> Self {
        ExecutorStore::with_sample_cap(seed, DEFAULT_SAMPLE_ROW_CAP)
    }

    pub fn with_sample_cap(seed: u64, sample_row_cap: usize) -> Self {
        ExecutorStore {
            seed,
            sample_row_cap,
            tables: BTreeMap::new(),
            handles: BTreeMap::new(),
            ops: Vec::new(),
            lineage: Vec::new(),
            marks: Vec::new(),
            next_handle: 1,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn handle(&self, id: HandleId) -> Result<&DataHandle, ExecError> {
        self.handles.get(&id).ok_or(ExecError::UnknownHandle(id))
    }

    pub fn handles(&self) -> impl Iterator<Item = &DataHandle> {
        self.handles.values()
    }

    pub fn ops(&self) -> &[StoredOp] {
        &self.ops
    }

    pub fn column_lineage(&self) -> &[ColumnLineage] {
        &self.lineage
    }

    /// Checkpoint markers hit so far: (producing handle, label).
    pub fn marks(&self) -> &[(HandleId, String)] {
        &self.marks
    }

    fn fresh_handle(&mut self) -> HandleId {
        let id = HandleId(self.next_handle);
        self.next_handle += 1;
        id
    }

    fn install(
        &mut self,
        id: HandleId,
        table: Table,
        parents: Vec<(HandleId, String)>,
        lineage: LineageVec,
    ) -> DataHandle {
        let handle = DataHandle {
            id,
            schema: table
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.dtype))
                .collect(),
            row_count: table.rows.len() as u64,
            lineage_parents: parents,
        };
        for (col, sources) in table.columns.iter().zip(lineage) {
            let mut sources = sources;
            sources.sort();
            sources.dedup();
            self.lineage.push(ColumnLineage {
                handle: id,
                column: col.name.clone(),
                sources,
            });
        }
        self.tables.insert(id, table);
        self.handles.insert(id, handle.clone());
        handle
    }

    /// Register a session input from delimited text with a declared schema.
    pub fn load_input(
        &mut self,
        name: &str,
        text: &str,
        delimiter: char,
        schema: &[(String, DType)],
    ) -> Result<DataHandle, ExecError> {
        let table =
            Table::from_delimited(text, delimiter, schema).map_err(|reason| {
                ExecError::InputRejected {
                    name: name.to_string(),
                    reason,
                }
            })?;
        let id = self.fresh_handle();
        self.ops.push(StoredOp::LoadInput {
            output: id,
            name: name.to_string(),
            sha256: sha256_hex(text),
            delimiter,
            schema: schema.to_vec(),
        });
        let lineage: LineageVec = table.columns.iter().map(|_| vec![]).collect();
        Ok(self.install(id, table, Vec::new(), lineage))
    }

    /// Execute a program over the inputs; the chain starts at `inputs[0]`
    /// and binary primitives address later inputs by index.
    pub fn submit(
        &mut self,
        program: &[Primitive],
        inputs: &[HandleId],
    ) -> Result<DataHandle, ExecError> {
        if program.is_empty() {
            return Err(ExecError::EmptyProgram);
        }
        let first = *inputs.first().ok_or(ExecError::EmptyProgram)?;
        for &input in inputs {
            self.handle(input)?;
        }
        for (step, prim) in program.iter().enumerate() {
            prim.validate_args(inputs.len())
                .map_err(|reason| ExecError::InvalidArgs { step, reason })?;
        }

        let mut current = self
            .tables
            .get(&first)
            .ok_or(ExecError::UnknownHandle(first))?
            .clone();
        let mut lineage = input_lineage(&current, first);
        let mut marks: Vec<String> = Vec::new();
        for (step, prim) in program.iter().enumerate() {
            let (table, lin) = self
                .apply(current, lineage, prim, inputs, &mut marks)
                .map_err(|reason| ExecError::PrimitiveFailure {
                    step,
                    name: prim.name(),
                    reason,
                })?;
            current = table;
            lineage = lin;
        }

        let id = self.fresh_handle();
        self.ops.push(StoredOp::Submit {
            output: id,
            inputs: inputs.to_vec(),
            program: program.to_vec(),
        });
        let label = program
            .iter()
            .map(Primitive::name)
            .collect::<Vec<_>>()
            .join(",");
        let parents = inputs.iter().map(|&h| (h, label.clone())).collect();
        for mark in marks {
            self.marks.push((id, mark));
        }
        Ok(self.install(id, current, parents, lineage))
    }

    fn side_input(
        &self,
        inputs: &[HandleId],
        with: usize,
    ) -> Result<(&Table, LineageVec), String> {
        let id = inputs[with];
        let table = self
            .tables
            .get(&id)
            .ok_or_else(|| format!("unknown handle {id}"))?;
        Ok((table, input_lineage(table, id)))
    }

    fn apply(
        &self,
        table: Table,
        lineage: LineageVec,
        prim: &Primitive,
        inputs: &[HandleId],
        marks: &mut Vec<String>,
    ) -> Result<(Table, LineageVec), String> {
        match prim {
            Primitive::Filter { column, cmp, value } => {
                let out = table.filter(column, *cmp, &value.to_value())?;
                Ok((out, lineage))
            }
            Primitive::Select { columns } => {
                let indices: Vec<usize> = columns
                    .iter()
                    .map(|c| table.column_index(c))
                    .collect::<Result<_, _>>()?;
                let out = table.select(columns)?;
                let lin = indices.iter().map(|&i| lineage[i].clone()).collect();
                Ok((out, lin))
            }
            Primitive::Project { outputs } => {
                let mut lin = Vec::with_capacity(outputs.len());
                for (_, source) in outputs {
                    match source {
                        ProjectSource::Column(src) => {
                            let i = table.column_index(src)?;
                            lin.push(lineage[i].clone());
                        }
                        ProjectSource::ConstText(_) | ProjectSource::ConstInt(_) => {
                            lin.push(vec![LineageSource::Constant]);
                        }
                    }
                }
                let out = table.project(outputs)?;
                Ok((out, lin))
            }
            Primitive::Join {
                with,
                left_key,
                right_key,
            } => {
                let (right, right_lin) = self.side_input(inputs, *with)?;
                let out = table.join(right, left_key, right_key)?;
                let mut lin = lineage;
                lin.extend(right_lin);
                Ok((out, lin))
            }
            Primitive::Aggregate { aggs } => {
                let mut lin = Vec::with_capacity(aggs.len());
                for (_, _, col) in aggs {
                    let i = table.column_index(col)?;
                    lin.push(lineage[i].clone());
                }
                let out = table.aggregate(aggs)?;
                Ok((out, lin))
            }
            Primitive::GroupBy { keys, aggs } => {
                let mut lin = Vec::with_capacity(keys.len() + aggs.len());
                for key in keys {
                    let i = table.column_index(key)?;
                    lin.push(lineage[i].clone());
                }
                for (_, _, col) in aggs {
                    let i = table.column_index(col)?;
                    lin.push(lineage[i].clone());
                }
                let out = table.group_by(keys, aggs)?;
                Ok((out, lin))
            }
            Primitive::Pivot {
                index,
                column,
                value,
                func,
            } => {
                let ii = table.column_index(index)?;
                let ci = table.column_index(column)?;
                let vi = table.column_index(value)?;
                let out = table.pivot(index, column, value, *func)?;
                let mut cat_sources = lineage[vi].clone();
                cat_sources.extend(lineage[ci].clone());
                let mut lin = vec![lineage[ii].clone()];
                for _ in 1..out.columns.len() {
                    lin.push(cat_sources.clone());
                }
                Ok((out, lin))
            }
            Primitive::Unpivot {
                columns,
                name_column,
                value_column,
            } => {
                let melt_idx: Vec<usize> = columns
                    .iter()
                    .map(|c| table.column_index(c))
                    .collect::<Result<_, _>>()?;
                let id_idx: Vec<usize> = (0..table.columns.len())
                    .filter(|i| !melt_idx.contains(i))
                    .collect();
                let out = table.unpivot(columns, name_column, value_column)?;
                let mut lin: LineageVec =
                    id_idx.iter().map(|&i| lineage[i].clone()).collect();
                lin.push(vec![LineageSource::Constant]);
                let mut value_sources = Vec::new();
                for &i in &melt_idx {
                    value_sources.extend(lineage[i].clone());
                }
                lin.push(value_sources);
                Ok((out, lin))
            }
            Primitive::Union { with } => {
                let (right, right_lin) = self.side_input(inputs, *with)?;
                let out = table.union(right)?;
                let lin = lineage
                    .into_iter()
                    .zip(right_lin)
                    .map(|(mut a, b)| {
                        a.extend(b);
                        a
                    })
                    .collect();
                Ok((out, lin))
            }
            Primitive::Difference { with } => {
                let (right, _) = self.side_input(inputs, *with)?;
                let out = table.difference(right)?;
                Ok((out, lineage))
            }
            Primitive::Distinct => Ok((table.distinct(), lineage)),
            Primitive::Sort { by } => Ok((table.sort(by)?, lineage)),
            Primitive::Limit { n } => Ok((table.limit(*n as usize), lineage)),
            Primitive::Window {
                order_by,
                func,
                value_column,
                output,
            } => {
                let new_sources = match func {
                    WindowFunc::RowNumber => vec![LineageSource::Constant],
                    WindowFunc::CumSum => {
                        let i = table.column_index(value_column)?;
                        lineage[i].clone()
                    }
                };
                let out = table.window(order_by, *func, value_column, output)?;
                let mut lin = lineage;
                lin.push(new_sources);
                Ok((out, lin))
            }
            Primitive::TypeConvert { column, target } => {
                Ok((table.type_convert(column, *target)?, lineage))
            }
            Primitive::Conditional {
                when,
                then,
                otherwise,
            } => {
                let rows = table.rows.len() as u64;
                let holds = match when {
                    Condition::RowCountAtLeast(n) => rows >= *n,
                    Condition::RowCountIs(n) => rows == *n,
                };
                let branch = if holds { then } else { otherwise };
                let mut current = table;
                let mut lin = lineage;
                for p in branch {
                    let (t, l) = self.apply(current, lin, p, inputs, marks)?;
                    current = t;
                    lin = l;
                }
                Ok((current, lin))
            }
            Primitive::Fallback { primary, alternate } => {
                match self.apply(table.clone(), lineage.clone(), primary, inputs, marks) {
                    Ok(out) => Ok(out),
                    Err(_) => self.apply(table, lineage, alternate, inputs, marks),
                }
            }
            Primitive::CheckpointMark { label } => {
                marks.push(label.clone());
                Ok((table, lineage))
            }
        }
    }

    /// Produce the requested view of a handle without releasing its rows.
    pub fn summarize(
        &self,
        id: HandleId,
        request: &SummaryRequest,
    ) -> Result<Summary, ExecError> {
        let handle = self.handle(id)?;
        let table = self.tables.get(&id).ok_or(ExecError::UnknownHandle(id))?;
        let content = match request {
            SummaryRequest::SchemaOnly => SummaryContent::Schema {
                columns: handle.schema.clone(),
                row_count: handle.row_count,
            },
            SummaryRequest::Stats { column } => stats_content(table, column)?,
            SummaryRequest::SampleRows { limit } => {
                if *limit > self.sample_row_cap {
                    return Err(ExecError::BudgetExceeded {
                        requested: *limit,
                        cap: self.sample_row_cap,
                    });
                }
                SummaryContent::SampleRows {
                    columns: table.columns.iter().map(|c| c.name.clone()).collect(),
                    rows: table
                        .rows
                        .iter()
                        .take(*limit)
                        .map(|row| row.iter().map(Value::render).collect())
                        .collect(),
                }
            }
            SummaryRequest::GroupBreakdown { by } => {
                let idx = table
                    .column_index(by)
                    .map_err(|_| ExecError::UnknownColumn { column: by.clone() })?;
                let mut groups: BTreeMap<String, u64> = BTreeMap::new();
                for row in &table.rows {
                    *groups.entry(row[idx].render()).or_insert(0) += 1;
                }
                SummaryContent::GroupBreakdown {
                    by: by.clone(),
                    groups: groups.into_iter().collect(),
                }
            }
            SummaryRequest::Distribution { column, buckets } => {
                distribution_content(table, column, *buckets)?
            }
        };
        Ok(Summary {
            source: id,
            content,
        })
    }

    /// Classify each left row against the right table under fuzzy key
    /// similarity, exact-cents amount tolerance, and a day window. Right
    /// rows are consumed greedily by best similarity, so no expense backs
    /// two invoices.
    pub fn fuzzy_match(&mut self, spec: &MatchSpec) -> Result<MatchOutcome, ExecError> {
        if !(0.0..=1.0).contains(&spec.config.threshold) {
            return Err(ExecError::ConfigOutOfRange {
                field: "threshold",
                lo: 0.0,
                hi: 1.0,
            });
        }
        self.handle(spec.left)?;
        self.handle(spec.right)?;
        let left = self.tables.get(&spec.left).unwrap().clone();
        let right = self.tables.get(&spec.right).unwrap().clone();
        let col = |t: &Table, name: &str| {
            t.column_index(name)
                .map_err(|_| ExecError::UnknownColumn {
                    column: name.to_string(),
                })
        };
        let lk = col(&left, &spec.left_key)?;
        let la = col(&left, &spec.left_amount)?;
        let ld = col(&left, &spec.left_date)?;
        let rk = col(&right, &spec.right_key)?;
        let ra = col(&right, &spec.right_amount)?;
        let rd = col(&right, &spec.right_date)?;

        let mut consumed = vec![false; right.rows.len()];
        let mut out_rows: Vec<engine::Row> = Vec::with_capacity(left.rows.len());
        let mut stats = MatchStats {
            left_rows: left.rows.len() as u64,
            matched: 0,
            payment_pending: 0,
            unmatched: 0,
            matched_total_cents: 0,
            payment_pending_total_cents: 0,
        };
        for lrow in &left.rows {
            let mut best: Option<(usize, f64, i64, i64)> = None;
            if let (Value::Text(lkey), Value::Cents(lamt), Value::Date(ldate)) =
                (&lrow[lk], &lrow[la], &lrow[ld])
            {
                for (j, rrow) in right.rows.iter().enumerate() {
                    if consumed[j] {
                        continue;
                    }
                    let (rkey, ramt, rdate) = match (&rrow[rk], &rrow[ra], &rrow[rd]) {
                        (Value::Text(k), Value::Cents(a), Value::Date(d)) => (k, a, d),
                        _ => continue,
                    };
                    let similarity = edit_ratio(lkey, rkey);
                    if similarity < spec.config.threshold {
                        continue;
                    }
                    let amount_gap = (lamt - ramt).abs();
                    if amount_gap > spec.config.amount_tolerance_cents {
                        continue;
                    }
                    let day_gap = (*rdate - *ldate).num_days().abs();
                    if day_gap > spec.config.date_window_days {
                        continue;
                    }
                    let candidate = (j, similarity, amount_gap, day_gap);
                    let better = match &best {
                        None => true,
                        Some((_, s, a, d)) => {
                            (similarity, -amount_gap, -day_gap) > (*s, -*a, -*d)
                        }
                    };
                    if better {
                        best = Some(candidate);
                    }
                }
            }
            let mut out = lrow.clone();
            match best {
                Some((j, _, _, _)) => {
                    consumed[j] = true;
                    stats.matched += 1;
                    if let Value::Cents(amount) = &lrow[la] {
                        stats.matched_total_cents += amount;
                    }
                    out.push(Value::Text(STATUS_MATCHED.to_string()));
                    out.push(right.rows[j][rk].clone());
                    out.push(right.rows[j][ra].clone());
                    out.push(right.rows[j][rd].clone());
                }
                None => {
                    let pending = match &lrow[ld] {
                        Value::Date(date) => {
                            let age = (spec.config.period_end - *date).num_days();
                            (0..=spec.config.recency_horizon_days).contains(&age)
                        }
                        _ => false,
                    };
                    if pending {
                        stats.payment_pending += 1;
                        if let Value::Cents(amount) = &lrow[la] {
                            stats.payment_pending_total_cents += amount;
                        }
                        out.push(Value::Text(STATUS_PAYMENT_PENDING.to_string()));
                    } else {
                        stats.unmatched += 1;
                        out.push(Value::Text(STATUS_UNMATCHED.to_string()));
                    }
                    out.push(Value::Null);
                    out.push(Value::Null);
                    out.push(Value::Null);
                }
            }
            out_rows.push(out);
        }

        let mut columns = left.columns.clone();
        columns.push(engine_col("match_status", DType::Text));
        columns.push(engine_col("matched_key", DType::Text));
        columns.push(engine_col("matched_amount", DType::Currency));
        columns.push(engine_col("matched_date", DType::Date));
        let table = {
            let mut t = Table::new(columns);
            t.rows = out_rows;
            t
        };

        let mut lineage = input_lineage_ids(&left, spec.left);
        let status_sources = vec![
            LineageSource::InputColumn {
                handle: spec.left,
                column: spec.left_key.clone(),
            },
            LineageSource::InputColumn {
                handle: spec.right,
                column: spec.right_key.clone(),
            },
            LineageSource::InputColumn {
                handle: spec.left,
                column: spec.left_amount.clone(),
            },
            LineageSource::InputColumn {
                handle: spec.right,
                column: spec.right_amount.clone(),
            },
            LineageSource::InputColumn {
                handle: spec.left,
                column: spec.left_date.clone(),
            },
            LineageSource::InputColumn {
                handle: spec.right,
                column: spec.right_date.clone(),
            },
            LineageSource::Config {
                key: "match.threshold".to_string(),
            },
            LineageSource::Config {
                key: "match.amount_tolerance".to_string(),
            },
            LineageSource::Config {
                key: "match.date_window_days".to_string(),
            },
            LineageSource::Config {
                key: "match.recency_horizon_days".to_string(),
            },
            LineageSource::Config {
                key: "match.period_end".to_string(),
            },
        ];
        lineage.push(status_sources);
        for column in [&spec.right_key, &spec.right_amount, &spec.right_date] {
            lineage.push(vec![LineageSource::InputColumn {
                handle: spec.right,
                column: column.clone(),
            }]);
        }

        let id = self.fresh_handle();
        self.ops.push(StoredOp::Match {
            output: id,
            spec: spec.clone(),
        });
        let parents = vec![
            (spec.left, "fuzzy_match".to_string()),
            (spec.right, "fuzzy_match".to_string()),
        ];
        let handle = self.install(id, table, parents, lineage);
        Ok(MatchOutcome { handle, stats })
    }

    /// The replayable description of this store.
    pub fn manifest(&self) -> ExecManifest {
        ExecManifest {
            seed: self.seed,
            sample_row_cap: self.sample_row_cap,
            ops: self.ops.clone(),
        }
    }

    /// Rebuild a store from its manifest. `resolve` maps input names back
    /// to their delimited text; content is digest-verified before use.
    pub fn restore(
        manifest: &ExecManifest,
        resolve: impl Fn(&str) -> Option<String>,
    ) -> Result<ExecutorStore, ExecError> {
        let mut store =
            ExecutorStore::with_sample_cap(manifest.seed, manifest.sample_row_cap);
        for op in &manifest.ops {
            let rebuilt = match op {
                StoredOp::LoadInput {
                    name,
                    sha256,
                    delimiter,
                    schema,
                    ..
                } => {
                    let text = resolve(name).ok_or_else(|| ExecError::MissingInput {
                        name: name.clone(),
                    })?;
                    if sha256_hex(&text) != *sha256 {
                        return Err(ExecError::IntegrityMismatch { name: name.clone() });
                    }
                    store.load_input(name, &text, *delimiter, schema)?
                }
                StoredOp::Submit {
                    inputs, program, ..
                } => store.submit(program, inputs)?,
                StoredOp::Match { spec, .. } => store.fuzzy_match(spec)?.handle,
            };
            if rebuilt.id != op.output() {
                return Err(ExecError::IntegrityMismatch {
                    name: format!("{}", op.output()),
                });
            }
        }
        Ok(store)
    }

    /// Check that every column of every handle traces back, transitively,
    /// to session inputs, constants, or config keys.
    pub fn verify_lineage_closure(&self) -> Result<(), ExecError> {
        let inputs: std::collections::BTreeSet<HandleId> = self
            .ops
            .iter()
            .filter_map(|op| match op {
                StoredOp::LoadInput { output, .. } => Some(*output),
                _ => None,
            })
            .collect();
        for record in &self.lineage {
            let mut frontier: Vec<(HandleId, String)> = record
                .sources
                .iter()
                .filter_map(|s| match s {
                    LineageSource::InputColumn { handle, column } => {
                        Some((*handle, column.clone()))
                    }
                    _ => None,
                })
                .collect();
            let mut guard = 0;
            while let Some((handle, column)) = frontier.pop() {
                guard += 1;
                if guard > 100_000 {
                    return Err(ExecError::IntegrityMismatch {
                        name: format!("lineage closure diverged at {handle}"),
                    });
                }
                if inputs.contains(&handle) {
                    continue;
                }
                let upstream = self
                    .lineage
                    .iter()
                    .find(|l| l.handle == handle && l.column == column)
                    .ok_or_else(|| ExecError::UnknownColumn {
                        column: format!("{handle}.{column}"),
                    })?;
                for s in &upstream.sources {
                    if let LineageSource::InputColumn { handle, column } = s {
                        frontier.push((*handle, column.clone()));
                    }
                }
            }
        }
        Ok(())
    }
}

fn engine_col(name: &str, dtype: DType) -> engine::ColumnDef {
    engine::ColumnDef {
        name: name.to_string(),
        dtype,
    }
}

fn input_lineage(table: &Table, id: HandleId) -> LineageVec {
    table
        .columns
        .iter()
        .map(|c| {
            vec![LineageSource::InputColumn {
                handle: id,
                column: c.name.clone(),
            }]
        })
        .collect()
}

fn input_lineage_ids(table: &Table, id: HandleId) -> LineageVec {
    input_lineage(table, id)
}

fn stats_content(table: &Table, column: &str) -> Result<SummaryContent, ExecError> {
    let idx = table
        .column_index(column)
        .map_err(|_| ExecError::UnknownColumn {
            column: column.to_string(),
        })?;
    let cells: Vec<&Value> = table.rows.iter().map(|r| &r[idx]).collect();
    let non_null: Vec<&Value> = cells.iter().copied().filter(|v| !v.is_null()).collect();
    let null_count = (cells.len() - non_null.len()) as u64;
    let distinct = {
        let mut set = std::collections::BTreeSet::new();
        for v in &non_null {
            set.insert((*v).clone());
        }
        set.len() as u64
    };
    let min = non_null.iter().min().and_then(|v| ScalarStat::from_value(v));
    let max = non_null.iter().max().and_then(|v| ScalarStat::from_value(v));
    let mean_milli = {
        let mut sum: i64 = 0;
        let mut numeric = !non_null.is_empty();
        for v in &non_null {
            match v {
                Value::Int(i) | Value::Cents(i) => sum += i,
                _ => {
                    numeric = false;
                    break;
                }
            }
        }
        if numeric {
            let n = non_null.len() as i64;
            // round half up on the milli scale, sign-aware
            let scaled = sum * 1000;
            let half = n / 2;
            Some(if scaled >= 0 {
                (scaled + half) / n
            } else {
                -((-scaled + half) / n)
            })
        } else {
            None
        }
    };
    Ok(SummaryContent::Stats {
        column: column.to_string(),
        count: cells.len() as u64,
        null_count,
        distinct,
        min,
        max,
        mean_milli,
    })
}

fn distribution_content(
    table: &Table,
    column: &str,
    buckets: u32,
) -> Result<SummaryContent, ExecError> {
    let idx = table
        .column_index(column)
        .map_err(|_| ExecError::UnknownColumn {
            column: column.to_string(),
        })?;
    if buckets == 0 {
        return Err(ExecError::InvalidArgs {
            step: 0,
            reason: "distribution needs at least one bucket".to_string(),
        });
    }
    let mut values: Vec<i64> = Vec::new();
    for row in &table.rows {
        match &row[idx] {
            Value::Int(i) | Value::Cents(i) => values.push(*i),
            Value::Null => {}
            other => {
                return Err(ExecError::InvalidArgs {
                    step: 0,
                    reason: format!("distribution requires an integer-valued column, found {other:?}"),
                })
            }
        }
    }
    if values.is_empty() {
        return Ok(SummaryContent::Distribution {
            column: column.to_string(),
            buckets: Vec::new(),
        });
    }
    let min = *values.iter().min().unwrap();
    let max = *values.iter().max().unwrap();
    let k = buckets as i128;
    let span = (max - min) as i128 + 1;
    let mut counts = vec![0u64; buckets as usize];
    for v in &values {
        let offset = (*v - min) as i128;
        let bucket = (offset * k / span) as usize;
        counts[bucket] += 1;
    }
    let bucket_bound = |i: i128| min as i128 + i * span / k;
    let out = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| DistBucket {
            lo: bucket_bound(i as i128) as i64,
            hi: (bucket_bound(i as i128 + 1) - 1) as i64,
            count,
        })
        .collect();
    Ok(SummaryContent::Distribution {
        column: column.to_string(),
        buckets: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invoice_schema() -> Vec<(String, DType)> {
        vec![
            ("vendor".to_string(), DType::Text),
            ("amount".to_string(), DType::Currency),
            ("issued".to_string(), DType::Date),
        ]
    }

    fn seeded_store() -> (ExecutorStore, HandleId) {
        let mut store = ExecutorStore::new(7);
        let text = "vendor|amount|issued\n\
                    acme|10.00|2025-01-01\n\
                    acme|2.50|2025-01-02\n\
                    bolt|0.05|2025-01-03\n\
                    crane|7.77|2025-01-04\n";
        let h = store
            .load_input("toy", text, DEFAULT_DELIMITER, &invoice_schema())
            .unwrap();
        (store, h.id)
    }

    #[test]
    fn limit_zero_keeps_schema_and_drops_rows() {
        let (mut store, h) = seeded_store();
        let out = store.submit(&[Primitive::Limit { n: 0 }], &[h]).unwrap();
        assert_eq!(out.row_count, 0);
        assert_eq!(out.schema, store.handle(h).unwrap().schema);
    }

    #[test]
    fn union_with_self_then_distinct_matches_set_semantics() {
        // 20-row table with planted duplicates; the expected distinct count
        // comes from an independent set-based pass over the raw text.
        let mut lines = vec!["vendor|amount|issued".to_string()];
        for i in 0..20 {
            let vendor = ["acme", "bolt", "crane"][i % 3];
            let amount = format!("{}.00", (i % 5) + 1);
            lines.push(format!("{vendor}|{amount}|2025-01-0{}", (i % 7) + 1));
        }
        let text = lines.join("\n");
        let expected_distinct: std::collections::BTreeSet<&str> =
            lines[1..].iter().map(|s| s.as_str()).collect();

        let mut store = ExecutorStore::new(7);
        let h = store
            .load_input("dup", &text, DEFAULT_DELIMITER, &invoice_schema())
            .unwrap();
        let doubled = store
            .submit(&[Primitive::Union { with: 1 }], &[h.id, h.id])
            .unwrap();
        assert_eq!(doubled.row_count, 40);
        let distinct = store
            .submit(&[Primitive::Distinct], &[doubled.id])
            .unwrap();
        assert_eq!(distinct.row_count, expected_distinct.len() as u64);
    }

    #[test]
    fn stats_on_empty_table_has_null_extremes() {
        let (mut store, h) = seeded_store();
        let empty = store.submit(&[Primitive::Limit { n: 0 }], &[h]).unwrap();
        let summary = store
            .summarize(
                empty.id,
                &SummaryRequest::Stats {
                    column: "amount".to_string(),
                },
            )
            .unwrap();
        match summary.content {
            SummaryContent::Stats {
                count, min, max, ..
            } => {
                assert_eq!(count, 0);
                assert_eq!(min, None);
                assert_eq!(max, None);
            }
            other => panic!("wrong summary content: {other:?}"),
        }
    }

    #[test]
    fn sample_rows_respect_the_budget() {
        let (store, h) = seeded_store();
        let err = store
            .summarize(h, &SummaryRequest::SampleRows { limit: 50 })
            .unwrap_err();
        assert!(matches!(err, ExecError::BudgetExceeded { cap: 5, .. }));
        let ok = store
            .summarize(h, &SummaryRequest::SampleRows { limit: 2 })
            .unwrap();
        match ok.content {
            SummaryContent::SampleRows { rows, .. } => assert_eq!(rows.len(), 2),
            other => panic!("wrong summary content: {other:?}"),
        }
    }

    #[test]
    fn group_breakdown_counts_by_key() {
        let (store, h) = seeded_store();
        let summary = store
            .summarize(
                h,
                &SummaryRequest::GroupBreakdown {
                    by: "vendor".to_string(),
                },
            )
            .unwrap();
        match summary.content {
            SummaryContent::GroupBreakdown { groups, .. } => {
                assert_eq!(
                    groups,
                    vec![
                        ("acme".to_string(), 2),
                        ("bolt".to_string(), 1),
                        ("crane".to_string(), 1)
                    ]
                );
            }
            other => panic!("wrong summary content: {other:?}"),
        }
    }

    #[test]
    fn distribution_counts_match_a_brute_force_histogram() {
        let (store, h) = seeded_store();
        let summary = store
            .summarize(
                h,
                &SummaryRequest::Distribution {
                    column: "amount".to_string(),
                    buckets: 4,
                },
            )
            .unwrap();
        let buckets = match summary.content {
            SummaryContent::Distribution { buckets, .. } => buckets,
            other => panic!("wrong summary content: {other:?}"),
        };
        // Independent tally: walk the raw cents values and count per range.
        let raw_cents = [1000i64, 250, 5, 777];
        let total: u64 = buckets.iter().map(|b| b.count).sum();
        assert_eq!(total, raw_cents.len() as u64);
        for bucket in &buckets {
            let expected = raw_cents
                .iter()
                .filter(|&&v| v >= bucket.lo && v <= bucket.hi)
                .count() as u64;
            assert_eq!(bucket.count, expected, "bucket {bucket:?}");
        }
        // Ranges tile [min, max] without gaps.
        assert_eq!(buckets[0].lo, 5);
        assert_eq!(buckets[3].hi, 1000);
        for pair in buckets.windows(2) {
            assert_eq!(pair[0].hi + 1, pair[1].lo);
        }
    }

    #[test]
    fn identical_keys_amounts_and_dates_all_match() {
        let (mut store, h) = seeded_store();
        let spec = MatchSpec {
            left: h,
            right: h,
            left_key: "vendor".to_string(),
            right_key: "vendor".to_string(),
            left_amount: "amount".to_string(),
            right_amount: "amount".to_string(),
            left_date: "issued".to_string(),
            right_date: "issued".to_string(),
            config: MatchConfig {
                threshold: 0.85,
                amount_tolerance_cents: 1,
                date_window_days: 7,
                recency_horizon_days: 14,
                period_end: NaiveDate::from_ymd_opt(2025, 3, 31).unwrap(),
            },
        };
        let outcome = store.fuzzy_match(&spec).unwrap();
        assert_eq!(outcome.stats.matched, 4);
        assert_eq!(outcome.stats.unmatched, 0);
        assert_eq!(outcome.stats.payment_pending, 0);
        assert_eq!(outcome.stats.matched_total_cents, 1000 + 250 + 5 + 777);
    }

    #[test]
    fn exact_threshold_rejects_a_one_character_variation() {
        let mut store = ExecutorStore::new(7);
        let left = store
            .load_input(
                "left",
                "vendor|amount|issued\nNorthwave Telecom LLC|310.40|2025-01-20\n",
                DEFAULT_DELIMITER,
                &invoice_schema(),
            )
            .unwrap();
        let right = store
            .load_input(
                "right",
                "vendor|amount|issued\nNorthwave Telecomm LLC|310.40|2025-01-20\n",
                DEFAULT_DELIMITER,
                &invoice_schema(),
            )
            .unwrap();
        let mut spec = MatchSpec {
            left: left.id,
            right: right.id,
            left_key: "vendor".to_string(),
            right_key: "vendor".to_string(),
            left_amount: "amount".to_string(),
            right_amount: "amount".to_string(),
            left_date: "issued".to_string(),
            right_date: "issued".to_string(),
            config: MatchConfig {
                threshold: 1.0,
                amount_tolerance_cents: 1,
                date_window_days: 7,
                recency_horizon_days: 14,
                period_end: NaiveDate::from_ymd_opt(2025, 3, 31).unwrap(),
            },
        };
        let strict = store.fuzzy_match(&spec).unwrap();
        assert_eq!(strict.stats.matched, 0);
        // The same pair clears the production threshold.
        spec.config.threshold = 0.85;
        let loose = store.fuzzy_match(&spec).unwrap();
        assert_eq!(loose.stats.matched, 1);
    }

    #[test]
    fn recent_unmatched_rows_are_payment_pending() {
        let mut store = ExecutorStore::new(7);
        let left = store
            .load_input(
                "left",
                "vendor|amount|issued\n\
                 Northwave Telecom LLC|425.00|2025-03-24\n\
                 Northwave Telecom LLC|99.00|2025-01-02\n",
                DEFAULT_DELIMITER,
                &invoice_schema(),
            )
            .unwrap();
        let right = store
            .load_input(
                "right",
                "vendor|amount|issued\nOffice Depot|12.00|2025-03-24\n",
                DEFAULT_DELIMITER,
                &invoice_schema(),
            )
            .unwrap();
        let spec = MatchSpec {
            left: left.id,
            right: right.id,
            left_key: "vendor".to_string(),
            right_key: "vendor".to_string(),
            left_amount: "amount".to_string(),
            right_amount: "amount".to_string(),
            left_date: "issued".to_string(),
            right_date: "issued".to_string(),
            config: MatchConfig {
                threshold: 0.85,
                amount_tolerance_cents: 1,
                date_window_days: 7,
                recency_horizon_days: 14,
                period_end: NaiveDate::from_ymd_opt(2025, 3, 31).unwrap(),
            },
        };
        let outcome = store.fuzzy_match(&spec).unwrap();
        assert_eq!(outcome.stats.matched, 0);
        assert_eq!(outcome.stats.payment_pending, 1);
        assert_eq!(outcome.stats.unmatched, 1);
        assert_eq!(outcome.stats.payment_pending_total_cents, 42_500);
    }

    #[test]
    fn fallback_rescues_a_failing_step() {
        let (mut store, h) = seeded_store();
        let program = [Primitive::Fallback {
            primary: Box::new(Primitive::Select {
                columns: vec!["no_such_column".to_string()],
            }),
            alternate: Box::new(Primitive::Select {
                columns: vec!["vendor".to_string()],
            }),
        }];
        let out = store.submit(&program, &[h]).unwrap();
        assert_eq!(out.schema.len(), 1);
        // Without the fallback the same step surfaces as a failure.
        let err = store
            .submit(
                &[Primitive::Select {
                    columns: vec!["no_such_column".to_string()],
                }],
                &[h],
            )
            .unwrap_err();
        assert!(matches!(
            err,
            ExecError::PrimitiveFailure { step: 0, name: "select", .. }
        ));
    }

    #[test]
    fn conditional_takes_the_branch_the_table_selects() {
        let (mut store, h) = seeded_store();
        let program = [Primitive::Conditional {
            when: Condition::RowCountAtLeast(3),
            then: vec![Primitive::Limit { n: 1 }],
            otherwise: vec![Primitive::Limit { n: 0 }],
        }];
        let out = store.submit(&program, &[h]).unwrap();
        assert_eq!(out.row_count, 1);
    }

    #[test]
    fn checkpoint_marks_are_recorded_without_data_effect() {
        let (mut store, h) = seeded_store();
        let out = store
            .submit(
                &[
                    Primitive::CheckpointMark {
                        label: "before-sort".to_string(),
                    },
                    Primitive::Sort {
                        by: vec![("amount".to_string(), false)],
                    },
                ],
                &[h],
            )
            .unwrap();
        assert_eq!(out.row_count, 4);
        assert_eq!(store.marks(), &[(out.id, "before-sort".to_string())]);
    }

    #[test]
    fn submits_are_deterministic_given_inputs_and_program() {
        let build = || {
            let (mut store, h) = seeded_store();
            let out = store
                .submit(
                    &[
                        Primitive::GroupBy {
                            keys: vec!["vendor".to_string()],
                            aggs: vec![(
                                "total".to_string(),
                                AggFunc::Sum,
                                "amount".to_string(),
                            )],
                        },
                        Primitive::Sort {
                            by: vec![("total".to_string(), true)],
                        },
                    ],
                    &[h],
                )
                .unwrap();
            store
                .summarize(out.id, &SummaryRequest::SampleRows { limit: 3 })
                .unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn manifest_restore_rebuilds_identical_state() {
        let (mut store, h) = seeded_store();
        let grouped = store
            .submit(
                &[Primitive::GroupBy {
                    keys: vec!["vendor".to_string()],
                    aggs: vec![("total".to_string(), AggFunc::Sum, "amount".to_string())],
                }],
                &[h],
            )
            .unwrap();
        let manifest = store.manifest();
        let source = "vendor|amount|issued\n\
                      acme|10.00|2025-01-01\n\
                      acme|2.50|2025-01-02\n\
                      bolt|0.05|2025-01-03\n\
                      crane|7.77|2025-01-04\n";
        let restored = ExecutorStore::restore(&manifest, |name| {
            (name == "toy").then(|| source.to_string())
        })
        .unwrap();
        assert_eq!(
            restored.handle(grouped.id).unwrap(),
            store.handle(grouped.id).unwrap()
        );
        let view = SummaryRequest::SampleRows { limit: 3 };
        assert_eq!(
            restored.summarize(grouped.id, &view).unwrap(),
            store.summarize(grouped.id, &view).unwrap()
        );
        // Tampered input text is refused by digest check.
        let err = ExecutorStore::restore(&manifest, |_| {
            Some(source.replace("10.00", "11.00"))
        })
        .unwrap_err();
        assert!(matches!(err, ExecError::IntegrityMismatch { .. }));
        // Missing input is its own error.
        let err = ExecutorStore::restore(&manifest, |_| None).unwrap_err();
        assert!(matches!(err, ExecError::MissingInput { .. }));
    }

    #[test]
    fn lineage_closes_over_inputs_and_carries_config_refs() {
        let (mut store, h) = seeded_store();
        let spec = MatchSpec {
            left: h,
            right: h,
            left_key: "vendor".to_string(),
            right_key: "vendor".to_string(),
            left_amount: "amount".to_string(),
            right_amount: "amount".to_string(),
            left_date: "issued".to_string(),
            right_date: "issued".to_string(),
            config: MatchConfig {
                threshold: 0.85,
                amount_tolerance_cents: 1,
                date_window_days: 7,
                recency_horizon_days: 14,
                period_end: NaiveDate::from_ymd_opt(2025, 3, 31).unwrap(),
            },
        };
        let outcome = store.fuzzy_match(&spec).unwrap();
        store.verify_lineage_closure().unwrap();
        let status = store
            .column_lineage()
            .iter()
            .find(|l| l.handle == outcome.handle.id && l.column == "match_status")
            .unwrap();
        assert!(status.sources.iter().any(|s| matches!(
            s,
            LineageSource::Config { key } if key == "match.recency_horizon_days"
        )));
        assert!(!outcome.handle.lineage_parents.is_empty());
    }

    #[test]
    fn unknown_handles_and_columns_are_rejected() {
        let (mut store, h) = seeded_store();
        assert!(matches!(
            store.submit(&[Primitive::Distinct], &[HandleId(99)]),
            Err(ExecError::UnknownHandle(HandleId(99)))
        ));
        assert!(matches!(
            store.summarize(
                h,
                &SummaryRequest::Stats {
                    column: "missing".to_string()
                }
            ),
            Err(ExecError::UnknownColumn { .. })
        ));
        assert!(matches!(
            store.submit(&[], &[h]),
            Err(ExecError::EmptyProgram)
        ));
    }
}
