//! Artifact payloads: what writers produce, critics judge, and criteria
//! predicates inspect.
//!
//! An artifact never carries raw table rows. Tabular results stay inside the
//! executor and are referenced here by handle plus column-level metadata, so
//! criteria stay evaluatable without reaching across the isolation boundary.

use crate::ids::{HandleId, StepId};
use crate::kernel::AgentRole;
use crate::plan::StepKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Column types understood by the executor and surfaced in metadata.
///
/// `Currency` is fixed-point integer cents end to end; money never touches
/// floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    Text,
    Int,
    Currency,
    Date,
    Bool,
    Float,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DType::Text => "text",
            DType::Int => "int",
            DType::Currency => "currency",
            DType::Date => "date",
            DType::Bool => "bool",
            DType::Float => "float",
        };
        f.write_str(s)
    }
}

/// Scalar value attached to an artifact field.
///
/// `Cents` holds money as integer cents; `Ratio` keeps rates exact until a
/// report decides how many decimals to print.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldValue {
    Text(String),
    Int(i64),
    Cents(i64),
    Ratio { num: u64, den: u64 },
}

impl FieldValue {
    /// Ratio rendered as a percentage with two decimals (round half up).
    pub fn percent_2dp(&self) -> Option<String> {
        match self {
            FieldValue::Ratio { num, den } if *den > 0 => {
                // hundredths of a percent, rounded half-up in integers
                let scaled = (*num as u128 * 10_000 + (*den as u128 / 2)) / *den as u128;
                let whole = scaled / 100;
                let frac = scaled % 100;
                Some(format!("{whole}.{frac:02}"))
            }
            _ => None,
        }
    }
}

/// Per-column metadata carried across the isolation boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub dtype: DType,
    pub null_count: u64,
}

/// Metadata describing a tabular result by reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub handle: HandleId,
    pub row_count: u64,
    pub columns: Vec<ColumnMeta>,
}

impl TableMeta {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Ground-truth defect class. Each class is visible to exactly one critique
/// layer: code defects to code review, chart defects to chart review, intent
/// defects only to the output gate or the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Code,
    Chart,
    Intent,
}

/// Hidden ground-truth flag attached to a defective artifact.
///
/// Catchability is drawn once, when the defect is introduced: `catch_inner`
/// says whether the matching inner critic will see it, `catch_outer` whether
/// the output gate will. Criteria predicates never read these flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectFlag {
    pub kind: DefectKind,
    pub catch_inner: bool,
    pub catch_outer: bool,
    /// Iteration of the producing step on which the defect was introduced.
    pub introduced_iteration: u32,
}

/// What a writer hands to the executor and the critics for one step attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPayload {
    pub step: StepId,
    pub kind: StepKind,
    pub iteration: u32,
    pub producer: AgentRole,
    /// Named scalar facts (totals, rates, statuses) criteria can test.
    pub fields: BTreeMap<String, FieldValue>,
    /// Tabular result by reference, when the step produced one.
    pub table: Option<TableMeta>,
    /// Hidden ground truth; never consulted by criteria predicates.
    pub defects: Vec<DefectFlag>,
}

impl ArtifactPayload {
    pub fn new(step: StepId, kind: StepKind, iteration: u32, producer: AgentRole) -> Self {
        ArtifactPayload {
            step,
            kind,
            iteration,
            producer,
            fields: BTreeMap::new(),
            table: None,
            defects: Vec::new(),
        }
    }

    pub fn with_field(mut self, name: &str, value: FieldValue) -> Self {
        self.fields.insert(name.to_string(), value);
        self
    }

    pub fn with_table(mut self, meta: TableMeta) -> Self {
        self.table = Some(meta);
        self
    }

    pub fn with_defects(mut self, defects: Vec<DefectFlag>) -> Self {
        self.defects = defects;
        self
    }

    /// True when no ground-truth defect is attached.
    pub fn is_clean(&self) -> bool {
        self.defects.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_renders_two_decimals() {
        let r = FieldValue::Ratio { num: 8, den: 9 };
        assert_eq!(r.percent_2dp().unwrap(), "88.89");
        let half = FieldValue::Ratio { num: 1, den: 2 };
        assert_eq!(half.percent_2dp().unwrap(), "50.00");
        let exact = FieldValue::Ratio { num: 3, den: 4 };
        assert_eq!(exact.percent_2dp().unwrap(), "75.00");
    }

    #[test]
    fn ratio_percent_rounds_half_up() {
        // 1/8 = 12.5% exactly; 0.125 * 100 = 12.50
        let r = FieldValue::Ratio { num: 1, den: 8 };
        assert_eq!(r.percent_2dp().unwrap(), "12.50");
        // 2/3 = 66.666..% -> 66.67
        let r = FieldValue::Ratio { num: 2, den: 3 };
        assert_eq!(r.percent_2dp().unwrap(), "66.67");
    }
}
