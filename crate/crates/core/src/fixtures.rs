//! Bundled reference datasets.
//!
//! The quarterly-close pipeline ingests three vendor invoice feeds and a
//! bank expense feed; all four ship here as pipe-delimited text with their
//! column types declared in sidecar schema files, so loading a table is a
//! pure function of the bundle. The module also carries the published
//! per-level recovery cost table the ledger tests ingest, and derives the
//! ground-truth discrepancy for the architecture comparison by running the
//! data engine over a deliberately perturbed copy of the expense feed.

use crate::artifact::DType;
use crate::exec::{
    AggFunc, ExecutorStore, Primitive, ScalarStat, SummaryContent, SummaryRequest,
};
use crate::harness::{ComparativeTask, LedgerRow, RecoveryLevel};

/// Field separator used by every bundled table and sidecar.
pub const FIXTURE_DELIMITER: char = '|';

pub const INVOICES_HEALTHCARE: &str = include_str!("../fixtures/invoices_healthcare.psv");
pub const INVOICES_TELECOM: &str = include_str!("../fixtures/invoices_telecom.psv");
pub const INVOICES_CLOUD: &str = include_str!("../fixtures/invoices_cloud.psv");
pub const EXPENSES: &str = include_str!("../fixtures/expenses.psv");
pub const EXPENSES_COMPARATIVE: &str = include_str!("../fixtures/expenses_comparative.psv");
const INVOICES_SCHEMA: &str = include_str!("../fixtures/invoices.schema");
const EXPENSES_SCHEMA: &str = include_str!("../fixtures/expenses.schema");
const RECOVERY_LEVELS: &str = include_str!("../fixtures/recovery_levels.psv");

/// Logical input names, as task queries and stored load operations cite
/// them.
pub const INPUT_INVOICES_HEALTHCARE: &str = "invoices_healthcare";
pub const INPUT_INVOICES_TELECOM: &str = "invoices_telecom";
pub const INPUT_INVOICES_CLOUD: &str = "invoices_cloud";
pub const INPUT_EXPENSES: &str = "expenses";
pub const INPUT_EXPENSES_COMPARATIVE: &str = "expenses_comparative";

/// Every logical input name in the bundle.
pub const INPUT_NAMES: [&str; 5] = [
    INPUT_INVOICES_HEALTHCARE,
    INPUT_INVOICES_TELECOM,
    INPUT_INVOICES_CLOUD,
    INPUT_EXPENSES,
    INPUT_EXPENSES_COMPARATIVE,
];

/// Marker splitting a degraded input name into its base name and the
/// column whose cells are blanked: `expenses#null:amount_in_usd` is the
/// expense feed with every amount missing.
pub const NULL_VARIANT_MARKER: &str = "#null:";

/// The raw text for a logical input name, base names only.
pub fn source_text(name: &str) -> Option<&'static str> {
    match name {
        INPUT_INVOICES_HEALTHCARE => Some(INVOICES_HEALTHCARE),
        INPUT_INVOICES_TELECOM => Some(INVOICES_TELECOM),
        INPUT_INVOICES_CLOUD => Some(INVOICES_CLOUD),
        INPUT_EXPENSES => Some(EXPENSES),
        INPUT_EXPENSES_COMPARATIVE => Some(EXPENSES_COMPARATIVE),
        _ => None,
    }
}

/// Resolve a logical input name to its text, including degraded variants.
/// Variant texts are derived, not stored, so a restored manifest replays
/// against byte-identical inputs.
pub fn resolve_input(name: &str) -> Option<String> {
    match name.split_once(NULL_VARIANT_MARKER) {
        Some((base, column)) => Some(null_column_variant(source_text(base)?, column)),
        None => Some(source_text(name)?.to_string()),
    }
}

/// The declared schema for a logical input name; variants share their
/// base input's sidecar.
pub fn schema_for(name: &str) -> Option<Vec<(String, DType)>> {
    let base = match name.split_once(NULL_VARIANT_MARKER) {
        Some((base, _)) => base,
        None => name,
    };
    match base {
        INPUT_INVOICES_HEALTHCARE | INPUT_INVOICES_TELECOM | INPUT_INVOICES_CLOUD => {
            Some(parse_schema(INVOICES_SCHEMA))
        }
        INPUT_EXPENSES | INPUT_EXPENSES_COMPARATIVE => Some(parse_schema(EXPENSES_SCHEMA)),
        _ => None,
    }
}

/// Blank every cell of one column, keeping the header and field counts
/// intact; the loader parses the empty cells as nulls.
fn null_column_variant(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let names: Vec<&str> = header.split(FIXTURE_DELIMITER).map(str::trim).collect();
    let target = names.iter().position(|n| *n == column);
    let mut out = String::with_capacity(text.len());
    out.push_str(header);
    out.push('\n');
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(FIXTURE_DELIMITER).collect();
        let row: Vec<&str> = fields
            .iter()
            .enumerate()
            .map(|(i, f)| if Some(i) == target { "" } else { *f })
            .collect();
        out.push_str(&row.join(&FIXTURE_DELIMITER.to_string()));
        out.push('\n');
    }
    out
}

fn parse_schema(text: &str) -> Vec<(String, DType)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (name, dtype) = line
                .split_once(FIXTURE_DELIMITER)
                .expect("schema sidecar lines are name|type");
            (name.trim().to_string(), parse_dtype(dtype.trim()))
        })
        .collect()
}

fn parse_dtype(s: &str) -> DType {
    match s {
        "text" => DType::Text,
        "int" => DType::Int,
        "currency" => DType::Currency,
        "date" => DType::Date,
        "bool" => DType::Bool,
        "float" => DType::Float,
        other => panic!("schema sidecar names unknown type {other:?}"),
    }
}

/// The published per-level recovery cost table, in milli-units: credits
/// rows first, then hours rows, each ordered Level 1 to Level 3.
pub fn recovery_rows() -> (Vec<LedgerRow>, Vec<LedgerRow>) {
    let mut credits = Vec::new();
    let mut hours = Vec::new();
    for line in RECOVERY_LEVELS.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(FIXTURE_DELIMITER).collect();
        assert_eq!(fields.len(), 5, "recovery table rows have five fields");
        let level = match fields[1] {
            "1" => RecoveryLevel::Level1,
            "2" => RecoveryLevel::Level2,
            "3" => RecoveryLevel::Level3,
            other => panic!("recovery table names unknown level {other:?}"),
        };
        let row = LedgerRow {
            level,
            sessions: fields[2].parse().expect("session count"),
            total_milli: fields[3].parse().expect("total"),
            recovery_milli: fields[4].parse().expect("recovery share"),
        };
        match fields[0] {
            "credits" => credits.push(row),
            "hours" => hours.push(row),
            other => panic!("recovery table names unknown unit {other:?}"),
        }
    }
    (credits, hours)
}

/// Derive the architecture-comparison task from the bundle: the ground
/// truth is the engine-aggregated gap between the clean expense feed and
/// its perturbed copy.
pub fn comparative_task(seed: u64) -> ComparativeTask {
    let mut store = ExecutorStore::new(seed);
    let schema = schema_for(INPUT_EXPENSES).expect("expense schema");
    let mut total = |name: &str| -> i64 {
        let loaded = store
            .load_input(name, source_text(name).expect("bundled input"), FIXTURE_DELIMITER, &schema)
            .expect("bundled input loads");
        let agg = store
            .submit(
                &[Primitive::Aggregate {
                    aggs: vec![("total".to_string(), AggFunc::Sum, "amount_in_usd".to_string())],
                }],
                &[loaded.id],
            )
            .expect("aggregate over bundled input");
        let summary = store
            .summarize(
                agg.id,
                &SummaryRequest::Stats {
                    column: "total".to_string(),
                },
            )
            .expect("stats over the aggregate");
        match summary.content {
            SummaryContent::Stats {
                min: Some(ScalarStat::Cents(c)),
                ..
            } => c,
            other => panic!("sum column summarized as {other:?}"),
        }
    };
    let clean = total(INPUT_EXPENSES);
    let perturbed = total(INPUT_EXPENSES_COMPARATIVE);
    ComparativeTask {
        ground_truth_cents: (clean - perturbed).abs(),
    }
}
