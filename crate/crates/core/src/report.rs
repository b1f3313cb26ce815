//! Report rendering: every run result as an aligned text table and, via
//! the same serializable structures, a machine-readable JSON document.
//!
//! Rendering is pure — the same inputs always produce the same bytes — so
//! report files are safe to diff across runs and to pin in tests. Money
//! and hour columns print in tenths with thousands separators, matching
//! how the ledgers account internally (integer milli-units, rounded
//! half-up only at the display boundary).

use serde::Serialize;

use crate::artifact::FieldValue;
use crate::harness::{
    format_tenths, milli_to_tenths, share_pct_tenths, Comparison, FunnelAverages, FunnelStats,
    RecoveryLedger, RecoveryLevel,
};
use crate::scenario::{step_label, ScenarioReport};

/// An integer with thousands separators.
pub fn group_digits(v: i64) -> String {
    let negative = v < 0;
    let digits = v.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        let remaining = digits.len() - i;
        out.push(c);
        if remaining > 1 && (remaining - 1) % 3 == 0 {
            out.push(',');
        }
    }
    if negative {
        format!("-{out}")
    } else {
        out
    }
}

/// Integer cents as a two-decimal amount with thousands separators.
pub fn format_cents(cents: i64) -> String {
    let sign = if cents < 0 { "-" } else { "" };
    let magnitude = cents.unsigned_abs();
    format!(
        "{sign}{}.{:02}",
        group_digits((magnitude / 100) as i64),
        magnitude % 100
    )
}

/// Percentage with one decimal, e.g. `24.9%`.
fn pct_1dp(p: f64) -> String {
    format!("{p:.1}%")
}

/// Lay out rows as a left-aligned label column followed by right-aligned
/// value columns, two spaces between columns.
fn aligned(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            let pad = widths[i].saturating_sub(cell.chars().count());
            if i == 0 {
                line.push_str(cell);
                if row.len() > 1 {
                    line.push_str(&" ".repeat(pad));
                }
            } else {
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn cells(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// One cohort's funnel as a table: each stage with its count, its rate,
/// and the denominator the rate is taken over.
pub fn funnel_table(stats: &FunnelStats) -> String {
    let mut rows = vec![
        cells(&["session funnel"]),
        cells(&["stage", "sessions", "rate", "basis"]),
    ];
    rows.push(vec![
        "cohort".to_string(),
        group_digits(stats.sessions as i64),
        String::new(),
        String::new(),
    ]);
    rows.push(vec![
        "replan requests".to_string(),
        group_digits(stats.replan_requests as i64),
        String::new(),
        String::new(),
    ]);
    rows.push(vec![
        "evaluated".to_string(),
        group_digits(stats.funnel_sessions as i64),
        String::new(),
        String::new(),
    ]);
    rows.push(vec![
        "first pass".to_string(),
        group_digits(stats.first_pass as i64),
        pct_1dp(stats.first_pass_pct()),
        format!("of {} evaluated", group_digits(stats.funnel_sessions as i64)),
    ]);
    rows.push(vec![
        "caught by inner review".to_string(),
        group_digits(stats.inner_caught as i64),
        pct_1dp(stats.inner_catch_pct()),
        format!("of {} recovering", group_digits(stats.needed_recovery() as i64)),
    ]);
    rows.push(vec![
        "caught at outer gate".to_string(),
        group_digits(stats.outer_caught as i64),
        pct_1dp(stats.outer_catch_pct()),
        format!(
            "of {} inner escapes",
            group_digits((stats.outer_caught + stats.user_rejected) as i64)
        ),
    ]);
    rows.push(vec![
        "rejected by user".to_string(),
        group_digits(stats.user_rejected as i64),
        pct_1dp(stats.residual_pct()),
        format!("of {} evaluated", group_digits(stats.funnel_sessions as i64)),
    ]);
    aligned(&rows)
}

/// The seed-averaged funnel as a table of mean rates.
pub fn funnel_averages_table(avg: &FunnelAverages) -> String {
    let rows = vec![
        vec![format!(
            "averaged session funnel ({} replicates x {} sessions)",
            avg.replicates, avg.sessions_per_replicate
        )],
        cells(&["stage", "mean rate"]),
        vec!["first pass".to_string(), pct_1dp(avg.mean_first_pass_pct)],
        vec![
            "caught by inner review".to_string(),
            pct_1dp(avg.mean_inner_catch_pct),
        ],
        vec![
            "caught at outer gate".to_string(),
            pct_1dp(avg.mean_outer_catch_pct),
        ],
        vec![
            "rejected by user".to_string(),
            pct_1dp(avg.mean_residual_pct),
        ],
    ];
    aligned(&rows)
}

/// A recovery ledger as a table: one row per depth level, a totals row,
/// and the recovery share of each row's total spend.
pub fn ledger_table(ledger: &RecoveryLedger) -> String {
    let mut rows = vec![
        vec![format!("recovery spend by depth ({})", ledger.unit.as_str())],
        cells(&["level", "sessions", "total", "recovery", "share"]),
    ];
    for level in RecoveryLevel::ALL {
        if let Some(row) = ledger.row(level) {
            rows.push(vec![
                level.label().to_string(),
                group_digits(row.sessions as i64),
                format_tenths(milli_to_tenths(row.total_milli)),
                format_tenths(milli_to_tenths(row.recovery_milli)),
                format!(
                    "{}%",
                    format_tenths(share_pct_tenths(row.recovery_milli, row.total_milli))
                ),
            ]);
        }
    }
    let totals = ledger.totals();
    rows.push(vec![
        "all levels".to_string(),
        group_digits(totals.sessions as i64),
        format_tenths(milli_to_tenths(totals.total_milli)),
        format_tenths(milli_to_tenths(totals.recovery_milli)),
        format!(
            "{}%",
            format_tenths(share_pct_tenths(totals.recovery_milli, totals.total_milli))
        ),
    ]);
    aligned(&rows)
}

/// The architecture comparison as a table: accuracy and mean latency per
/// execution architecture.
pub fn comparison_table(cmp: &Comparison) -> String {
    let mut rows = vec![
        vec![format!(
            "architecture comparison (ground-truth gap {})",
            format_cents(cmp.ground_truth_cents)
        )],
        cells(&["architecture", "trials", "correct", "accuracy", "mean latency"]),
    ];
    for row in &cmp.rows {
        rows.push(vec![
            row.mode.label().to_string(),
            group_digits(row.trials as i64),
            group_digits(row.correct as i64),
            pct_1dp(row.accuracy_pct()),
            format!("{} ms", group_digits(row.mean_latency_ms as i64)),
        ]);
    }
    aligned(&rows)
}

/// The quarterly-close walkthrough as a table: per-step critique
/// iterations, then the headline close figures.
pub fn scenario_table(report: &ScenarioReport) -> String {
    let mut rows = vec![
        cells(&["quarterly close walkthrough"]),
        cells(&["step", "iterations"]),
    ];
    for (step, iterations) in &report.step_iterations {
        rows.push(vec![
            format!("{} {}", step.0, step_label(step.0)),
            iterations.to_string(),
        ]);
    }
    rows.push(vec![
        "total critique iterations".to_string(),
        report.total_iterations.to_string(),
    ]);
    let mut figures = vec![cells(&["figure", "value"])];
    if let FieldValue::Ratio { num, den } = &report.match_rate {
        figures.push(vec![
            "invoices matched".to_string(),
            format!("{num} of {den}"),
        ]);
    }
    figures.push(vec![
        "match rate".to_string(),
        report
            .match_rate_pct()
            .map(|p| format!("{p}%"))
            .unwrap_or_else(|| "n/a".to_string()),
    ]);
    figures.push(vec![
        "matched total".to_string(),
        format_cents(report.matched_total_cents),
    ]);
    figures.push(vec![
        "payment pending total".to_string(),
        format_cents(report.payment_pending_total_cents),
    ]);
    figures.push(vec![
        "payment pending items".to_string(),
        report.payment_pending_count.to_string(),
    ]);
    figures.push(vec![
        "unmatched".to_string(),
        report.unmatched_count.to_string(),
    ]);
    figures.push(vec![
        "verdict".to_string(),
        format!("{:?}", report.verdict).to_lowercase(),
    ]);
    format!("{}\n\n{}", aligned(&rows).trim_end(), aligned(&figures))
}

/// The JSON mirror of any report structure, pretty-printed with a
/// trailing newline.
pub fn json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("report structures serialize");
    out.push('\n');
    out
}
