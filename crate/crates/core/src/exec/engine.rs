//! Private in-memory tabular engine. Nothing in this file is visible
//! outside [`crate::exec`]: agents never see a row or cell type, only the
//! handles and summaries exported by the parent module.

use crate::artifact::DType;
use chrono::NaiveDate;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// One cell. Money is integer cents end to end; no cell ever holds a
/// floating-point currency amount.
#[derive(Debug, Clone)]
pub(super) enum Value {
    Null,
    Text(String),
    Int(i64),
    Cents(i64),
    Date(NaiveDate),
    Bool(bool),
    Float(f64),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Cents(_) => 3,
            Value::Float(_) => 4,
            Value::Date(_) => 5,
            Value::Text(_) => 6,
        }
    }

    pub(super) fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Render for summaries and reports. Cents render as a decimal with
    /// exactly two places; null renders empty.
    pub(super) fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Text(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::Cents(c) => render_cents(*c),
            Value::Date(d) => d.format("%Y-%m-%d").to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Float(f) => format!("{f}"),
        }
    }
}

pub(super) fn render_cents(c: i64) -> String {
    let sign = if c < 0 { "-" } else { "" };
    let abs = c.unsigned_abs();
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Text(a), Text(b)) => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Cents(a), Cents(b)) => a.cmp(b),
            (Date(a), Date(b)) => a.cmp(b),
            (Bool(a), Bool(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

pub(super) type Row = Vec<Value>;

/// Parse one text field under a declared semantic type. Empty text is null.
pub(super) fn parse_value(text: &str, dtype: DType) -> Result<Value, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Value::Null);
    }
    match dtype {
        DType::Text => Ok(Value::Text(text.to_string())),
        DType::Int => text
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| format!("not an integer: {text:?}")),
        DType::Currency => parse_cents(text).map(Value::Cents),
        DType::Date => NaiveDate::parse_from_str(text, "%Y-%m-%d")
            .map(Value::Date)
            .map_err(|_| format!("not a date (YYYY-MM-DD): {text:?}")),
        DType::Bool => match text {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(format!("not a bool: {text:?}")),
        },
        DType::Float => text
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|_| format!("not a number: {text:?}")),
    }
}

/// Exact decimal-to-cents parse; at most two fraction digits allowed.
pub(super) fn parse_cents(text: &str) -> Result<i64, String> {
    let (sign, body) = match text.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, text),
    };
    let (whole, frac) = match body.split_once('.') {
        Some((w, f)) => (w, f),
        None => (body, ""),
    };
    if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("not a currency amount: {text:?}"));
    }
    if frac.len() > 2 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("currency amounts carry at most 2 decimals: {text:?}"));
    }
    let whole: i64 = whole
        .parse()
        .map_err(|_| format!("currency overflow: {text:?}"))?;
    let frac_cents: i64 = match frac.len() {
        0 => 0,
        1 => frac.parse::<i64>().unwrap() * 10,
        _ => frac.parse::<i64>().unwrap(),
    };
    Ok(sign * (whole * 100 + frac_cents))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) struct ColumnDef {
    pub(super) name: String,
    pub(super) dtype: DType,
}

/// An immutable table: ordered typed columns plus rows.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct Table {
    pub(super) columns: Vec<ColumnDef>,
    pub(super) rows: Vec<Row>,
}

/// Comparison operator for filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    IsNull,
    NotNull,
}

/// Column aggregate for `aggregate` / `group_by` / `pivot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunc {
    Sum,
    Count,
    Min,
    Max,
}

impl Table {
    pub(super) fn new(columns: Vec<ColumnDef>) -> Self {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub(super) fn column_index(&self, name: &str) -> Result<usize, String> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| format!("unknown column {name:?}"))
    }

    /// Load from delimited text: first line is the header, fields split on
    /// the given delimiter, types taken from the sidecar-declared schema.
    pub(super) fn from_delimited(
        text: &str,
        delimiter: char,
        schema: &[(String, DType)],
    ) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty input: missing header row")?;
        let names: Vec<&str> = header.split(delimiter).map(str::trim).collect();
        let mut columns = Vec::with_capacity(names.len());
        for name in &names {
            let dtype = schema
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| format!("column {name:?} missing from schema declaration"))?;
            columns.push(ColumnDef {
                name: name.to_string(),
                dtype,
            });
        }
        let mut rows = Vec::new();
        for (line_no, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(delimiter).collect();
            if fields.len() != columns.len() {
                return Err(format!(
                    "row {}: {} fields, expected {}",
                    line_no + 2,
                    fields.len(),
                    columns.len()
                ));
            }
            let mut row = Vec::with_capacity(fields.len());
            for (field, col) in fields.iter().zip(&columns) {
                row.push(
                    parse_value(field, col.dtype)
                        .map_err(|e| format!("row {} column {:?}: {e}", line_no + 2, col.name))?,
                );
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub(super) fn filter(&self, column: &str, cmp: Cmp, literal: &Value) -> Result<Table, String> {
        let idx = self.column_index(column)?;
        let rows = self
            .rows
            .iter()
            .filter(|row| {
                let cell = &row[idx];
                match cmp {
                    Cmp::IsNull => cell.is_null(),
                    Cmp::NotNull => !cell.is_null(),
                    _ if cell.is_null() => false,
                    Cmp::Eq => cell == literal,
                    Cmp::Ne => cell != literal,
                    Cmp::Lt => cell < literal,
                    Cmp::Le => cell <= literal,
                    Cmp::Gt => cell > literal,
                    Cmp::Ge => cell >= literal,
                }
            })
            .cloned()
            .collect();
        Ok(Table {
            columns: self.columns.clone(),
            rows,
        })
    }

    pub(super) fn select(&self, names: &[String]) -> Result<Table, String> {
        let indices: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_, _>>()?;
        Ok(Table {
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|row| indices.iter().map(|&i| row[i].clone()).collect())
                .collect(),
        })
    }

    /// Rename-and-reorder projection; each output is a source column or a
    /// typed constant.
    pub(super) fn project(
        &self,
        outputs: &[(String, ProjectSource)],
    ) -> Result<Table, String> {
        let mut columns = Vec::with_capacity(outputs.len());
        let mut plan: Vec<ProjectPlan> = Vec::with_capacity(outputs.len());
        for (name, source) in outputs {
            match source {
                ProjectSource::Column(src) => {
                    let idx = self.column_index(src)?;
                    columns.push(ColumnDef {
                        name: name.clone(),
                        dtype: self.columns[idx].dtype,
                    });
                    plan.push(ProjectPlan::Copy(idx));
                }
                ProjectSource::ConstText(s) => {
                    columns.push(ColumnDef {
                        name: name.clone(),
                        dtype: DType::Text,
                    });
                    plan.push(ProjectPlan::Const(Value::Text(s.clone())));
                }
                ProjectSource::ConstInt(i) => {
                    columns.push(ColumnDef {
                        name: name.clone(),
                        dtype: DType::Int,
                    });
                    plan.push(ProjectPlan::Const(Value::Int(*i)));
                }
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                plan.iter()
                    .map(|p| match p {
                        ProjectPlan::Copy(i) => row[*i].clone(),
                        ProjectPlan::Const(v) => v.clone(),
                    })
                    .collect()
            })
            .collect();
        Ok(Table { columns, rows })
    }

    /// Inner equi-join. Right-side columns keep their names unless they
    /// collide with a left name, in which case they get a `right_` prefix.
    pub(super) fn join(&self, right: &Table, left_key: &str, right_key: &str) -> Result<Table, String> {
        let li = self.column_index(left_key)?;
        let ri = right.column_index(right_key)?;
        let mut columns = self.columns.clone();
        for col in &right.columns {
            let name = if self.columns.iter().any(|c| c.name == col.name) {
                format!("right_{}", col.name)
            } else {
                col.name.clone()
            };
            columns.push(ColumnDef {
                name,
                dtype: col.dtype,
            });
        }
        let mut index: BTreeMap<&Value, Vec<&Row>> = BTreeMap::new();
        for row in &right.rows {
            if !row[ri].is_null() {
                index.entry(&row[ri]).or_default().push(row);
            }
        }
        let mut rows = Vec::new();
        for lrow in &self.rows {
            if let Some(matches) = index.get(&lrow[li]) {
                for rrow in matches {
                    let mut out = lrow.clone();
                    out.extend(rrow.iter().cloned());
                    rows.push(out);
                }
            }
        }
        Ok(Table { columns, rows })
    }

    fn apply_agg(
        &self,
        rows: &[&Row],
        func: AggFunc,
        column: &str,
    ) -> Result<(Value, DType), String> {
        let idx = self.column_index(column)?;
        let dtype = self.columns[idx].dtype;
        let cells: Vec<&Value> = rows.iter().map(|r| &r[idx]).filter(|v| !v.is_null()).collect();
        let out = match func {
            AggFunc::Count => (Value::Int(cells.len() as i64), DType::Int),
            AggFunc::Min => (
                cells.iter().min().map(|v| (*v).clone()).unwrap_or(Value::Null),
                dtype,
            ),
            AggFunc::Max => (
                cells.iter().max().map(|v| (*v).clone()).unwrap_or(Value::Null),
                dtype,
            ),
            AggFunc::Sum => {
                let mut int_sum: i64 = 0;
                let mut float_sum: f64 = 0.0;
                let mut is_float = false;
                for cell in &cells {
                    match cell {
                        Value::Int(i) | Value::Cents(i) => int_sum += i,
                        Value::Float(f) => {
                            is_float = true;
                            float_sum += f;
                        }
                        other => {
                            return Err(format!("sum over non-numeric cell {other:?} in {column:?}"))
                        }
                    }
                }
                if is_float {
                    (Value::Float(float_sum + int_sum as f64), DType::Float)
                } else if dtype == DType::Currency {
                    (Value::Cents(int_sum), DType::Currency)
                } else {
                    (Value::Int(int_sum), DType::Int)
                }
            }
        };
        Ok(out)
    }

    /// Whole-table aggregation into a single row.
    pub(super) fn aggregate(&self, aggs: &[(String, AggFunc, String)]) -> Result<Table, String> {
        let refs: Vec<&Row> = self.rows.iter().collect();
        let mut columns = Vec::new();
        let mut row = Vec::new();
        for (out, func, col) in aggs {
            let (value, dtype) = self.apply_agg(&refs, *func, col)?;
            columns.push(ColumnDef {
                name: out.clone(),
                dtype,
            });
            row.push(value);
        }
        Ok(Table {
            columns,
            rows: vec![row],
        })
    }

    /// Group on key columns, one output row per distinct key, keys sorted.
    pub(super) fn group_by(
        &self,
        keys: &[String],
        aggs: &[(String, AggFunc, String)],
    ) -> Result<Table, String> {
        let key_idx: Vec<usize> = keys
            .iter()
            .map(|k| self.column_index(k))
            .collect::<Result<_, _>>()?;
        let mut groups: BTreeMap<Vec<Value>, Vec<&Row>> = BTreeMap::new();
        for row in &self.rows {
            let key: Vec<Value> = key_idx.iter().map(|&i| row[i].clone()).collect();
            groups.entry(key).or_default().push(row);
        }
        let mut columns: Vec<ColumnDef> =
            key_idx.iter().map(|&i| self.columns[i].clone()).collect();
        let mut first = true;
        let mut rows = Vec::with_capacity(groups.len());
        for (key, members) in &groups {
            let mut row = key.clone();
            for (out, func, col) in aggs {
                let (value, dtype) = self.apply_agg(members, *func, col)?;
                if first {
                    columns.push(ColumnDef {
                        name: out.clone(),
                        dtype,
                    });
                }
                row.push(value);
            }
            first = false;
            rows.push(row);
        }
        if rows.is_empty() {
            for (out, func, col) in aggs {
                let idx = self.column_index(col)?;
                let dtype = match func {
                    AggFunc::Count => DType::Int,
                    _ => self.columns[idx].dtype,
                };
                columns.push(ColumnDef {
                    name: out.clone(),
                    dtype,
                });
            }
        }
        Ok(Table { columns, rows })
    }

    /// Spread `column_col`'s distinct values into columns, cells aggregated
    /// from `value_col`, one row per distinct `index_col` value.
    pub(super) fn pivot(
        &self,
        index_col: &str,
        column_col: &str,
        value_col: &str,
        func: AggFunc,
    ) -> Result<Table, String> {
        let ii = self.column_index(index_col)?;
        let ci = self.column_index(column_col)?;
        self.column_index(value_col)?;
        let mut categories: BTreeSet<Value> = BTreeSet::new();
        let mut indices: BTreeSet<Value> = BTreeSet::new();
        for row in &self.rows {
            categories.insert(row[ci].clone());
            indices.insert(row[ii].clone());
        }
        let mut columns = vec![self.columns[ii].clone()];
        let value_dtype = {
            let vi = self.column_index(value_col)?;
            match func {
                AggFunc::Count => DType::Int,
                _ => self.columns[vi].dtype,
            }
        };
        for cat in &categories {
            columns.push(ColumnDef {
                name: cat.render(),
                dtype: value_dtype,
            });
        }
        let mut rows = Vec::new();
        for index_value in &indices {
            let mut row = vec![index_value.clone()];
            for cat in &categories {
                let members: Vec<&Row> = self
                    .rows
                    .iter()
                    .filter(|r| &r[ii] == index_value && &r[ci] == cat)
                    .collect();
                if members.is_empty() {
                    row.push(Value::Null);
                } else {
                    let (value, _) = self.apply_agg(&members, func, value_col)?;
                    row.push(value);
                }
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    /// Melt the listed columns into (name, value) pairs; all other columns
    /// repeat as identifiers. The listed columns must share one type.
    pub(super) fn unpivot(
        &self,
        melt: &[String],
        name_col: &str,
        value_col: &str,
    ) -> Result<Table, String> {
        let melt_idx: Vec<usize> = melt
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<_, _>>()?;
        let dtype = match melt_idx.as_slice() {
            [] => return Err("unpivot needs at least one column".to_string()),
            [first, rest @ ..] => {
                let d = self.columns[*first].dtype;
                if rest.iter().any(|&i| self.columns[i].dtype != d) {
                    return Err("unpivot columns must share one type".to_string());
                }
                d
            }
        };
        let id_idx: Vec<usize> = (0..self.columns.len())
            .filter(|i| !melt_idx.contains(i))
            .collect();
        let mut columns: Vec<ColumnDef> =
            id_idx.iter().map(|&i| self.columns[i].clone()).collect();
        columns.push(ColumnDef {
            name: name_col.to_string(),
            dtype: DType::Text,
        });
        columns.push(ColumnDef {
            name: value_col.to_string(),
            dtype,
        });
        let mut rows = Vec::new();
        for row in &self.rows {
            for &mi in &melt_idx {
                let mut out: Row = id_idx.iter().map(|&i| row[i].clone()).collect();
                out.push(Value::Text(self.columns[mi].name.clone()));
                out.push(row[mi].clone());
                rows.push(out);
            }
        }
        Ok(Table { columns, rows })
    }

    /// Append the other table's rows; schemas must agree exactly.
    pub(super) fn union(&self, other: &Table) -> Result<Table, String> {
        if self.columns != other.columns {
            return Err("union requires identical schemas".to_string());
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Table {
            columns: self.columns.clone(),
            rows,
        })
    }

    /// Rows of self not present in other (set semantics on whole rows).
    pub(super) fn difference(&self, other: &Table) -> Result<Table, String> {
        if self.columns != other.columns {
            return Err("difference requires identical schemas".to_string());
        }
        let exclude: BTreeSet<&Row> = other.rows.iter().collect();
        Ok(Table {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| !exclude.contains(r))
                .cloned()
                .collect(),
        })
    }

    pub(super) fn distinct(&self) -> Table {
        let mut seen: BTreeSet<Row> = BTreeSet::new();
        let mut rows = Vec::new();
        for row in &self.rows {
            if seen.insert(row.clone()) {
                rows.push(row.clone());
            }
        }
        Table {
            columns: self.columns.clone(),
            rows,
        }
    }

    /// Stable multi-key sort; `descending` per key.
    pub(super) fn sort(&self, by: &[(String, bool)]) -> Result<Table, String> {
        let keys: Vec<(usize, bool)> = by
            .iter()
            .map(|(c, desc)| self.column_index(c).map(|i| (i, *desc)))
            .collect::<Result<_, _>>()?;
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            for &(i, desc) in &keys {
                let ord = a[i].cmp(&b[i]);
                let ord = if desc { ord.reverse() } else { ord };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        });
        Ok(Table {
            columns: self.columns.clone(),
            rows,
        })
    }

    pub(super) fn limit(&self, n: usize) -> Table {
        Table {
            columns: self.columns.clone(),
            rows: self.rows.iter().take(n).cloned().collect(),
        }
    }

    /// Ordered window computation appended as a new column.
    pub(super) fn window(
        &self,
        order_by: &[(String, bool)],
        func: WindowFunc,
        value_col: &str,
        output: &str,
    ) -> Result<Table, String> {
        let sorted = self.sort(order_by)?;
        let out_dtype = match func {
            WindowFunc::RowNumber => DType::Int,
            WindowFunc::CumSum => {
                let vi = sorted.column_index(value_col)?;
                sorted.columns[vi].dtype
            }
        };
        let mut columns = sorted.columns.clone();
        columns.push(ColumnDef {
            name: output.to_string(),
            dtype: out_dtype,
        });
        let mut rows = Vec::with_capacity(sorted.rows.len());
        let mut running: i64 = 0;
        for (n, row) in sorted.rows.iter().enumerate() {
            let mut out = row.clone();
            match func {
                WindowFunc::RowNumber => out.push(Value::Int(n as i64 + 1)),
                WindowFunc::CumSum => {
                    let vi = sorted.column_index(value_col)?;
                    match &row[vi] {
                        Value::Int(i) => {
                            running += i;
                            out.push(Value::Int(running));
                        }
                        Value::Cents(c) => {
                            running += c;
                            out.push(Value::Cents(running));
                        }
                        Value::Null => out.push(Value::Null),
                        other => {
                            return Err(format!(
                                "running sum over non-integer cell {other:?}"
                            ))
                        }
                    }
                }
            }
            rows.push(out);
        }
        Ok(Table { columns, rows })
    }

    /// Convert one column to a different semantic type, in place by name.
    pub(super) fn type_convert(&self, column: &str, target: DType) -> Result<Table, String> {
        let idx = self.column_index(column)?;
        let mut columns = self.columns.clone();
        columns[idx].dtype = target;
        let mut rows = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let mut out = row.clone();
            out[idx] = convert_value(&row[idx], target)?;
            rows.push(out);
        }
        Ok(Table { columns, rows })
    }
}

fn convert_value(value: &Value, target: DType) -> Result<Value, String> {
    if value.is_null() {
        return Ok(Value::Null);
    }
    match (value, target) {
        (Value::Text(s), t) => parse_value(s, t),
        (Value::Int(i), DType::Int) => Ok(Value::Int(*i)),
        (Value::Int(i), DType::Float) => Ok(Value::Float(*i as f64)),
        (Value::Int(i), DType::Currency) => i
            .checked_mul(100)
            .map(Value::Cents)
            .ok_or_else(|| "currency overflow".to_string()),
        (Value::Cents(c), DType::Currency) => Ok(Value::Cents(*c)),
        (v, DType::Text) => Ok(Value::Text(v.render())),
        (v, t) => Err(format!("cannot convert {v:?} to {t:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectSource {
    Column(String),
    ConstText(String),
    ConstInt(i64),
}

enum ProjectPlan {
    Copy(usize),
    Const(Value),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFunc {
    CumSum,
    RowNumber,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Table {
        let schema = [
            ("vendor".to_string(), DType::Text),
            ("amount".to_string(), DType::Currency),
            ("n".to_string(), DType::Int),
        ];
        Table::from_delimited(
            "vendor|amount|n\nacme|10.00|1\nacme|2.50|2\nbolt|0.05|3\n",
            '|',
            &schema,
        )
        .unwrap()
    }

    #[test]
    fn cents_parse_exactly() {
        assert_eq!(parse_cents("1250.00").unwrap(), 125_000);
        assert_eq!(parse_cents("962.25").unwrap(), 96_225);
        assert_eq!(parse_cents("0.05").unwrap(), 5);
        assert_eq!(parse_cents("7.5").unwrap(), 750);
        assert_eq!(parse_cents("-3.21").unwrap(), -321);
        assert_eq!(parse_cents("425").unwrap(), 42_500);
        assert!(parse_cents("1.234").is_err());
        assert!(parse_cents("12,50").is_err());
        assert_eq!(render_cents(96_225), "962.25");
        assert_eq!(render_cents(-5), "-0.05");
    }

    #[test]
    fn delimited_load_types_and_counts() {
        let t = toy();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.columns[1].dtype, DType::Currency);
        assert_eq!(t.rows[0][1], Value::Cents(1000));
    }

    #[test]
    fn filter_compares_typed_values() {
        let t = toy();
        let kept = t.filter("amount", Cmp::Ge, &Value::Cents(250)).unwrap();
        assert_eq!(kept.rows.len(), 2);
        let nulls = t.filter("vendor", Cmp::IsNull, &Value::Null).unwrap();
        assert_eq!(nulls.rows.len(), 0);
    }

    #[test]
    fn group_by_sums_cents_exactly() {
        let t = toy();
        let g = t
            .group_by(
                &["vendor".to_string()],
                &[("total".to_string(), AggFunc::Sum, "amount".to_string())],
            )
            .unwrap();
        assert_eq!(g.rows.len(), 2);
        assert_eq!(g.rows[0][1], Value::Cents(1250));
        assert_eq!(g.rows[1][1], Value::Cents(5));
    }

    #[test]
    fn join_prefixes_colliding_right_columns() {
        let t = toy();
        let j = t.join(&t, "vendor", "vendor").unwrap();
        assert_eq!(j.columns.len(), 6);
        assert!(j.columns.iter().any(|c| c.name == "right_amount"));
        // acme 2x2 + bolt 1x1
        assert_eq!(j.rows.len(), 5);
    }

    #[test]
    fn union_distinct_matches_set_semantics() {
        let t = toy();
        let doubled = t.union(&t).unwrap();
        assert_eq!(doubled.rows.len(), 6);
        let distinct = doubled.distinct();
        let expected: BTreeSet<&Row> = t.rows.iter().collect();
        assert_eq!(distinct.rows.len(), expected.len());
    }

    #[test]
    fn difference_removes_matching_rows() {
        let t = toy();
        let gone = t.difference(&t).unwrap();
        assert_eq!(gone.rows.len(), 0);
        let empty = Table::new(t.columns.clone());
        assert_eq!(t.difference(&empty).unwrap().rows.len(), 3);
    }

    #[test]
    fn sort_is_stable_and_typed() {
        let t = toy();
        let s = t.sort(&[("amount".to_string(), true)]).unwrap();
        assert_eq!(s.rows[0][1], Value::Cents(1000));
        assert_eq!(s.rows[2][1], Value::Cents(5));
    }

    #[test]
    fn pivot_spreads_categories() {
        let t = toy();
        let p = t.pivot("n", "vendor", "amount", AggFunc::Sum).unwrap();
        assert_eq!(p.columns.len(), 3); // n, acme, bolt
        assert_eq!(p.rows.len(), 3);
        assert_eq!(p.rows[0][1], Value::Cents(1000));
        assert_eq!(p.rows[0][2], Value::Null);
    }

    #[test]
    fn unpivot_melts_columns() {
        let t = toy();
        let u = t
            .unpivot(&["n".to_string()], "metric", "value")
            .unwrap();
        assert_eq!(u.rows.len(), 3);
        assert_eq!(u.columns.last().unwrap().dtype, DType::Int);
        assert_eq!(u.rows[0].last().unwrap(), &Value::Int(1));
    }

    #[test]
    fn window_running_sum_in_order() {
        let t = toy();
        let w = t
            .window(
                &[("n".to_string(), false)],
                WindowFunc::CumSum,
                "amount",
                "running",
            )
            .unwrap();
        assert_eq!(w.rows[2].last().unwrap(), &Value::Cents(1255));
    }

    #[test]
    fn type_convert_text_to_currency() {
        let schema = [("raw".to_string(), DType::Text)];
        let t = Table::from_delimited("raw\n12.50\n", '|', &schema).unwrap();
        let c = t.type_convert("raw", DType::Currency).unwrap();
        assert_eq!(c.rows[0][0], Value::Cents(1250));
        assert!(t.type_convert("raw", DType::Bool).is_err());
    }

    #[test]
    fn aggregate_handles_empty_tables() {
        let t = Table::new(vec![ColumnDef {
            name: "amount".to_string(),
            dtype: DType::Currency,
        }]);
        let a = t
            .aggregate(&[
                ("count".to_string(), AggFunc::Count, "amount".to_string()),
                ("lo".to_string(), AggFunc::Min, "amount".to_string()),
            ])
            .unwrap();
        assert_eq!(a.rows[0][0], Value::Int(0));
        assert_eq!(a.rows[0][1], Value::Null);
    }
}
