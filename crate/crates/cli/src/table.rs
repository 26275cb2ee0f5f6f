//! Column-oriented result tables with a provenance metadata block.
//!
//! Tables are persisted as CSV with a `#`-prefixed header block (one
//! `key=value` line each) followed by an ordinary header row. Floats are
//! written with 17 significant digits so a save/load round trip reproduces
//! every value bitwise.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int(v) => v.len(),
            ColumnData::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at `row` coerced to f64 (exact for every i64 this crate emits).
    pub fn as_f64(&self, row: usize) -> f64 {
        match self {
            ColumnData::Int(v) => v[row] as f64,
            ColumnData::Float(v) => v[row],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// Named, typed columns plus ordered `(key, value)` metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<Column>,
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !key.contains('\n'));
        debug_assert!(!value.contains('\n'));
        self.metadata.push((key.to_string(), value));
    }

    /// Metadata value formatted so it parses back to the identical f64.
    pub fn push_meta_f64(&mut self, key: &str, value: f64) {
        self.push_meta(key, format!("{value:.16e}"));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn add_int_column(&mut self, name: &str, values: Vec<i64>) {
        self.check_len(values.len());
        self.columns.push(Column {
            name: name.to_string(),
            data: ColumnData::Int(values),
        });
    }

    pub fn add_float_column(&mut self, name: &str, values: Vec<f64>) {
        self.check_len(values.len());
        self.columns.push(Column {
            name: name.to_string(),
            data: ColumnData::Float(values),
        });
    }

    fn check_len(&self, len: usize) {
        if let Some(first) = self.columns.first() {
            assert_eq!(
                first.data.len(),
                len,
                "column length mismatch while building table"
            );
        }
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Column coerced to f64 values, or None if absent.
    pub fn float_column(&self, name: &str) -> Option<Vec<f64>> {
        let col = self.column(name)?;
        Some((0..col.data.len()).map(|r| col.data.as_f64(r)).collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(out, "{}", names.join(","));
        for row in 0..self.n_rows() {
            for (i, col) in self.columns.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match &col.data {
                    ColumnData::Int(v) => {
                        let _ = write!(out, "{}", v[row]);
                    }
                    ColumnData::Float(v) => {
                        let _ = write!(out, "{:.16e}", v[row]);
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| CliError::io(path, e))
    }

    pub fn to_json_string(&self) -> String {
        use serde_json::{json, Map, Number, Value};
        let metadata: Vec<Value> = self
            .metadata
            .iter()
            .map(|(k, v)| json!([k, v]))
            .collect();
        let columns: Vec<Value> = self
            .columns
            .iter()
            .map(|c| {
                let (kind, values): (&str, Vec<Value>) = match &c.data {
                    ColumnData::Int(v) => {
                        ("int", v.iter().map(|&x| Value::Number(x.into())).collect())
                    }
                    ColumnData::Float(v) => (
                        "float",
                        v.iter()
                            .map(|&x| Number::from_f64(x).map_or(Value::Null, Value::Number))
                            .collect(),
                    ),
                };
                let mut obj = Map::new();
                obj.insert("name".into(), Value::String(c.name.clone()));
                obj.insert("type".into(), Value::String(kind.into()));
                obj.insert("values".into(), Value::Array(values));
                Value::Object(obj)
            })
            .collect();
        let doc = json!({ "metadata": metadata, "columns": columns });
        let mut s = serde_json::to_string_pretty(&doc).expect("table serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| CliError::io(path, e))
    }

    /// Parse the CSV form written by [`to_csv_string`]. Column types are
    /// recovered from the cell syntax: a column is integer when every cell
    /// parses as i64 (floats always carry an exponent, so the split is
    /// unambiguous).
    pub fn from_csv_str(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| {
            CliError::bad_input(origin, format!("line {}: {}", line + 1, msg))
        };
        let mut metadata = Vec::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            let rest = rest.trim_start();
            let (lineno, _) = lines.next().expect("peeked");
            let Some((k, v)) = rest.split_once('=') else {
                return Err(bad(lineno, "metadata line is not key=value".into()));
            };
            metadata.push((k.to_string(), v.to_string()));
        }
        let Some((_, header)) = lines.next() else {
            return Err(CliError::bad_input(origin, "missing header row"));
        };
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<&str> = line.split(',').collect();
            if row.len() != names.len() {
                return Err(bad(
                    lineno,
                    format!("expected {} fields, found {}", names.len(), row.len()),
                ));
            }
            for (c, field) in row.into_iter().enumerate() {
                cells[c].push(field.trim().to_string());
            }
        }
        let mut table = ResultTable {
            metadata,
            columns: Vec::new(),
        };
        for (name, raw) in names.into_iter().zip(cells) {
            if raw.iter().all(|s| s.parse::<i64>().is_ok()) {
                let vals = raw.iter().map(|s| s.parse().unwrap()).collect();
                table.columns.push(Column {
                    name,
                    data: ColumnData::Int(vals),
                });
            } else {
                let mut vals = Vec::with_capacity(raw.len());
                for s in &raw {
                    vals.push(s.parse::<f64>().map_err(|_| {
                        CliError::bad_input(
                            origin,
                            format!("column `{name}`: `{s}` is not a number"),
                        )
                    })?);
                }
                table.columns.push(Column {
                    name,
                    data: ColumnData::Float(vals),
                });
            }
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_csv_str(&text, path)
    }
}
