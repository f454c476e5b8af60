//! CSV reporting with locale-independent `%.17g` number formatting.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One cell of a report row.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Num(v) => format_f64(*v),
            Value::Int(v) => v.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            Value::Text(_) => None,
        }
    }
}

/// An ordered list of named cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportRow {
    pub cells: Vec<(String, Value)>,
}

impl ReportRow {
    pub fn new() -> Self {
        ReportRow::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<Value>) -> Self {
        self.cells.push((name.to_string(), value.into()));
        self
    }

    pub fn push(&mut self, name: &str, value: impl Into<Value>) {
        self.cells.push((name.to_string(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.cells.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn columns(&self) -> Vec<&str> {
        self.cells.iter().map(|(n, _)| n.as_str()).collect()
    }
}

/// C-style `%.17g`. Infinities print as `inf` / `-inf`, NaN as `nan`.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders rows as CSV text: a header line, one line per row, `\n` endings.
pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let first = rows.first().ok_or_else(|| Error::invalid("rows", "nothing to write"))?;
    let header = first.columns();
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (k, row) in rows.iter().enumerate() {
        if row.columns() != header {
            return Err(Error::invalid("rows", format!("row {k} has a different column set")));
        }
        let line: Vec<String> = row.cells.iter().map(|(_, v)| v.render()).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    Ok(out)
}

pub fn write_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let text = render_csv(rows)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
