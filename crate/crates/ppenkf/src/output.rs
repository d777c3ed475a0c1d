//! Result tables: CSV and JSON with six significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
    /// Not available; an empty CSV field or JSON null.
    Missing,
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Cell::Float(v)
        } else {
            Cell::Missing
        }
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::from)
    }
}

/// `%g`-style text with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return String::new();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    let rounded: f64 = sci.parse().expect("valid float");
    trim_zeros(&format!("{rounded:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Value of `x` after rounding to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x.is_finite() {
        format_sig6(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

impl Cell {
    pub fn to_text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_sig6(*v),
            Cell::Missing => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => Number::from_f64(round_sig6(*v)).map_or(Value::Null, Value::Number),
            Cell::Missing => Value::Null,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }
}

/// Rows with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_text))?;
        }
        let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| AppError::Runtime(e.to_string()))
    }

    /// Array of row objects; keys follow the column order.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (c, v) in self.columns.iter().zip(row) {
                    obj.insert(c.clone(), v.to_json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&Value::Array(rows))?;
        text.push('\n');
        Ok(text)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Parses CSV text; fields that read as integers or floats become numbers.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(parse_cell).collect());
        }
        Ok(Self { columns, rows })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Array(items) = value else {
            return Err(AppError::Validation("table JSON must be an array".into()));
        };
        let mut columns: Vec<String> = Vec::new();
        let mut rows = Vec::new();
        for item in items {
            let Value::Object(obj) = item else {
                return Err(AppError::Validation("table rows must be objects".into()));
            };
            if columns.is_empty() {
                columns = obj.keys().cloned().collect();
            }
            rows.push(
                columns
                    .iter()
                    .map(|c| match obj.get(c) {
                        Some(Value::String(s)) => Cell::Text(s.clone()),
                        Some(Value::Number(n)) => n
                            .as_i64()
                            .map_or(Cell::Float(n.as_f64().unwrap_or(f64::NAN)), Cell::Int),
                        _ => Cell::Missing,
                    })
                    .collect(),
            );
        }
        Ok(Self { columns, rows })
    }
}

fn parse_cell(s: &str) -> Cell {
    if s.is_empty() {
        Cell::Missing
    } else if let Ok(v) = s.parse::<i64>() {
        Cell::Int(v)
    } else if let Ok(v) = s.parse::<f64>() {
        Cell::Float(v)
    } else {
        Cell::Text(s.to_string())
    }
}

/// Output directory; all files are written through it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    format: Format,
}

impl OutputDir {
    pub fn create(root: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| AppError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            format,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| AppError::io(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
        Ok(path)
    }

    /// Writes `<stem>.csv` or `<stem>.json`.
    pub fn write_table(&self, stem: &str, table: &Table) -> Result<PathBuf> {
        self.write_text(
            &format!("{stem}.{}", self.format.extension()),
            &table.render(self.format)?,
        )
    }
}
