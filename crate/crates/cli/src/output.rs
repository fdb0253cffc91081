//! Result tables, their CSV/JSON serialization, and run manifests.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::OutputFormat;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    Int(i64),
    Float(f64),
    Missing,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Str(s.into())
    }

    pub fn opt_float(v: Option<f64>) -> Cell {
        v.map_or(Cell::Missing, Cell::Float)
    }

    fn render(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            // shortest representation that round-trips
            Cell::Float(f) => f.to_string(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Str(s) => s.clone().into(),
            Cell::Int(i) => (*i).into(),
            Cell::Float(f) => serde_json::Number::from_f64(*f).map_or(serde_json::Value::Null, Into::into),
            Cell::Missing => serde_json::Value::Null,
        }
    }

    /// Total order used to sort rows: strings lexicographically, numbers by
    /// value, missing last.
    fn cmp_key(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Str(a), Cell::Str(b)) => a.cmp(b),
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Float(a), Cell::Float(b)) => a.total_cmp(b),
            (Cell::Int(a), Cell::Float(b)) => (*a as f64).total_cmp(b),
            (Cell::Float(a), Cell::Int(b)) => a.total_cmp(&(*b as f64)),
            (Cell::Missing, Cell::Missing) => Ordering::Equal,
            (Cell::Missing, _) => Ordering::Greater,
            (_, Cell::Missing) => Ordering::Less,
            (Cell::Str(_), _) => Ordering::Less,
            (_, Cell::Str(_)) => Ordering::Greater,
        }
    }
}

/// A named table written as `<name>.<ext>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Leading columns that form the sort key.
    pub key_len: usize,
}

impl Table {
    pub fn new(name: &str, header: Vec<&'static str>, key_len: usize) -> Self {
        Table { name: name.to_string(), header, rows: Vec::new(), key_len }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Sort by the key columns; ties keep insertion order.
    pub fn sort(&mut self) {
        let k = self.key_len;
        self.rows.sort_by(|a, b| a[..k].iter().zip(&b[..k]).map(|(x, y)| x.cmp_key(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal));
    }

    pub fn file_name(&self, format: OutputFormat) -> String {
        format!("{}.{}", self.name, format.extension())
    }

    pub fn render(&self, format: OutputFormat) -> Vec<u8> {
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header).expect("in-memory write");
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
                }
                w.into_inner().expect("in-memory flush")
            }
            OutputFormat::Json => {
                let records: Vec<serde_json::Map<String, serde_json::Value>> = self
                    .rows
                    .iter()
                    .map(|row| self.header.iter().map(|h| h.to_string()).zip(row.iter().map(Cell::json)).collect())
                    .collect();
                let mut out = serde_json::to_vec_pretty(&records).expect("json");
                out.push(b'\n');
                out
            }
        }
    }

    pub fn write(&self, dir: &Path, format: OutputFormat) -> std::io::Result<PathBuf> {
        let path = dir.join(self.file_name(format));
        fs::File::create(&path)?.write_all(&self.render(format))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub job: String,
    pub error: String,
}

/// Provenance for one command run. Contains nothing time- or
/// machine-dependent so reruns compare byte-for-byte.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub alignment_format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub jobs_total: usize,
    pub jobs_failed: usize,
    pub failures: Vec<Failure>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{}_manifest.json", self.command.replace('-', "_")));
        let mut text = serde_json::to_vec_pretty(self).expect("manifest serializes");
        text.push(b'\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
