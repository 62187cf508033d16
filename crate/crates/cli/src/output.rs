use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::Format;
use crate::RunError;

#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    B(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

fn csv_cell(c: &Cell) -> String {
    match c {
        Cell::F(v) => format!("{v:?}"),
        Cell::U(v) => v.to_string(),
        Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Cell::S(s) => s.clone(),
        Cell::B(b) => b.to_string(),
    }
}

fn json_cell(c: &Cell) -> String {
    match c {
        Cell::F(v) if v.is_finite() => format!("{v:?}"),
        Cell::F(_) => "null".into(),
        Cell::U(v) => v.to_string(),
        Cell::S(s) => serde_json::to_string(s).expect("string"),
        Cell::B(b) => b.to_string(),
    }
}

/// A fixed-schema table written as CSV or as a JSON array of records.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(csv_cell).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = String::from("[\n");
        for (i, r) in self.rows.iter().enumerate() {
            s.push_str("  {");
            for (j, (c, v)) in self.columns.iter().zip(r).enumerate() {
                if j > 0 {
                    s.push_str(", ");
                }
                let _ = write!(s, "\"{c}\": {}", json_cell(v));
            }
            s.push('}');
            if i + 1 < self.rows.len() {
                s.push(',');
            }
            s.push('\n');
        }
        s.push_str("]\n");
        s
    }
}

/// Files of one run, held in memory until the run succeeds.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
    pub summary: Vec<String>,
}

impl Artifacts {
    /// Writes `stem.csv`, or `stem_table.json` so it never shadows a summary document.
    pub fn table(&mut self, stem: &str, t: &Table, format: Format) {
        match format {
            Format::Csv => self.insert(format!("{stem}.csv"), t.to_csv().into_bytes()),
            Format::Json => self.insert(format!("{stem}_table.json"), t.to_json().into_bytes()),
        }
    }

    fn insert(&mut self, name: String, bytes: Vec<u8>) {
        let prev = self.files.insert(name.clone(), bytes);
        debug_assert!(prev.is_none(), "artifact {name} written twice");
    }

    pub fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), RunError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| RunError::Io(format!("output::json: {name}: {e}")))?;
        s.push('\n');
        self.insert(name.to_string(), s.into_bytes());
        Ok(())
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn write_all(&self, dir: &Path) -> Result<(), RunError> {
        let io = |e: std::io::Error| RunError::Io(format!("output::write: {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes).map_err(io)?;
        }
        Ok(())
    }
}
