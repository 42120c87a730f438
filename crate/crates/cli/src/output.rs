//! Tables, manifests and atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
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

/// A data file: fixed column names and rows of cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header in {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("table serializes");
        out.push(b'\n');
        out
    }
}

/// One reported number with the context needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultValue {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub provenance: String,
}

impl ResultValue {
    pub fn exact(name: impl Into<String>, value: f64, tolerance: Option<f64>, provenance: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            std_error: None,
            seed: None,
            tolerance,
            provenance: provenance.into(),
        }
    }

    pub fn sampled(name: impl Into<String>, value: f64, std_error: f64, seed: u64, provenance: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            std_error: Some(std_error),
            seed: Some(seed),
            tolerance: None,
            provenance: provenance.into(),
        }
    }
}

/// What an experiment hands back before anything touches the disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub results: Vec<ResultValue>,
    pub warnings: Vec<String>,
    /// Lines for standard output.
    pub report: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultManifest<'a> {
    pub artifact: &'static str,
    pub version: &'static str,
    pub config: &'a ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
    pub results: &'a [ResultValue],
    pub warnings: &'a [String],
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn check_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        })
    }
}

/// Writes every table and then the manifest; returns the written paths.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &Outcome, wall_clock_seconds: f64) -> Result<Vec<PathBuf>, CliError> {
    let dir = &cfg.global.out_dir;
    check_dir(dir)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for table in &outcome.tables {
        let (ext, bytes) = match cfg.global.format {
            Format::Csv => ("csv", table.to_csv()),
            Format::Json => ("json", table.to_json()),
        };
        let file = format!("{}.{ext}", table.name);
        let path = dir.join(&file);
        write_atomic(&path, &bytes)?;
        files.push(file);
        written.push(path);
    }
    let manifest = ResultManifest {
        artifact: "brw",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        wall_clock_seconds,
        files,
        results: &outcome.results,
        warnings: &outcome.warnings,
    };
    let path = dir.join(format!("{}.manifest.json", cfg.experiment.name()));
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("t", &["x", "u"]);
        assert_eq!(t.to_csv(), b"x,u\n");
    }

    #[test]
    fn floats_round_trip_through_csv() {
        let mut t = Table::new("t", &["v"]);
        let v = 0.1 + 0.2;
        t.push(vec![v.into()]);
        let text = String::from_utf8(t.to_csv()).unwrap();
        let back: f64 = text.lines().nth(1).unwrap().parse().unwrap();
        assert_eq!(back.to_bits(), v.to_bits());
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn ragged_rows_are_rejected() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![1i64.into()]);
    }
}
