//! CSV and directory conventions shared by all commands.

use std::fs;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::{LabError, VERSION};

fn io(path: &Path, e: impl std::fmt::Display) -> LabError {
    LabError::Io(format!("{}: {e}", path.display()))
}

/// Creates `dir` and records the resolved config and tool version in it.
pub fn prepare_dir(dir: &Path, config: &ExperimentConfig) -> Result<(), LabError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    write_text(&dir.join("config.resolved.toml"), &config.resolved())?;
    write_text(&dir.join("VERSION"), &format!("{VERSION}\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), LabError> {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// Formats a float with Rust's shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Comma-separated table with LF line endings. Rows shorter than the
/// header are padded with empty fields.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let mut row: Vec<String> = row.into_iter().map(Into::into).collect();
        assert!(row.len() <= self.header.len(), "row wider than header");
        row.resize(self.header.len(), String::new());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        write_text(path, &self.to_csv())
    }
}
