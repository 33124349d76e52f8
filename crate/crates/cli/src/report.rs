//! Run reports, CSV tables and the content hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A CSV table written with RFC 4180 quoting.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
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
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Shortest round-trip float formatting, stable across runs.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// How value is compared to threshold: "<=", ">=" or "==".
    pub relation: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: "<=".into(), passed: value <= threshold }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, relation: ">=".into(), passed: value >= threshold }
    }

    /// A boolean condition, recorded as 1 (true) or 0 (false) against 1.
    pub fn holds(name: &str, cond: bool) -> Self {
        Self { name: name.into(), value: if cond { 1.0 } else { 0.0 }, threshold: 1.0, relation: "==".into(), passed: cond }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub role: String,
    pub sha256: String,
}

/// What a runner hands back before anything touches the disk.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<(String, String, Table)>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn table(&mut self, file: &str, role: &str, t: Table) {
        self.tables.push((file.into(), role.into(), t));
    }

    pub fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub kind: String,
    pub seed: Option<u64>,
    /// sha256 of the config echo in git blob framing.
    pub config_hash: String,
    pub config_echo: String,
    pub outputs: Vec<OutputEntry>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl RunReport {
    pub fn failing(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of `blob <len>\0<content>`, as git does for file contents.
pub fn blob_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content.as_bytes());
    hex::encode(h.finalize())
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| CliError::io(path, e))
}
