//! Output files. Every JSON document carries `"schema": "1"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "1";

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

/// `{"schema": "1", "command": .., "seed": .., "config": .., ...body}`.
pub fn envelope(command: &str, seed: u64, config: &impl Serialize, body: Map<String, Value>) -> Value {
    let mut doc = Map::new();
    doc.insert("schema".into(), SCHEMA.into());
    doc.insert("command".into(), command.into());
    doc.insert("seed".into(), seed.into());
    doc.insert("config".into(), serde_json::to_value(config).expect("serializable config"));
    doc.extend(body);
    Value::Object(doc)
}

pub fn write_json(dir: &Path, name: &str, doc: &Value) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(doc).expect("serializable document");
    fs::write(&path, text + "\n").map_err(|e| CliError::output(&path, e))?;
    Ok(path)
}

/// CSV with a header row. Floats use the shortest representation that
/// parses back to the same value.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, dir: &Path, name: &str) -> CliResult<PathBuf> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
        w.write_record(&self.header).map_err(|e| CliError::output(&path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::output(&path, e))?;
        }
        w.flush().map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1 + 0.2, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn envelope_has_schema_and_seed() {
        let doc = envelope("fit", 7, &serde_json::json!({"k": 1}), Map::new());
        assert_eq!(doc["schema"], "1");
        assert_eq!(doc["seed"], 7);
        assert_eq!(doc["config"]["k"], 1);
    }
}
