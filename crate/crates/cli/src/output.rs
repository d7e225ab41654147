//! Rendering and atomic writing of command results.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// A command result: a tidy table plus a full JSON document.
pub struct Output {
    pub name: &'static str,
    pub csv: String,
    pub json: String,
    pub default_format: Format,
}

impl Output {
    pub fn new<T: Serialize>(name: &'static str, csv: String, doc: &T) -> Result<Self> {
        let mut json = serde_json::to_string_pretty(doc)?;
        json.push('\n');
        Ok(Self {
            name,
            csv,
            json,
            default_format: Format::Json,
        })
    }

    pub fn prefer(mut self, format: Format) -> Self {
        self.default_format = format;
        self
    }

    fn render(&self, format: Option<Format>) -> &str {
        match format.unwrap_or(self.default_format) {
            Format::Csv => &self.csv,
            Format::Json => &self.json,
        }
    }

    /// Writes both renderings into `out_dir`, one rendering to `out`, or one
    /// rendering to stdout.
    pub fn emit(&self, format: Option<Format>, out: Option<&Path>, out_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_atomic(&dir.join(format!("{}.csv", self.name)), self.csv.as_bytes())?;
            write_atomic(&dir.join(format!("{}.json", self.name)), self.json.as_bytes())?;
        } else if let Some(path) = out {
            write_atomic(path, self.render(format).as_bytes())?;
        } else {
            std::io::stdout().write_all(self.render(format).as_bytes())?;
        }
        Ok(())
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing {}", path.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Serialises flat rows as CSV with a header.
pub fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)?)
}

/// Flattens a JSON document into `key,value` rows with dotted keys.
pub fn csv_long(doc: &serde_json::Value) -> Result<String> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            serde_json::Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), v, out);
                }
            }
            serde_json::Value::String(s) => out.push((prefix.to_string(), s.clone())),
            serde_json::Value::Null => out.push((prefix.to_string(), String::new())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", doc, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["quantity", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)?)
}
