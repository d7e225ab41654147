//! Merging `--config` JSON files with command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::Usage;

fn prune(v: Value) -> Option<Value> {
    match v {
        Value::Null => None,
        Value::Array(a) if a.is_empty() => None,
        Value::Object(m) => Some(Value::Object(m.into_iter().filter_map(|(k, v)| prune(v).map(|v| (k, v))).collect())),
        other => Some(other),
    }
}

/// Flags given on the command line override keys of the config file.
pub fn resolve<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(cli)?)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut base: Value =
        serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(ref mut map) = base else {
        return Err(Usage(format!("config {} must be a JSON object", path.display())).into());
    };
    if let Some(Value::Object(over)) = prune(serde_json::to_value(cli)?) {
        map.extend(over);
    }
    serde_json::from_value(base).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
}

pub fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Usage(format!("missing required option --{flag}")).into())
}
