//! Trial-log CSV format.
//!
//! Header `pair_id,trial_id,y,yhat_h,conf_h,yhat_m,conf_m`; confidences are
//! class-1 probabilities in `[0, 1]`. An optional sidecar `<file>.json`
//! (`{"k": K}`) declares the class count; without it the file is binary.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdt::TrialRecord;

pub const HEADER: [&str; 7] = ["pair_id", "trial_id", "y", "yhat_h", "conf_h", "yhat_m", "conf_m"];

/// Largest fraction of malformed rows tolerated before a read aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub k: usize,
}

impl Default for Manifest {
    fn default() -> Self {
        Self { k: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub pair_id: String,
    pub trial_id: String,
    pub record: TrialRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line in the file, header included.
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub k: usize,
    pub rows: Vec<TrialRow>,
    /// Rows skipped as malformed (at most 1% of the file).
    pub malformed: Vec<RowError>,
}

impl TrialLog {
    pub fn records(&self) -> Vec<TrialRecord> {
        self.rows.iter().map(|r| r.record).collect()
    }

    /// Records grouped by `pair_id`, in order of first appearance.
    pub fn by_pair(&self) -> Vec<(String, Vec<TrialRecord>)> {
        let mut groups: Vec<(String, Vec<TrialRecord>)> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for r in &self.rows {
            let slot = *index.entry(r.pair_id.clone()).or_insert_with(|| {
                groups.push((r.pair_id.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[slot].1.push(r.record);
        }
        groups
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn parse_label(field: &str, name: &str, k: usize) -> std::result::Result<u8, String> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| format!("{name} = `{field}` is not a non-negative integer"))?;
    if v >= k {
        return Err(format!("{name} = {v} outside 0..{k}"));
    }
    u8::try_from(v).map_err(|_| format!("{name} = {v} too large"))
}

fn parse_conf(field: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("{name} = `{field}` is not a number"))?;
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(format!("{name} = {v} outside [0, 1]"));
    }
    Ok(v)
}

fn parse_row(rec: &csv::StringRecord, k: usize) -> std::result::Result<TrialRow, String> {
    if rec.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), rec.len()));
    }
    let y = parse_label(&rec[2], "y", k)?;
    let yhat_h = parse_label(&rec[3], "yhat_h", k)?;
    let conf_h = parse_conf(&rec[4], "conf_h")?;
    let yhat_m = parse_label(&rec[5], "yhat_m", k)?;
    let conf_m = parse_conf(&rec[6], "conf_m")?;
    if k == 2 {
        for (name, yhat, c) in [("h", yhat_h, conf_h), ("m", yhat_m, conf_m)] {
            if (yhat == 1) != (c > 0.5) {
                return Err(format!("yhat_{name} = {yhat} contradicts conf_{name} = {c}"));
            }
        }
    }
    Ok(TrialRow {
        pair_id: rec[0].trim().to_string(),
        trial_id: rec[1].trim().to_string(),
        record: TrialRecord::new(y, yhat_h, yhat_m, conf_h, conf_m).map_err(|e| e.to_string())?,
    })
}

/// Reads a trial log. Malformed rows are collected; more than 1% of them
/// aborts the read with every diagnostic listed.
pub fn read_trials<R: Read>(reader: R, manifest: Manifest) -> Result<TrialLog> {
    if manifest.k < 2 {
        return Err(Error::InvalidClassCount { k: manifest.k });
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Malformed(format!("line 1: {e}")))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != HEADER {
        return Err(Error::Malformed(format!(
            "line 1: header must be `{}`, found `{}`",
            HEADER.join(","),
            got.join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut malformed = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                match parse_row(&rec, manifest.k) {
                    Ok(r) => rows.push(r),
                    Err(message) => malformed.push(RowError { line, message }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(Error::Io(e.to_string()));
                }
                malformed.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    let total = rows.len() + malformed.len();
    if !malformed.is_empty() && malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        let list: Vec<String> = malformed.iter().map(ToString::to_string).collect();
        return Err(Error::Malformed(format!(
            "{} of {total} rows malformed (limit 1%):\n{}",
            malformed.len(),
            list.join("\n")
        )));
    }
    Ok(TrialLog {
        k: manifest.k,
        rows,
        malformed,
    })
}

/// Reads `path` and its sidecar manifest, if present.
pub fn read_trials_file(path: &Path) -> Result<TrialLog> {
    let mpath = manifest_path(path);
    let manifest = if mpath.exists() {
        let text = std::fs::read_to_string(&mpath)?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("{}: {e}", mpath.display())))?
    } else {
        Manifest::default()
    };
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trials(std::io::BufReader::new(file), manifest)
}

/// Writes records under a single `pair_id`, numbering trials from 0.
pub fn write_trials<W: Write>(writer: W, pair_id: &str, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for (i, t) in trials.iter().enumerate() {
        w.write_record([
            pair_id.to_string(),
            i.to_string(),
            t.y.to_string(),
            t.yhat_h.to_string(),
            t.conf_h.to_string(),
            t.yhat_m.to_string(),
            t.conf_m.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "pair_id,trial_id,y,yhat_h,conf_h,yhat_m,conf_m\n";

    #[test]
    fn round_trip_preserves_records() {
        use crate::sdt::{simulate_trials, AgentParams, PairConfig};
        let a = AgentParams::canonical(1.2, 0.1).unwrap();
        let trials = simulate_trials(&PairConfig::new(a, a, 0.3).unwrap(), 50, 1);
        let mut buf = Vec::new();
        write_trials(&mut buf, "p1", &trials).unwrap();
        let log = read_trials(buf.as_slice(), Manifest::default()).unwrap();
        assert_eq!(log.records(), trials);
        assert!(log.malformed.is_empty());
        assert_eq!(log.by_pair().len(), 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let mut text = HEAD.to_string();
        text.push_str("a,1,1,1,0.9,0,0.2\n");
        text.push_str("a,2,1,1,1.7,0,0.2\n");
        let err = read_trials(text.as_bytes(), Manifest::default()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("conf_h"), "{err}");
    }

    #[test]
    fn sparse_malformed_rows_are_skipped() {
        let mut text = HEAD.to_string();
        for i in 0..200 {
            text.push_str(&format!("a,{i},1,1,0.9,0,0.2\n"));
        }
        text.push_str("a,x,2,1,0.9,0,0.2\n");
        let log = read_trials(text.as_bytes(), Manifest::default()).unwrap();
        assert_eq!(log.rows.len(), 200);
        assert_eq!(log.malformed.len(), 1);
        assert_eq!(log.malformed[0].line, 202);
        assert!(log.malformed[0].message.contains("y = 2"));
    }

    #[test]
    fn contradictory_prediction_is_malformed() {
        let text = format!("{HEAD}a,1,1,0,0.9,0,0.2\n");
        let err = read_trials(text.as_bytes(), Manifest::default()).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("contradicts"), "{err}");
    }

    #[test]
    fn wrong_header_and_field_count() {
        let err = read_trials("a,b\n1,2\n".as_bytes(), Manifest::default()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let text = format!("{HEAD}a,1,1\n");
        let err = read_trials(text.as_bytes(), Manifest::default()).unwrap_err();
        assert!(err.to_string().contains("expected 7 fields"));
    }

    #[test]
    fn header_only_is_empty() {
        let log = read_trials(HEAD.as_bytes(), Manifest::default()).unwrap();
        assert!(log.rows.is_empty());
    }

    #[test]
    fn manifest_allows_more_classes() {
        let text = format!("{HEAD}a,1,4,3,0.2,4,0.9\n");
        let log = read_trials(text.as_bytes(), Manifest { k: 5 }).unwrap();
        assert_eq!(log.rows[0].record.y, 4);
        assert!(read_trials(text.as_bytes(), Manifest::default()).is_err());
    }
}
