use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::record::{PostRecord, DAYS, UNKNOWN_LANGUAGE};
use super::DataError;

/// How many view entries a record must carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestMode {
    /// Full 30-day series required; longer series are truncated.
    Training,
    /// Partial series allowed, at least `min_views` entries.
    Inference { min_views: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub accepted: usize,
    pub counts: BTreeMap<String, usize>,
    pub rejected: Vec<Rejection>,
}

impl RejectionReport {
    pub fn total_rejected(&self) -> usize {
        self.rejected.len()
    }

    pub fn reject(&mut self, line: usize, id: Option<String>, reason: impl Into<String>) {
        let reason = reason.into();
        *self.counts.entry(reason.clone()).or_default() += 1;
        self.rejected.push(Rejection { line, id, reason });
    }
}

const REQUIRED: [&str; 10] = [
    "id",
    "category",
    "title",
    "description",
    "tags",
    "user_id",
    "duration_s",
    "followers",
    "post_count",
    "views",
];

fn get_str(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(format!("missing_{key}")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(format!("invalid_{key}")),
    }
}

fn get_count(obj: &Map<String, Value>, key: &str) -> Result<u64, String> {
    let v = obj.get(key).ok_or_else(|| format!("missing_{key}"))?;
    if let Some(n) = v.as_u64() {
        return Ok(n);
    }
    // integral floats such as 12.0 are accepted
    match v.as_f64() {
        Some(f) if f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(63) => Ok(f as u64),
        _ => Err(format!("invalid_{key}")),
    }
}

fn parse_object(obj: &Map<String, Value>, mode: IngestMode) -> Result<PostRecord, String> {
    for key in REQUIRED {
        if matches!(obj.get(key), None | Some(Value::Null)) {
            return Err(format!("missing_{key}"));
        }
    }
    let id = get_str(obj, "id")?;
    if id.is_empty() {
        return Err("missing_id".into());
    }
    let tags = match &obj["tags"] {
        Value::Array(items) => items
            .iter()
            .map(|t| t.as_str().map(str::to_string).ok_or_else(|| "invalid_tags".to_string()))
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err("invalid_tags".into()),
    };
    let duration_s = obj["duration_s"]
        .as_f64()
        .filter(|d| *d >= 0.0)
        .ok_or_else(|| "invalid_duration_s".to_string())?;
    let language = match obj.get("language") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        None | Some(Value::Null) | Some(Value::String(_)) => UNKNOWN_LANGUAGE.to_string(),
        Some(_) => return Err("invalid_language".into()),
    };
    let Value::Array(raw_views) = &obj["views"] else {
        return Err("invalid_views".into());
    };
    let mut views = Vec::with_capacity(raw_views.len());
    for v in raw_views {
        let n = match v.as_u64() {
            Some(n) => n,
            None => match v.as_f64() {
                Some(f) if f >= 0.0 && f.fract() == 0.0 => f as u64,
                _ => return Err("invalid_views".into()),
            },
        };
        views.push(n);
    }
    match mode {
        IngestMode::Training => {
            if views.len() < DAYS {
                return Err("short_series".into());
            }
            views.truncate(DAYS);
        }
        IngestMode::Inference { min_views } => {
            if views.len() < min_views {
                return Err("short_series".into());
            }
            views.truncate(DAYS);
        }
    }
    if views.windows(2).any(|w| w[1] < w[0]) {
        return Err("decreasing_views".into());
    }
    Ok(PostRecord {
        id,
        category: get_str(obj, "category")?,
        title: get_str(obj, "title")?,
        description: get_str(obj, "description")?,
        tags,
        user_id: get_str(obj, "user_id")?,
        language,
        duration_s,
        followers: get_count(obj, "followers")?,
        post_count: get_count(obj, "post_count")?,
        views,
    })
}

/// Parses line-delimited records. Bad lines are rejected, never fatal.
pub fn ingest_reader(
    reader: impl BufRead,
    mode: IngestMode,
) -> Result<(Vec<PostRecord>, RejectionReport), std::io::Error> {
    let mut records = Vec::new();
    let mut report = RejectionReport::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => {
                report.reject(lineno, None, "malformed");
                continue;
            }
        };
        let Value::Object(obj) = value else {
            report.reject(lineno, None, "malformed");
            continue;
        };
        let id = obj.get("id").and_then(Value::as_str).map(str::to_string);
        match parse_object(&obj, mode) {
            Ok(rec) => {
                if !seen.insert(rec.id.clone()) {
                    report.reject(lineno, id, "duplicate_id");
                    continue;
                }
                records.push(rec);
            }
            Err(reason) => report.reject(lineno, id, reason),
        }
    }
    report.accepted = records.len();
    Ok((records, report))
}

pub fn ingest(path: &Path, mode: IngestMode) -> Result<(Vec<PostRecord>, RejectionReport), DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(BufReader::new(file), mode).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes records one JSON object per line.
pub fn write_records(path: &Path, records: &[PostRecord]) -> Result<(), DataError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
