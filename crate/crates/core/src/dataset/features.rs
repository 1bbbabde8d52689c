use serde::{Deserialize, Serialize};

use super::record::PostRecord;
use super::DataError;

/// Names of the numeric features, in vector order. `ep` is present only in
/// early-popularity mode.
pub const NUMERIC_NAMES: [&str; 7] = [
    "log_followers",
    "post_count",
    "duration_s",
    "title_len_chars",
    "tag_count",
    "desc_len_chars",
    "ep",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericFeatures {
    pub log_followers: f64,
    pub post_count: f64,
    pub duration_s: f64,
    pub title_len_chars: f64,
    pub tag_count: f64,
    pub desc_len_chars: f64,
    /// Day-1 popularity, only in early-popularity mode.
    pub ep: Option<f64>,
}

impl NumericFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.log_followers,
            self.post_count,
            self.duration_s,
            self.title_len_chars,
            self.tag_count,
            self.desc_len_chars,
        ];
        v.extend(self.ep);
        v
    }
}

pub fn numeric_dim(ep_mode: bool) -> usize {
    6 + usize::from(ep_mode)
}

/// Raw (pre-normalization) numeric features. Lengths count Unicode scalar
/// values, not bytes.
pub fn derive_numeric(record: &PostRecord, ep_mode: bool) -> Result<NumericFeatures, DataError> {
    let ep = if ep_mode {
        Some(record.popularity_on(1).ok_or_else(|| {
            DataError::Domain(format!("sample {} has no day-1 views", record.id))
        })?)
    } else {
        None
    };
    Ok(NumericFeatures {
        log_followers: (record.followers as f64 + 1.0).log2(),
        post_count: record.post_count as f64,
        duration_s: record.duration_s,
        title_len_chars: record.title.chars().count() as f64,
        tag_count: record.tags.len() as f64,
        desc_len_chars: record.description.chars().count() as f64,
        ep,
    })
}

/// Per-feature z-score parameters fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features that were constant at fit time; their std was replaced by 1.
    pub degenerate: Vec<bool>,
}

impl Normalizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let first = rows
            .first()
            .ok_or_else(|| DataError::Config("cannot fit a normalizer on zero samples".into()))?;
        let dim = first.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(DataError::Config("numeric feature rows differ in length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut degenerate = Vec::with_capacity(dim);
        for (j, v) in var.into_iter().enumerate() {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                std.push(s);
                degenerate.push(false);
            } else {
                log::warn!("numeric feature {j} is constant; using unit scale");
                std.push(1.0);
                degenerate.push(true);
            }
        }
        Ok(Normalizer { mean, std, degenerate })
    }

    pub fn fit_features(features: &[NumericFeatures]) -> Result<Self, DataError> {
        Self::fit(&features.iter().map(NumericFeatures::to_vec).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }
}
