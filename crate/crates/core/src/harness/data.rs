use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::dataset::{derive_numeric, Normalizer, PostRecord, DAYS};
use crate::featurepack::{MissingPolicy, PackSet};
use crate::model::{Batch, ModelConfig, TEXT_FIELDS};
use crate::tensor::Tensor;

/// Model inputs and popularity curves for a record set, in record order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub ids: Vec<String>,
    /// Inputs with raw (unstandardized) numeric features.
    pub inputs: Batch,
    /// `[n, 30]` daily popularity; days without views are NaN.
    pub popularity: Tensor,
    pub ep_mode: bool,
}

impl Prepared {
    pub fn build(
        records: &[PostRecord],
        packs: &PackSet,
        ep_mode: bool,
        policy: MissingPolicy,
    ) -> Result<Self, HarnessError> {
        let n = records.len();
        let (vd, td) = (packs.visual_dim(), packs.text_dim());
        let mut visual = Vec::with_capacity(n * vd);
        let mut text = Vec::with_capacity(n * TEXT_FIELDS * td);
        let mut numeric = Vec::new();
        let mut popularity = Vec::with_capacity(n * DAYS);
        for r in records {
            visual.extend(packs.visual.lookup(&r.id, policy)?);
            for pack in &packs.text {
                text.extend(pack.lookup(&r.id, policy)?);
            }
            numeric.extend(derive_numeric(r, ep_mode)?.to_vec());
            let p = r.popularity().p;
            popularity.extend((0..DAYS).map(|d| p.get(d).copied().unwrap_or(f64::NAN)));
        }
        let nd = numeric.len() / n.max(1);
        let matrix = |cols: usize, data: Vec<f64>| Tensor::new(vec![n, cols], data).expect("row-major fill");
        Ok(Prepared {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            inputs: Batch {
                visual: matrix(vd, visual),
                text: matrix(TEXT_FIELDS * td, text),
                numeric: matrix(nd, numeric),
                category: records.iter().map(PostRecord::category_token).collect(),
                language: records.iter().map(PostRecord::language_token).collect(),
            },
            popularity: matrix(DAYS, popularity),
            ep_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check_dims(&self, c: &ModelConfig) -> Result<(), HarnessError> {
        let visual = self.inputs.visual.cols();
        let text = self.inputs.text.cols() / TEXT_FIELDS;
        if visual != c.visual_dim || text != c.text_field_dim {
            return Err(HarnessError::Dims(format!(
                "feature packs have visual {visual}, text {text}; model expects visual {}, text {}",
                c.visual_dim, c.text_field_dim
            )));
        }
        if self.ep_mode != c.ep_mode {
            return Err(HarnessError::Dims(format!(
                "data prepared with ep_mode = {}, model has ep_mode = {}",
                self.ep_mode, c.ep_mode
            )));
        }
        Ok(())
    }

    pub fn fit_normalizer(&self, rows: &[usize]) -> Result<Normalizer, HarnessError> {
        let raw: Vec<Vec<f64>> = rows.iter().map(|&r| self.inputs.numeric.row(r).to_vec()).collect();
        Ok(Normalizer::fit(&raw)?)
    }

    /// Inputs for `rows` with standardized numeric features.
    pub fn batch(&self, rows: &[usize], norm: &Normalizer) -> Batch {
        let mut b = self.inputs.select(rows);
        let cols = b.numeric.cols();
        for row in b.numeric.data_mut().chunks_mut(cols.max(1)) {
            let z = norm.apply(row);
            row.copy_from_slice(&z);
        }
        b
    }

    /// Targets for `rows` over the predicted days (days 2–30 with EP input).
    pub fn targets(&self, rows: &[usize], first_day: usize) -> Tensor {
        let skip = first_day - 1;
        let mut data = Vec::with_capacity(rows.len() * (DAYS - skip));
        for &r in rows {
            data.extend_from_slice(&self.popularity.row(r)[skip..]);
        }
        Tensor::new(vec![rows.len(), DAYS - skip], data).expect("row-major fill")
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Training and validation row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    /// Seeded holdout of `round(fraction · n)` rows (at least two, so rank
    /// correlations are defined); a zero fraction validates on the training rows.
    pub fn holdout(rows: &[usize], fraction: f64, seed: u64) -> Result<Self, HarnessError> {
        if rows.is_empty() {
            return Err(HarnessError::Config("cannot train on zero samples".into()));
        }
        if fraction <= 0.0 {
            return Ok(Split {
                train: rows.to_vec(),
                val: rows.to_vec(),
            });
        }
        let n_val = ((fraction * rows.len() as f64).round() as usize).max(2);
        if n_val + 2 > rows.len() {
            return Err(HarnessError::Config(format!(
                "{} samples are too few for a {fraction} validation holdout",
                rows.len()
            )));
        }
        let mut shuffled = rows.to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_5a11));
        let mut val = shuffled.split_off(shuffled.len() - n_val);
        let mut train = shuffled;
        train.sort_unstable();
        val.sort_unstable();
        Ok(Split { train, val })
    }
}
