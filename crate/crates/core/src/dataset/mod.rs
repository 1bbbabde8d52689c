//! Sample schema, ingestion, cleaning, numeric features and fold splits.

mod clean;
mod features;
mod folds;
mod ingest;
mod record;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use clean::clean_outliers;
pub use features::{derive_numeric, numeric_dim, Normalizer, NumericFeatures, NUMERIC_NAMES};
pub use folds::{make_folds, FoldSplit};
pub use ingest::{ingest, ingest_reader, write_records, IngestMode, Rejection, RejectionReport};
pub use record::{
    category_token, category_vocab_size, language_token, language_vocab_size, popularity_score,
    PopularitySeries, PostRecord, CATEGORIES, DAYS, LANGUAGES, UNKNOWN_LANGUAGE,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticSet};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
}
