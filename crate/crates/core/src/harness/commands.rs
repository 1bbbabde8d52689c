use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::analysis::{
    correlation_matrices, distribution_summary, group_stats, CorrelationMatrices, DayDistribution, GroupKey,
    GroupStat, RankForm,
};
use crate::dataset::{
    clean_outliers, generate_synthetic, ingest, write_records, IngestMode, PostRecord, RejectionReport,
    SyntheticConfig,
};
use crate::metrics::EvalReport;
use crate::par::Execution;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `mae_curve.csv` and `src_curve.csv` into `dir`.
pub fn write_curves(dir: &Path, report: &EvalReport) -> Result<(), HarnessError> {
    for (name, csv) in [("mae_curve.csv", report.mae_curve()), ("src_curve.csv", report.src_curve())] {
        let path = dir.join(name);
        std::fs::write(&path, csv).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Records that survived ingestion and (optionally) outlier removal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    #[serde(skip)]
    pub records: Vec<PostRecord>,
    #[serde(flatten)]
    pub report: RejectionReport,
    /// Ids removed by the 3σ filter.
    pub outliers: Vec<String>,
}

pub fn ingest_cleaned(path: &Path, mode: IngestMode, clean: bool) -> Result<IngestOutcome, HarnessError> {
    let (records, report) = ingest(path, mode)?;
    if report.total_rejected() > 0 {
        log::warn!("{}: rejected {} records {:?}", path.display(), report.total_rejected(), report.counts);
    }
    let (records, outliers) = if clean {
        clean_outliers(records)
    } else {
        (records, Vec::new())
    };
    Ok(IngestOutcome {
        records,
        report,
        outliers,
    })
}

/// Writes a synthetic corpus as `records.jsonl` plus a `packs/` directory.
pub fn generate(n: usize, seed: u64, config: &SyntheticConfig, out: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    let set = generate_synthetic(n, seed, config)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let records = out.join("records.jsonl");
    let packs = out.join("packs");
    write_records(&records, &set.records)?;
    set.packs.write_dir(&packs)?;
    Ok((records, packs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub samples: usize,
    pub days: Vec<DayDistribution>,
    pub correlations: CorrelationMatrices,
    pub categories: Vec<GroupStat>,
    pub languages: Vec<GroupStat>,
}

pub fn run_stats(records: &[PostRecord], form: RankForm, exec: Execution) -> Result<StatsReport, HarnessError> {
    let series: Vec<_> = records.iter().map(PostRecord::popularity).collect();
    let correlations = correlation_matrices(&series, form, exec)
        .map_err(|e| HarnessError::Data(crate::dataset::DataError::Domain(e.to_string())))?;
    Ok(StatsReport {
        samples: records.len(),
        days: distribution_summary(&series),
        correlations,
        categories: group_stats(records, GroupKey::Category),
        languages: group_stats(records, GroupKey::Language),
    })
}

impl StatsReport {
    /// Square matrix as CSV with a `day` column and one column per day.
    pub fn matrix_csv(matrix: &[Vec<f64>]) -> String {
        let days = matrix.len();
        let mut out = String::from("day");
        for d in 1..=days {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
        for (i, row) in matrix.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
