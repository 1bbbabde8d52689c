use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::commands::{write_curves, write_json};
use super::data::Prepared;
use super::train::train;
use super::{io_err, HarnessError, RunConfig};
use crate::dataset::make_folds;
use crate::metrics::EvalReport;
use crate::model::{Batch, Checkpoint, Model};
use crate::par::{self, Execution};
use crate::tensor::Tensor;

const PREDICT_CHUNK: usize = 128;

/// Predictions for every row of `inputs`, `[n, steps]`.
pub fn predict_rows(model: &Model, inputs: &Batch, exec: Execution) -> Result<Tensor, HarnessError> {
    let n = inputs.len();
    let rows: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = rows.chunks(PREDICT_CHUNK).collect();
    let parts = par::map(exec, &chunks, |rows| model.predict(&inputs.select(rows)));
    let mut data = Vec::with_capacity(n * model.config().steps);
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Ok(Tensor::new(vec![n, model.config().steps], data)?)
}

fn checked(ck: &Checkpoint, data: &Prepared) -> Result<(), HarnessError> {
    data.check_dims(ck.model.config())?;
    if data.inputs.numeric.cols() != ck.normalizer.dim() {
        return Err(HarnessError::Dims(format!(
            "{} numeric features, checkpoint normalizer has {}",
            data.inputs.numeric.cols(),
            ck.normalizer.dim()
        )));
    }
    Ok(())
}

/// Predictions for all samples of `data`.
pub fn predict(ck: &Checkpoint, data: &Prepared, exec: Execution) -> Result<Tensor, HarnessError> {
    checked(ck, data)?;
    predict_rows(&ck.model, &data.batch(&data.all_rows(), &ck.normalizer), exec)
}

pub fn evaluate_rows(
    ck: &Checkpoint,
    data: &Prepared,
    rows: &[usize],
    exec: Execution,
) -> Result<EvalReport, HarnessError> {
    checked(ck, data)?;
    let first_day = ck.model.config().first_day();
    let pred = predict_rows(&ck.model, &data.batch(rows, &ck.normalizer), exec)?;
    let truth = data.targets(rows, first_day);
    if truth.data().iter().any(|x| !x.is_finite()) {
        return Err(HarnessError::Config("evaluation requires complete 30-day view series".into()));
    }
    Ok(EvalReport::compute(&pred, &truth, first_day)?)
}

pub fn evaluate(ck: &Checkpoint, data: &Prepared, exec: Execution) -> Result<EvalReport, HarnessError> {
    evaluate_rows(ck, data, &data.all_rows(), exec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub reports: Vec<EvalReport>,
    pub amae_mean: f64,
    /// Population standard deviation over folds.
    pub amae_std: f64,
    pub asrc_mean: f64,
    pub asrc_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvSummary {
    pub fn from_reports(reports: Vec<EvalReport>) -> Self {
        let (amae_mean, amae_std) = mean_std(&reports.iter().map(|r| r.amae).collect::<Vec<_>>());
        let (asrc_mean, asrc_std) = mean_std(&reports.iter().map(|r| r.asrc).collect::<Vec<_>>());
        CvSummary {
            reports,
            amae_mean,
            amae_std,
            asrc_mean,
            asrc_std,
        }
    }
}

/// k-fold cross-validation. With `out`, each fold's report and curves are
/// written as soon as the fold finishes, so a later failure keeps them.
pub fn cross_validate(config: &RunConfig, data: &Prepared, out: Option<&Path>) -> Result<CvSummary, HarnessError> {
    config.validate()?;
    let split = make_folds(&data.ids, config.folds, config.seed)?;
    let index: std::collections::HashMap<&str, usize> =
        data.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut reports = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let held: HashSet<usize> = split.fold(&data.ids, fold).iter().map(|id| index[id.as_str()]).collect();
        let train_rows: Vec<usize> = (0..data.len()).filter(|i| !held.contains(i)).collect();
        let mut test_rows: Vec<usize> = held.into_iter().collect();
        test_rows.sort_unstable();
        let mut fold_config = config.clone();
        fold_config.seed = config.seed.wrapping_add(fold as u64);
        let outcome = train(&fold_config, data, &train_rows)?;
        let report = evaluate_rows(&outcome.best, data, &test_rows, config.execution)?;
        log::info!("fold {fold}: AMAE {:.4} ASRC {:.4}", report.amae, report.asrc);
        if let Some(dir) = out {
            let fold_dir = dir.join(format!("fold{fold}"));
            std::fs::create_dir_all(&fold_dir).map_err(io_err(&fold_dir))?;
            write_json(&fold_dir.join("eval.json"), &report)?;
            write_json(&fold_dir.join("training_log.json"), &outcome.log)?;
            write_curves(&fold_dir, &report)?;
        }
        reports.push(report);
    }
    Ok(CvSummary::from_reports(reports))
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// One `day,value` file per sample plus an `index.csv` mapping ids to files.
pub fn write_predictions(dir: &Path, ids: &[String], pred: &Tensor, first_day: usize) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = String::from("id,file\n");
    let mut used = HashSet::new();
    for (i, id) in ids.iter().enumerate() {
        let mut stem = file_stem(id);
        if !used.insert(stem.clone()) {
            stem = format!("{stem}_{i}");
            used.insert(stem.clone());
        }
        let file = format!("{stem}.csv");
        let mut csv = String::from("day,value\n");
        for (d, v) in pred.row(i).iter().enumerate() {
            csv.push_str(&format!("{},{v}\n", d + first_day));
        }
        let path = dir.join(&file);
        std::fs::write(&path, csv).map_err(io_err(&path))?;
        let id = if id.contains([',', '"', '\n']) {
            format!("\"{}\"", id.replace('"', "\"\""))
        } else {
            id.clone()
        };
        index.push_str(&format!("{id},{file}\n"));
    }
    let path = dir.join("index.csv");
    std::fs::write(&path, index).map_err(io_err(&path))
}
