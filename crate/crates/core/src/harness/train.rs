use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Prepared, Split};
use super::evaluate::predict_rows;
use super::{HarnessError, RunConfig};
use crate::loss::{cgl_on_tape, LossReport, LossWeights};
use crate::metrics::EvalReport;
use crate::model::{Batch, Checkpoint, Model};
use crate::optim::{Adam, Plateau};
use crate::par::{self, Execution};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub train: LossReport,
    pub val: EvalReport,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timestamps(&self) -> TrainingLog {
        let mut log = self.clone();
        log.epochs.iter_mut().for_each(|e| e.wall_clock_s = 0.0);
        log
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation AMAE.
    pub best: Checkpoint,
    /// Parameters after the last epoch.
    pub last: Checkpoint,
    pub log: TrainingLog,
    pub split: Split,
}

/// Mean CGL and its parameter gradients over `rows` of `inputs`.
///
/// Rows are cut into chunks of `chunk` samples, each with its own tape.
/// Chunk results are weighted by their share of the batch and summed in
/// chunk order, so the result does not depend on `exec`.
pub fn batch_gradient(
    model: &Model,
    inputs: &Batch,
    targets: &Tensor,
    rows: &[usize],
    w: &LossWeights,
    exec: Execution,
    chunk: usize,
) -> Result<(LossReport, Vec<Tensor>), HarnessError> {
    let chunks: Vec<&[usize]> = rows.chunks(chunk.max(1)).collect();
    let results = par::map(exec, &chunks, |rows| -> Result<_, HarnessError> {
        let batch = inputs.select(rows);
        let mut tape = Tape::new();
        let vars = model.place(&mut tape);
        let pred = model.forward(&mut tape, &vars, &batch)?;
        let target = tape.constant(targets.select_rows(rows));
        let (loss, report) = cgl_on_tape(&mut tape, pred, target, w)?;
        tape.backward(loss)?;
        Ok((report, model.collect_grads(&tape, &vars)))
    });
    let total = rows.len() as f64;
    let mut report = LossReport::default();
    let mut grads: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    for (rows, result) in chunks.iter().zip(results) {
        let (r, g) = result?;
        let share = rows.len() as f64 / total;
        report.accumulate(&r, share);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_scaled(gi, share)?;
        }
    }
    Ok((report, grads))
}

fn column_means(t: &Tensor) -> Vec<f64> {
    let (n, s) = (t.rows(), t.cols());
    (0..s).map(|d| (0..n).map(|i| t.at(i, d)).sum::<f64>() / n as f64).collect()
}

/// Trains on `rows` of `data`, holding out a validation share per `config`.
pub fn train(config: &RunConfig, data: &Prepared, rows: &[usize]) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    data.check_dims(&config.model)?;
    let split = Split::holdout(rows, config.val_fraction, config.seed)?;
    let first_day = config.model.first_day();
    let normalizer = data.fit_normalizer(&split.train)?;
    let train_inputs = data.batch(&split.train, &normalizer);
    let train_targets = data.targets(&split.train, first_day);
    let val_inputs = data.batch(&split.val, &normalizer);
    let val_targets = data.targets(&split.val, first_day);
    if train_targets.data().iter().chain(val_targets.data()).any(|x| !x.is_finite()) {
        return Err(HarnessError::Config("training requires complete 30-day view series".into()));
    }

    let mut model = Model::new(config.model.clone(), config.seed)?;
    model.set_output_bias(&column_means(&train_targets))?;
    let mut adam = Adam::new(config.optim.clone(), model.params());
    let mut plateau = Plateau::new(config.plateau.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    let mut log = TrainingLog {
        seed: config.seed,
        train_samples: split.train.len(),
        val_samples: split.val.len(),
        ..TrainingLog::default()
    };
    let mut best: Option<(f64, Model)> = None;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let weights = LossWeights::at_epoch(&config.loss, epoch, config.epochs);
        let lr = adam.lr;
        order.shuffle(&mut rng);
        let mut epoch_report = LossReport::default();
        for batch in order.chunks(config.batch_size) {
            let (report, grads) = batch_gradient(
                &model,
                &train_inputs,
                &train_targets,
                batch,
                &weights,
                config.execution,
                config.chunk_size,
            )?;
            let finite = report.total.is_finite() && grads.iter().all(|g| g.data().iter().all(|x| x.is_finite()));
            if !finite {
                return Err(HarnessError::Numerical {
                    epoch,
                    reason: format!("non-finite loss {}", report.total),
                    ids: batch.iter().map(|&i| data.ids[split.train[i]].clone()).collect(),
                });
            }
            epoch_report.accumulate(&report, batch.len() as f64 / order.len() as f64);
            let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().collect();
            adam.step(&mut params, &grads)?;
            model.params_mut().iter_mut().for_each(Tensor::round_to_f32);
        }

        let pred = predict_rows(&model, &val_inputs, config.execution)?;
        let val = EvalReport::compute(&pred, &val_targets, first_day)?;
        if !val.amae.is_finite() {
            return Err(HarnessError::Numerical {
                epoch,
                reason: format!("validation AMAE is {}", val.amae),
                ids: split.val.iter().map(|&i| data.ids[i].clone()).collect(),
            });
        }
        adam.lr = plateau.update(val.amae, lr)?;
        if best.as_ref().is_none_or(|(b, _)| val.amae < *b) {
            best = Some((val.amae, model.clone()));
            log.best_epoch = epoch;
        }
        log::info!(
            "epoch {epoch}: loss {:.5} val AMAE {:.4} ASRC {:.4} lr {lr:.2e}",
            epoch_report.total,
            val.amae,
            val.asrc
        );
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train: epoch_report,
            val,
            wall_clock_s: started.elapsed().as_secs_f64(),
        });
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            normalizer: normalizer.clone(),
        },
        last: Checkpoint { model, normalizer },
        log,
        split,
    })
}
