//! Mini-batch Adam training with dev-based model selection.
//!
//! Each epoch visits the training instances in a seeded Fisher–Yates order.
//! Per-instance gradients inside a batch are computed in parallel and summed
//! in batch order before one Adam step, so runs are bit-reproducible.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::head::Prediction;
use crate::metrics::{format_r, EvalReport, InstancePrediction};
use crate::model::{EfpModel, PreparedInstance};
use crate::optim::Adam;
use crate::tensor::Tensor;

/// Offset mixed into the run seed for the shuffling stream so it differs
/// from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance Huber loss over the epoch.
    pub train_loss: f64,
    pub dev_mae: f64,
    pub dev_r: Option<f64>,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.epoch,
            self.train_loss,
            self.dev_mae,
            format_r(self.dev_r)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest dev MAE.
    pub model: EfpModel,
    /// Parameters after the last epoch that ran.
    pub last_model: EfpModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_mae: f64,
}

impl TrainOutcome {
    /// One line per epoch, tab separated.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for r in &self.log {
            writeln!(s, "{}", r.log_line()).unwrap();
        }
        s
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    best_epoch: usize,
    best_dev_mae: f64,
    epochs_run: usize,
    test: Option<TestSummary>,
}

#[derive(Debug, Serialize)]
struct TestSummary {
    mae: f64,
    pearson_r: Option<f64>,
    n: usize,
}

/// The closing JSON record of a training log.
pub fn summary_json(outcome: &TrainOutcome, test: Option<&EvalReport>) -> String {
    let summary = Summary {
        best_epoch: outcome.best_epoch,
        best_dev_mae: outcome.best_dev_mae,
        epochs_run: outcome.log.len(),
        test: test.map(|t| TestSummary {
            mae: t.mae,
            pearson_r: t.pearson_r,
            n: t.n,
        }),
    };
    serde_json::to_string(&summary).expect("summary serializes")
}

/// Sum of per-instance gradients and losses over `batch`, merged in order.
pub fn batch_gradients(
    model: &EfpModel,
    batch: &[&PreparedInstance],
    delta: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let results: Vec<_> = batch
        .par_iter()
        .map(|inst| model.instance_gradients(inst, delta))
        .collect();
    let mut total = 0.0;
    let mut sum: Vec<Tensor> = model
        .params()
        .values()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        for (acc, g) in sum.iter_mut().zip(&grads) {
            acc.add_assign(g)?;
        }
    }
    Ok((total, sum))
}

pub fn train(
    mut model: EfpModel,
    cfg: &TrainConfig,
    train_set: &[PreparedInstance],
    dev_set: &[PreparedInstance],
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if dev_set.is_empty() {
        return Err(Error::Config("dev split is empty".into()));
    }
    cfg.validate()?;
    let mut adam = Adam::from_config(model.params(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, EfpModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedInstance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, cfg.huber_delta)?;
            epoch_loss += loss;
            adam.step(model.params_mut(), &mut grads)?;
        }
        let dev = evaluate(&model, dev_set, cfg.clip_eval)?;
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            dev_mae: dev.mae,
            dev_r: dev.pearson_r,
        });
        if best.as_ref().is_none_or(|(_, b, _)| dev.mae < *b) {
            best = Some((epoch, dev.mae, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_dev_mae, best_model) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model: best_model,
        last_model: model,
        log,
        best_epoch,
        best_dev_mae,
    })
}

/// Predictions for every instance, optionally clipped to the score range.
pub fn predict_all(
    model: &EfpModel,
    instances: &[PreparedInstance],
    clip: bool,
) -> Result<Vec<InstancePrediction>> {
    let preds: Vec<_> = instances
        .par_iter()
        .map(|inst| model.predict(inst))
        .collect();
    preds
        .into_iter()
        .zip(instances)
        .map(|(p, inst)| {
            let Prediction { score, attention } = p?;
            let pred = if clip {
                score.clamp(crate::corpus::MIN_SCORE, crate::corpus::MAX_SCORE)
            } else {
                score
            };
            Ok(InstancePrediction {
                sentence_id: inst.sentence_id.clone(),
                anchor_index: inst.anchor,
                gold: inst.gold,
                pred,
                attention,
            })
        })
        .collect()
}

pub fn evaluate(
    model: &EfpModel,
    instances: &[PreparedInstance],
    clip: bool,
) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::Tensor(crate::tensor::TensorError::Contract(
            "cannot evaluate on an empty instance list".into(),
        )));
    }
    EvalReport::from_predictions(predict_all(model, instances, clip)?)
}
