use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use crate::datagen::{corrupt, MultimodalBatch, NoiseSpec, SyntheticSplits};
use crate::metrics::{
    accuracy, conflict_resolution_rate, delta_omega, ConflictStats, ConvergenceTrace,
    CovarianceRecord,
};
use crate::model::{LossReport, ModelConfig, ModelOptions, Optimizer, PdfModel};
use crate::{seeding, Result};

/// Mean training losses and validation diagnostics after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossReport,
    pub val_accuracy: f64,
    pub delta_omega: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PdfModel,
    pub log: Vec<EpochLog>,
    pub trace: ConvergenceTrace,
}

fn accumulate(acc: &mut Option<LossReport>, r: &LossReport, weight: f64) {
    match acc {
        None => {
            *acc = Some(LossReport {
                fused_ce: r.fused_ce * weight,
                unimodal_ce: r.unimodal_ce.iter().map(|v| v * weight).collect(),
                predictor_mse: r.predictor_mse.iter().map(|v| v * weight).collect(),
                predictor_loss: r.predictor_loss * weight,
                total: r.total * weight,
            })
        }
        Some(a) => {
            a.fused_ce += r.fused_ce * weight;
            a.unimodal_ce
                .iter_mut()
                .zip(&r.unimodal_ce)
                .for_each(|(x, v)| *x += v * weight);
            a.predictor_mse
                .iter_mut()
                .zip(&r.predictor_mse)
                .for_each(|(x, v)| *x += v * weight);
            a.predictor_loss += r.predictor_loss * weight;
            a.total += r.total * weight;
        }
    }
}

/// Trains one model on `splits.train`; a pure function of its arguments.
pub fn train_model(
    splits: &SyntheticSplits,
    options: &ModelOptions,
    training: &TrainingConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    training.validate()?;
    let config = ModelConfig::new(splits.train.dims(), splits.train.classes(), options.clone());
    let mut model = PdfModel::new(config, &mut seeding::rng(seed, "init", 0))?;
    let mut optimizer = Optimizer::new(&model, training.adam(), training.predictor_lr)?;
    let mut shuffle_rng = seeding::rng(seed, "shuffle", 0);
    let mut dropout_rng = seeding::rng(seed, "dropout", 0);
    let mut augment_rng = seeding::rng(seed, "augment", 0);

    let train = &splits.train;
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut prev_weights = model.evaluate(&splits.val)?.weights();
    let mut log = Vec::with_capacity(training.epochs);
    let mut trace = ConvergenceTrace::default();

    for epoch in 0..training.epochs {
        optimizer.epoch = epoch;
        optimizer.lr_scale = training.lr_scale(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut sum: Option<LossReport> = None;
        for chunk in order.chunks(training.batch_size) {
            let mut batch = train.select(chunk);
            let aug = &training.augment;
            if aug.probability > 0.0 && augment_rng.random::<f64>() < aug.probability {
                let noise = NoiseSpec {
                    kind: aug.kind,
                    degree: augment_rng.random::<f64>() * aug.max_degree,
                    modality_fraction: aug.modality_fraction,
                    seed: augment_rng.random(),
                };
                batch = corrupt(&batch, &noise, &splits.bounds)?;
            }
            let report = model.train_step(&batch, &mut optimizer, Some(&mut dropout_rng))?;
            accumulate(&mut sum, &report, chunk.len() as f64 / n as f64);
        }
        let val = model.evaluate(&splits.val)?;
        let weights = val.weights();
        let d = delta_omega(&prev_weights, &weights)?;
        prev_weights = weights;
        trace.push(d);
        log.push(EpochLog {
            epoch: epoch + 1,
            loss: sum.expect("training split is never empty"),
            val_accuracy: accuracy(&val.predictions(), splits.val.labels())?,
            delta_omega: d,
        });
    }
    Ok(TrainOutcome { model, log, trace })
}

/// The test split corrupted for one run; the draw depends on the noise seed
/// and the run seed only.
pub fn noisy_split(
    splits: &SyntheticSplits,
    noise: &NoiseSpec,
    run_seed: u64,
) -> Result<MultimodalBatch> {
    let seeded = NoiseSpec {
        seed: seeding::derive(noise.seed, "test-noise", run_seed),
        ..*noise
    };
    corrupt(&splits.test, &seeded, &splits.bounds)
}

/// Metrics of one model on one evaluation batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub modality_accuracy: Vec<f64>,
    pub conflict: ConflictStats,
    pub covariance: CovarianceRecord,
    pub aggregate_covariance: f64,
}

pub fn evaluate(model: &PdfModel, batch: &MultimodalBatch) -> Result<Evaluation> {
    let (pred, result) = model.predict(batch)?;
    let labels = batch.labels();
    let modality_accuracy = (0..model.modality_count())
        .map(|m| accuracy(&result.modality_predictions(m), labels))
        .collect::<Result<Vec<_>>>()?;
    let covariance = CovarianceRecord::new(&result.weights(), &result.true_losses(labels)?)?;
    Ok(Evaluation {
        accuracy: accuracy(&pred, labels)?,
        modality_accuracy,
        conflict: conflict_resolution_rate(&result.logits, &pred, labels)?,
        aggregate_covariance: covariance.aggregate(),
        covariance,
    })
}
