//! Mini-batch training loop shared by every trainable model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::encoder::ClassifierWeights;
use super::loss::FocalConfig;
use super::optim::{adam_step, AdamState, TrainConfig};
use super::tensor::Trainable;
use crate::error::Result;
use crate::scalar::Scalar;

/// Salt separating the data-order stream from the initialization stream.
const DATA_STREAM: u64 = 0x5eed_da7a;

/// Random stream for shuffling and negative sampling under `seed`.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ DATA_STREAM)
}

/// Random stream for parameter initialization under `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: f64,
    pub skipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
    pub best_validation: f64,
    pub steps: usize,
}

/// Trains `model` and leaves it at the best-validating epoch.
///
/// * `epoch_data` yields the examples of an epoch (negatives may be resampled
///   from the supplied rng); they are shuffled before batching.
/// * `batch_loss` returns the mean loss of a batch and accumulates the mean
///   gradient into its third argument, or `None` to skip the batch.
/// * `validate` scores a checkpoint; higher is better, earliest epoch wins ties.
pub fn fit<S, M, E>(
    model: &mut M,
    cfg: &TrainConfig,
    mut epoch_data: impl FnMut(usize, &mut ChaCha8Rng) -> Vec<E>,
    mut batch_loss: impl FnMut(&M, &[E], &mut M) -> Result<Option<S>>,
    mut validate: impl FnMut(&M) -> f64,
) -> Result<TrainReport>
where
    S: Scalar,
    M: Trainable<S> + Clone,
{
    cfg.validate()?;
    let mut rng = data_rng(cfg.seed);
    let mut state = AdamState::new();
    let mut step = 0;
    let mut best: Option<(f64, usize, M)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut examples = epoch_data(epoch, &mut rng);
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for batch in examples.chunks(cfg.batch_size) {
            let mut grads = model.zeros_like();
            match batch_loss(model, batch, &mut grads)? {
                Some(loss) => {
                    step += 1;
                    adam_step(model, &grads, &mut state, step, cfg)?;
                    total += loss.as_f64();
                    batches += 1;
                }
                None => skipped += 1,
            }
        }
        let score = validate(model);
        epochs.push(EpochRecord {
            epoch,
            mean_loss: if batches == 0 { 0.0 } else { total / batches as f64 },
            validation: score,
            skipped_batches: skipped,
        });
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.clone()));
        }
    }

    let (best_validation, best_epoch, best_model) = best.expect("at least one epoch");
    *model = best_model;
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_validation,
        steps: step,
    })
}

/// A token-id input with its binary label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryExample {
    pub ids: Vec<usize>,
    pub label: bool,
}

/// Focal-loss training of an encoder + head classifier.
pub fn train_binary<S: Scalar>(
    model: &mut ClassifierWeights<S>,
    cfg: &TrainConfig,
    focal: &FocalConfig,
    epoch_data: impl FnMut(usize, &mut ChaCha8Rng) -> Vec<BinaryExample>,
    validate: impl FnMut(&ClassifierWeights<S>) -> f64,
) -> Result<TrainReport> {
    focal.validate()?;
    let gamma = S::lit(focal.gamma);
    fit(
        model,
        cfg,
        epoch_data,
        |m: &ClassifierWeights<S>, batch: &[BinaryExample], grads: &mut ClassifierWeights<S>| {
            let mut loss = S::zero();
            for ex in batch {
                loss += m.loss_and_grad(&ex.ids, ex.label, gamma, grads);
            }
            let inv = S::one() / S::lit(batch.len() as f64);
            grads.tensors_mut().into_iter().for_each(|t| t.scale(inv));
            Ok(Some(loss * inv))
        },
        validate,
    )
}
