//! Optimization loop and evaluation.

mod adam;
mod metrics;

pub use adam::{adam_step, clip_gradients, AdamState, LrMap};
pub use metrics::{evaluate, evaluate_with, predict_all, selected_fraction, Metrics, SELECT_THRESHOLD};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{sample_gradients, ForwardOptions, ModelParams, ParamGrads};
use crate::pooling::FeatureSequence;
use crate::rng::mix_seed;
use crate::scalar::Scalar;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub mean_selected_fraction: Option<f64>,
    pub signal_gap: Option<f64>,
    pub mean_loss: f64,
}

impl EpochRecord {
    pub fn new(epoch: usize, split: &str, m: &Metrics) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            accuracy: m.accuracy,
            mean_selected_fraction: m.mean_selected_fraction,
            signal_gap: m.signal_gap,
            mean_loss: m.mean_loss,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub params: ModelParams<S>,
    /// Epoch 0 is the untrained model; each epoch logs `train` then `test`.
    pub log: Vec<EpochRecord>,
}

/// Mean loss and mean gradient over `batch`, summed in batch order.
///
/// `dropout_seed(i)` supplies the dropout stream of the `i`-th batch entry.
pub fn batch_gradient<S: Scalar>(
    batch: &[&FeatureSequence<S>],
    params: &ModelParams<S>,
    train: bool,
    dropout_seed: impl Fn(usize) -> u64 + Sync,
) -> Result<(S, ParamGrads<S>)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let outcomes = batch
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let opts = ForwardOptions {
                train,
                dropout_seed: dropout_seed(i),
                importance_override: None,
            };
            sample_gradients(seq, params, &opts).map_err(|e| with_sample(e, &seq.id))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = ParamGrads::zeros_like(params);
    let mut loss = S::zero();
    for (o, seq) in outcomes.iter().zip(batch) {
        if !o.loss.is_finite() {
            return Err(Error::non_finite(format!("loss of sample '{}'", seq.id)));
        }
        total.add_assign(&o.grads)?;
        loss = loss + o.loss;
    }
    let inv = S::one() / S::of(batch.len() as f64);
    total.scale(inv);
    Ok((loss * inv, total))
}

pub(crate) fn with_sample(e: Error, id: &str) -> Error {
    match e {
        Error::NonFinite { context } => Error::non_finite(format!("{context} (sample '{id}')")),
        other => other,
    }
}

/// Trains `params` with Adam on `train`, logging eval-mode metrics on both
/// splits after every epoch. Deterministic given `rng_seed`.
pub fn train<S: Scalar>(
    train: &Dataset<S>,
    test: Option<&Dataset<S>>,
    mut params: ModelParams<S>,
    rng_seed: u64,
) -> Result<TrainOutcome<S>> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    for ds in std::iter::once(train).chain(test) {
        if ds.feat_dim != params.dims.feat_dim || ds.num_classes > params.dims.num_classes {
            return Err(Error::contract(format!(
                "dataset (D = {}, C = {}) does not fit the model (D = {}, C = {})",
                ds.feat_dim, ds.num_classes, params.dims.feat_dim, params.dims.num_classes
            )));
        }
    }
    let hyper = params.hyper.clone();
    let lr = LrMap::from_hyper(&hyper);
    let clip = S::of(hyper.clip_norm);
    let mut adam = AdamState::for_model(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();

    let log_epoch = |epoch: usize, params: &ModelParams<S>, log: &mut Vec<EpochRecord>| -> Result<()> {
        log.push(EpochRecord::new(epoch, "train", &evaluate(train, params)?));
        if let Some(t) = test {
            log.push(EpochRecord::new(epoch, "test", &evaluate(t, params)?));
        }
        Ok(())
    };
    log_epoch(0, &params, &mut log)?;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let epoch_seed = mix_seed(rng_seed, epoch as u64);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&FeatureSequence<S>> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let (_, mut grads) = batch_gradient(&batch, &params, true, |i| mix_seed(epoch_seed, chunk[i] as u64))?;
            clip_gradients(&mut grads.blocks, clip)?;
            adam_step(&mut params, &grads, &mut adam, lr)?;
        }
        log_epoch(epoch, &params, &mut log)?;
    }
    Ok(TrainOutcome { params, log })
}
