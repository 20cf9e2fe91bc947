use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::model::{predict, ForwardOptions, ModelParams, Prediction};
use crate::scalar::Scalar;

/// Importance above which a frame counts as selected.
pub const SELECT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean over samples of the fraction of frames with `γ > 0.5`.
    /// Only defined for the adaptive pooler.
    pub mean_selected_fraction: Option<f64>,
    /// Mean predicted `γ` on signal frames minus mean on distractor frames.
    /// Needs signal masks; the fixed first frame is left out.
    pub signal_gap: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub mean_loss: f64,
}

/// Fraction of `gammas` strictly above [`SELECT_THRESHOLD`].
pub fn selected_fraction<S: Scalar>(gammas: &[S]) -> f64 {
    let selected = gammas.iter().filter(|g| g.as_f64() > SELECT_THRESHOLD).count();
    selected as f64 / gammas.len() as f64
}

/// Eval-mode predictions for every sample, in dataset order.
pub fn predict_all<S: Scalar>(
    dataset: &Dataset<S>,
    params: &ModelParams<S>,
    opts: &ForwardOptions,
) -> Result<Vec<Prediction<S>>> {
    dataset
        .samples
        .par_iter()
        .map(|s| predict(s, params, opts).map_err(|e| super::with_sample(e, &s.id)))
        .collect()
}

pub fn evaluate<S: Scalar>(dataset: &Dataset<S>, params: &ModelParams<S>) -> Result<Metrics> {
    evaluate_with(dataset, params, &ForwardOptions::eval())
}

/// Like [`evaluate`], with explicit forward options (dropout is always off).
pub fn evaluate_with<S: Scalar>(
    dataset: &Dataset<S>,
    params: &ModelParams<S>,
    opts: &ForwardOptions,
) -> Result<Metrics> {
    let opts = ForwardOptions {
        train: false,
        ..opts.clone()
    };
    let preds = predict_all(dataset, params, &opts)?;
    Ok(summarize(dataset, &preds))
}

pub(crate) fn summarize<S: Scalar>(dataset: &Dataset<S>, preds: &[Prediction<S>]) -> Metrics {
    let c = dataset.num_classes;
    let mut correct = 0usize;
    let mut class_hits = vec![0usize; c];
    let mut class_total = vec![0usize; c];
    let mut loss = 0.0;
    let mut fractions = Vec::new();
    let (mut sig_sum, mut sig_n, mut dis_sum, mut dis_n) = (0.0, 0usize, 0.0, 0usize);

    for (s, p) in dataset.samples.iter().zip(preds) {
        class_total[s.label] += 1;
        if p.predicted == s.label {
            correct += 1;
            class_hits[s.label] += 1;
        }
        loss += p.loss.as_f64();
        if let Some(g) = &p.gammas {
            fractions.push(selected_fraction(g));
            if let Some(mask) = s.signal_mask() {
                for (&gt, &is_signal) in g.iter().zip(mask).skip(1) {
                    if is_signal {
                        sig_sum += gt.as_f64();
                        sig_n += 1;
                    } else {
                        dis_sum += gt.as_f64();
                        dis_n += 1;
                    }
                }
            }
        }
    }
    let n = dataset.len().max(1) as f64;
    Metrics {
        accuracy: correct as f64 / n,
        mean_selected_fraction: (!fractions.is_empty())
            .then(|| fractions.iter().sum::<f64>() / fractions.len() as f64),
        signal_gap: (sig_n > 0 && dis_n > 0).then(|| sig_sum / sig_n as f64 - dis_sum / dis_n as f64),
        per_class_accuracy: class_hits
            .iter()
            .zip(&class_total)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        mean_loss: loss / n,
    }
}
