//! Deterministic evaluation: no augmentation, argmax decisions.

use crate::data::{load_split, DatasetManifest, Label, Sample, Split};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;

use super::metrics::{ConfusionMatrix, EvalReport};

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Softmax probabilities indexed by [`Label::index`].
    pub probs: [f64; 2],
    /// Cross-entropy against the true label.
    pub loss: f64,
}

/// Log-softmax in f64 from `f32` logits.
fn log_probs(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max
        + row
            .iter()
            .map(|&v| (v as f64 - max).exp())
            .sum::<f64>()
            .ln();
    row.iter().map(|&v| v as f64 - lse).collect()
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

pub fn predict_samples(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(|s| s.pixels.clone()).collect();
        let logits = model.logits(Tensor::stack(&images)?)?;
        let k = logits.shape()[1];
        if k != 2 {
            return Err(Error::Contract(format!(
                "binary evaluation needs 2 logits, model has {k}"
            )));
        }
        for (row, s) in logits.data().chunks(k).zip(chunk) {
            let lp = log_probs(row);
            let label = Label::from_index(argmax(row)).expect("two classes");
            out.push(Prediction {
                label,
                probs: [lp[0].exp(), lp[1].exp()],
                loss: -lp[s.label.index()],
            });
        }
    }
    Ok(out)
}

/// Full report over `samples`.
pub fn evaluate(model: &Model<f32>, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let preds = predict_samples(model, samples)?;
    let mut cm = ConfusionMatrix::default();
    let mut loss = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        cm.record(p.label.index(), s.label.index());
        loss += p.loss;
    }
    EvalReport::new(cm, loss / samples.len() as f64)
}

/// Loads `split` from the manifest and evaluates it.
pub fn evaluate_split(
    model: &Model<f32>,
    manifest: &DatasetManifest,
    split: Split,
    rescale: f64,
) -> Result<EvalReport> {
    let samples = load_split(manifest, split, rescale)?;
    if samples.is_empty() {
        return Err(Error::Contract(format!("split {split} has no images")));
    }
    evaluate(model, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_probs_normalize() {
        let lp = log_probs(&[1.0, 3.0]);
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-15);
        assert!((lp[1] - (-(1.0 + (-2.0f64).exp()).ln())).abs() < 1e-15);
        let lp = log_probs(&[1000.0, -1000.0]);
        assert!(lp[0].abs() < 1e-12 && lp[1].is_finite());
    }

    #[test]
    fn argmax_first_tie_wins() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7]), 1);
    }
}
