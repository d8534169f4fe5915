use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-wise softmax of `[N, K]` logits, stabilized by max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let exps: Vec<T> = row.iter().map(|v| (*v - max).exp()).collect();
        let total = exps.iter().fold(T::zero(), |a, v| a + *v);
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for a batch of {n}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label {
                label: bad,
                classes: k,
            });
        }
        let z = self.value(logits).data();
        let mut total = T::zero();
        for (row, &label) in z.chunks(k).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
            let lse = row.iter().fold(T::zero(), |a, v| a + (*v - max).exp()).ln() + max;
            total += lse - row[label];
        }
        let loss = total / T::of(n as f64);
        let probs = softmax_rows(z, k);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }
}

pub(super) fn softmax_ce_backward<T: Scalar>(
    g: &[T],
    logits: Var,
    probs: &[T],
    labels: &[usize],
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(logits) {
        return;
    }
    let n = labels.len();
    let k = probs.len() / n;
    let scale = g[0] / T::of(n as f64);
    let mut d: Vec<T> = probs.iter().map(|p| *p * scale).collect();
    for (i, &label) in labels.iter().enumerate() {
        d[i * k + label] -= scale;
    }
    sink.add_owned(logits, d);
}
