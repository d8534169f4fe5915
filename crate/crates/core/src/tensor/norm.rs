//! Per-channel batch normalization over `[N, C, H, W]`.

use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Statistics of one training batch, per channel.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (divided by N·H·W).
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    /// Exponential update with `BN_MOMENTUM`; the running variance tracks the
    /// unbiased estimate.
    pub fn update(&self, running: &mut RunningStats<T>) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        let correction = T::of(self.count as f64 / (self.count as f64 - 1.0));
        for c in 0..self.mean.len() {
            running.mean[c] = keep * running.mean[c] + m * self.mean[c];
            running.var[c] = keep * running.var[c] + m * self.var[c] * correction;
        }
    }
}

pub enum BnMode<'a, T> {
    /// Normalize with batch statistics and fold them into the running stats.
    Train(&'a mut RunningStats<T>),
    /// Normalize with the running stats.
    Eval(&'a RunningStats<T>),
}

impl<T: Scalar> Tape<T> {
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("batch_norm2d")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(
                    "batch_norm2d",
                    format!(
                        "{name} shape {:?} does not match {c} channels",
                        self.value(v).shape()
                    ),
                ));
            }
        }
        let plane = h * w;
        let count = n * plane;
        let xd = x.data();
        let (mean, var, batch_stats) = match &mode {
            BnMode::Train(_) => {
                if count < 2 {
                    return Err(Error::DegenerateBatch {
                        op: "batch_norm2d",
                        count,
                    });
                }
                let stats = parallel::map_range(c, |ch| {
                    let mut sum = 0.0f64;
                    for s in 0..n {
                        sum += xd[(s * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for s in 0..n {
                        sq += xd[(s * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    (T::of(mean), T::of(sq / count as f64))
                });
                let (mean, var): (Vec<T>, Vec<T>) = stats.into_iter().unzip();
                (mean, var, true)
            }
            BnMode::Eval(running) => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(Error::shape(
                        "batch_norm2d",
                        format!(
                            "running stats hold {} channels, input has {c}",
                            running.mean.len()
                        ),
                    ));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let eps = T::of(BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();

        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        parallel::for_each_chunk_mut(&mut xhat, plane, |idx, dst| {
            let ch = idx % c;
            let src = &xd[idx * plane..][..plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = (*v - mean[ch]) * inv_std[ch];
            }
        });
        parallel::for_each_chunk_mut(&mut out, plane, |idx, dst| {
            let ch = idx % c;
            let src = &xhat[idx * plane..][..plane];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = gd[ch] * *v + bd[ch];
            }
        });

        if let BnMode::Train(running) = mode {
            BatchStats { mean, var, count }.update(running);
        }

        let value = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<T: Scalar>(
    g: &[T],
    (input, x): (Var, &Tensor<T>),
    (gamma, gv): (Var, &Tensor<T>),
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    sink: &mut GradSink<'_, T>,
) {
    let [n, c, h, w] = x.dims4("batch_norm2d").expect("checked in forward");
    let plane = h * w;
    let count = T::of((n * plane) as f64);
    let sums = parallel::map_range(c, |ch| {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for (gv, xv) in g[off..][..plane].iter().zip(&xhat[off..][..plane]) {
                sg += *gv;
                sgx += *gv * *xv;
            }
        }
        (sg, sgx)
    });
    if sink.wants(beta) {
        sink.add_owned(beta, sums.iter().map(|s| s.0).collect());
    }
    if sink.wants(gamma) {
        sink.add_owned(gamma, sums.iter().map(|s| s.1).collect());
    }
    if sink.wants(input) {
        let gd = gv.data();
        let mut dx = vec![T::zero(); x.numel()];
        parallel::for_each_chunk_mut(&mut dx, plane, |idx, dst| {
            let ch = idx % c;
            let off = idx * plane;
            let scale = gd[ch] * inv_std[ch];
            let gs = &g[off..][..plane];
            if batch_stats {
                let (sg, sgx) = sums[ch];
                let xs = &xhat[off..][..plane];
                for ((d, gv), xv) in dst.iter_mut().zip(gs).zip(xs) {
                    *d = scale * (*gv - (sg + *xv * sgx) / count);
                }
            } else {
                for (d, gv) in dst.iter_mut().zip(gs) {
                    *d = scale * *gv;
                }
            }
        });
        sink.add_owned(input, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let [n, c, h, w] = t.dims4("test").unwrap();
        let plane = h * w;
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| t.data()[(s * c + ch) * plane..][..plane].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn train_output_has_beta_mean_and_gamma_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..64 * 3 * 8 * 8)
            .map(|_| rng.gen::<f64>() * 5.0 + 2.0)
            .collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[64, 3, 8, 8], data).unwrap());
        let gamma = tape.constant(Tensor::new(&[3], vec![2.0, -0.5, 1.0]).unwrap());
        let beta = tape.constant(Tensor::new(&[3], vec![0.3, -1.0, 4.0]).unwrap());
        let mut stats = RunningStats::new(3);
        let y = tape
            .batch_norm2d(x, gamma, beta, BnMode::Train(&mut stats))
            .unwrap();
        for (ch, (g, b)) in [(2.0f64, 0.3), (-0.5, -1.0), (1.0, 4.0)].iter().enumerate() {
            let (m, s) = channel_moments(tape.value(y), ch);
            assert!((m - b).abs() < 1e-4, "mean {m} vs {b}");
            assert!((s - g.abs()).abs() < 1e-4, "std {s} vs {g}");
        }
        // running mean moved 10% of the way toward the batch mean (about 4.5)
        assert!(stats.mean.iter().all(|m| (m - 0.45).abs() < 0.05));
    }

    #[test]
    fn standardized_input_is_fixed_point() {
        // two samples per channel at ±1: mean 0, biased variance 1
        let data: Vec<f64> = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 1, 2, 2], data.clone()).unwrap());
        let gamma = tape.constant(Tensor::new(&[1], vec![1.0]).unwrap());
        let beta = tape.constant(Tensor::new(&[1], vec![0.0]).unwrap());
        let mut stats = RunningStats::new(1);
        let y = tape
            .batch_norm2d(x, gamma, beta, BnMode::Train(&mut stats))
            .unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn single_value_batch_is_degenerate() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1, 1]).unwrap());
        let gamma = tape.constant(Tensor::full(&[2], 1.0).unwrap());
        let beta = tape.constant(Tensor::zeros(&[2]).unwrap());
        let mut stats = RunningStats::new(2);
        assert!(matches!(
            tape.batch_norm2d(x, gamma, beta, BnMode::Train(&mut stats)),
            Err(Error::DegenerateBatch { .. })
        ));
        // eval mode has no such restriction
        assert!(tape
            .batch_norm2d(x, gamma, beta, BnMode::Eval(&stats))
            .is_ok());
    }
}
