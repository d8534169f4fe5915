//! Central finite-difference gradient checks in double precision.
//!
//! An op under test is wrapped as `build(tape, inputs) -> output`. The probe
//! loss is `sum(output * r)` for a fixed random `r`, which exercises every
//! output element with a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Default step for central differences.
pub const STEP: f64 = 1e-3;

/// `||a - n|| / max(||a||, ||n||)`, or 0 when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Per-input relative errors plus the analytic gradients they came from.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

fn probe<F>(
    inputs: &[Tensor<f64>],
    weights: &mut Option<Vec<f64>>,
    seed: u64,
    build: &F,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars)?;
    let y = tape.value(out).data();
    let r = weights.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    });
    Ok(y.iter().zip(r.iter()).map(|(a, b)| a * b).sum())
}

/// Checks d(sum(build(inputs) * r)) / d(inputs[i]) for every `i` in `wrt`.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    wrt: &[usize],
    h: f64,
    seed: u64,
    build: F,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    probe(inputs, &mut weights, seed, &build)?;
    let r = weights.clone().expect("set by probe");

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.clone(), wrt.contains(&i)))
        .collect();
    let out = build(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let rv = tape.constant(Tensor::new(&shape, r)?);
    let weighted = tape.mul(out, rv)?;
    let loss = tape.sum(weighted);
    tape.backward(loss)?;

    let mut report = GradReport {
        errors: Vec::new(),
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for &i in wrt {
        let analytic = tape.grad(vars[i]).expect("requires grad").to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut perturbed = inputs.to_vec();
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = orig + h;
            let up = probe(&perturbed, &mut weights, seed, &build)?;
            perturbed[i].data_mut()[j] = orig - h;
            let down = probe(&perturbed, &mut weights, seed, &build)?;
            perturbed[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        report.errors.push(relative_error(&analytic, &numeric));
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}

/// Uniform values in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

/// Values bounded away from zero by `margin`, so ReLU kinks are never
/// straddled by a finite-difference step.
pub fn away_from_zero(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// A shuffled grid of distinct values `gap` apart, so max-pool winners stay
/// put under perturbation.
pub fn distinct_values(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * gap).collect();
    data.shuffle(rng);
    Tensor::new(shape, data).expect("valid shape")
}

/// One differentiable op with a randomized input generator.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradReport>,
}

fn case_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164)
}

fn conv_case(seed: u64, with_bias: bool) -> Result<GradReport> {
    let mut rng = case_rng(seed);
    let (n, c, f) = (
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
    );
    let k = rng.gen_range(1..=3);
    let (stride, padding) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
    let (h, w) = (rng.gen_range(k.max(3)..=6), rng.gen_range(k.max(3)..=6));
    let mut inputs = vec![
        random_tensor(&[n, c, h, w], -1.0, 1.0, &mut rng),
        random_tensor(&[f, c, k, k], -1.0, 1.0, &mut rng),
    ];
    if with_bias {
        inputs.push(random_tensor(&[f], -1.0, 1.0, &mut rng));
    }
    let wrt: Vec<usize> = (0..inputs.len()).collect();
    check(&inputs, &wrt, STEP, seed, move |t, v| {
        t.conv2d(v[0], v[1], v.get(2).copied(), stride, padding)
    })
}

fn bn_case(seed: u64, train: bool) -> Result<GradReport> {
    let mut rng = case_rng(seed);
    let (n, c) = (rng.gen_range(2..=3), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(1..=3), rng.gen_range(2..=3));
    let inputs = vec![
        random_tensor(&[n, c, h, w], -2.0, 2.0, &mut rng),
        random_tensor(&[c], 0.5, 1.5, &mut rng),
        random_tensor(&[c], -0.5, 0.5, &mut rng),
    ];
    let running = crate::tensor::RunningStats {
        mean: random_tensor(&[c], -0.5, 0.5, &mut rng).into_data(),
        var: random_tensor(&[c], 0.5, 2.0, &mut rng).into_data(),
    };
    check(&inputs, &[0, 1, 2], STEP, seed, move |t, v| {
        let mut stats = running.clone();
        if train {
            t.batch_norm2d(v[0], v[1], v[2], crate::tensor::BnMode::Train(&mut stats))
        } else {
            t.batch_norm2d(v[0], v[1], v[2], crate::tensor::BnMode::Eval(&stats))
        }
    })
}

fn nchw(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    ]
}

/// Every differentiable tensor op.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv2d",
            run: |s| conv_case(s, true),
        },
        OpCase {
            name: "conv2d_nobias",
            run: |s| conv_case(s, false),
        },
        OpCase {
            name: "maxpool2d",
            run: |s| {
                let mut rng = case_rng(s);
                let k = rng.gen_range(2..=3);
                let stride = rng.gen_range(1..=2);
                let shape = [
                    rng.gen_range(1..=2),
                    rng.gen_range(1..=2),
                    rng.gen_range(k..=6),
                    rng.gen_range(k..=6),
                ];
                let x = distinct_values(&shape, 0.01, &mut rng);
                check(&[x], &[0], STEP, s, move |t, v| {
                    t.maxpool2d(v[0], k, stride)
                })
            },
        },
        OpCase {
            name: "global_avg_pool",
            run: |s| {
                let mut rng = case_rng(s);
                let x = random_tensor(&nchw(&mut rng), -1.0, 1.0, &mut rng);
                check(&[x], &[0], STEP, s, |t, v| t.global_avg_pool(v[0]))
            },
        },
        OpCase {
            name: "relu",
            run: |s| {
                let mut rng = case_rng(s);
                let x = away_from_zero(&nchw(&mut rng), 0.01, &mut rng);
                check(&[x], &[0], STEP, s, |t, v| Ok(t.relu(v[0])))
            },
        },
        OpCase {
            name: "add",
            run: |s| {
                let mut rng = case_rng(s);
                let shape = nchw(&mut rng);
                let xs = [
                    random_tensor(&shape, -1.0, 1.0, &mut rng),
                    random_tensor(&shape, -1.0, 1.0, &mut rng),
                ];
                check(&xs, &[0, 1], STEP, s, |t, v| t.add(v[0], v[1]))
            },
        },
        OpCase {
            name: "mul",
            run: |s| {
                let mut rng = case_rng(s);
                let shape = nchw(&mut rng);
                let xs = [
                    random_tensor(&shape, -1.0, 1.0, &mut rng),
                    random_tensor(&shape, -1.0, 1.0, &mut rng),
                ];
                check(&xs, &[0, 1], STEP, s, |t, v| t.mul(v[0], v[1]))
            },
        },
        OpCase {
            name: "sum",
            run: |s| {
                let mut rng = case_rng(s);
                let x = random_tensor(&nchw(&mut rng), -1.0, 1.0, &mut rng);
                check(&[x], &[0], STEP, s, |t, v| Ok(t.sum(v[0])))
            },
        },
        OpCase {
            name: "concat_channels",
            run: |s| {
                let mut rng = case_rng(s);
                let [n, c, h, w] = nchw(&mut rng);
                let c2 = rng.gen_range(1..=3);
                let xs = [
                    random_tensor(&[n, c, h, w], -1.0, 1.0, &mut rng),
                    random_tensor(&[n, c2, h, w], -1.0, 1.0, &mut rng),
                ];
                check(&xs, &[0, 1], STEP, s, |t, v| t.concat_channels(v[0], v[1]))
            },
        },
        OpCase {
            name: "batch_norm2d_train",
            run: |s| bn_case(s, true),
        },
        OpCase {
            name: "batch_norm2d_eval",
            run: |s| bn_case(s, false),
        },
        OpCase {
            name: "dense",
            run: |s| {
                let mut rng = case_rng(s);
                let (n, d, k) = (
                    rng.gen_range(1..=4),
                    rng.gen_range(1..=6),
                    rng.gen_range(1..=4),
                );
                let xs = [
                    random_tensor(&[n, d], -1.0, 1.0, &mut rng),
                    random_tensor(&[d, k], -1.0, 1.0, &mut rng),
                    random_tensor(&[k], -1.0, 1.0, &mut rng),
                ];
                check(&xs, &[0, 1, 2], STEP, s, |t, v| {
                    t.dense(v[0], v[1], Some(v[2]))
                })
            },
        },
        OpCase {
            name: "softmax_cross_entropy",
            run: |s| {
                let mut rng = case_rng(s);
                let (n, k) = (rng.gen_range(1..=5), rng.gen_range(2..=4));
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                let x = random_tensor(&[n, k], -3.0, 3.0, &mut rng);
                check(&[x], &[0], STEP, s, move |t, v| {
                    t.softmax_cross_entropy(v[0], &labels)
                })
            },
        },
        OpCase {
            name: "dropout",
            run: |s| {
                let mut rng = case_rng(s);
                let x = random_tensor(&nchw(&mut rng), -1.0, 1.0, &mut rng);
                let p = rng.gen_range(0.1..0.7);
                check(&[x], &[0], STEP, s, move |t, v| {
                    // same mask on every evaluation
                    t.dropout(v[0], p, &mut ChaCha8Rng::seed_from_u64(s))
                })
            },
        },
        OpCase {
            name: "flatten",
            run: |s| {
                let mut rng = case_rng(s);
                let x = random_tensor(&nchw(&mut rng), -1.0, 1.0, &mut rng);
                check(&[x], &[0], STEP, s, |t, v| Ok(t.flatten(v[0])))
            },
        },
    ]
}

/// Loss, branch pattern and (optionally) every parameter gradient.
type Probe = (f64, Vec<u32>, Vec<(crate::nn::ParamId, Vec<f64>)>);

/// Loss gradient of a double-precision SqueezeNet against central
/// differences on `samples` randomly chosen parameter scalars.
///
/// Dropout masks are re-drawn from the same seed on every pass. Parameters
/// whose two probes fall on different sides of a ReLU or max-pool kink are
/// skipped and redrawn. Returns the analytic and numeric derivatives in
/// sample order.
pub fn squeezenet_end_to_end(seed: u64, samples: usize, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    use crate::nn::{Architecture, Forward, Mode, Model};

    let mut rng = case_rng(seed);
    let mut model: Model<f64> = Model::build(Architecture::SqueezeNet, seed)?;
    let batch = random_tensor(&[2, 3, 64, 64], 0.0, 1.0, &mut rng);
    let labels = [0usize, 1];
    let dropout_seed = rng.gen();

    let loss_of = |m: &Model<f64>, grads: bool| -> Result<Probe> {
        let mut f = Forward::new(m.store(), Mode::Train, dropout_seed);
        let x = f.input(batch.clone());
        let y = m.forward(&mut f, x)?;
        let l = f.tape.softmax_cross_entropy(y, &labels)?;
        if grads {
            f.tape.backward(l)?;
        }
        Ok((
            f.tape.value(l).data()[0],
            f.tape.branch_pattern(),
            f.param_grads(),
        ))
    };

    let (_, _, grads) = loss_of(&model, true)?;
    let sizes: Vec<usize> = model
        .store()
        .params()
        .iter()
        .map(|p| p.value().numel())
        .collect();
    let total: usize = sizes.iter().sum();
    let mut analytic = Vec::with_capacity(samples);
    let mut numeric = Vec::with_capacity(samples);
    let mut attempts = 0;
    while analytic.len() < samples {
        attempts += 1;
        if attempts > samples * 20 {
            return Err(crate::Error::Contract(
                "too many samples straddle a kink".into(),
            ));
        }
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = model.store().params()[which].value().data()[flat];
        model.store_mut().params_mut()[which].value_mut()[flat] = orig + h;
        let (up, up_pattern, _) = loss_of(&model, false)?;
        model.store_mut().params_mut()[which].value_mut()[flat] = orig - h;
        let (down, down_pattern, _) = loss_of(&model, false)?;
        model.store_mut().params_mut()[which].value_mut()[flat] = orig;
        if up_pattern != down_pattern {
            // the two probes sit on different linear pieces
            continue;
        }
        let g = grads
            .iter()
            .find(|(id, _)| id.index() == which)
            .map_or(0.0, |(_, g)| g[flat]);
        analytic.push(g);
        numeric.push((up - down) / (2.0 * h));
    }
    Ok((analytic, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-15);
    }

    #[test]
    fn every_case_runs() {
        for case in op_cases() {
            let rep = (case.run)(0).unwrap();
            assert!(rep.max_error() < 1e-4, "{}: {:?}", case.name, rep.errors);
        }
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let rep = check(&[x], &[0], STEP, 1, |t, v| t.mul(v[0], v[0])).unwrap();
        assert!(rep.max_error() < 1e-9, "{rep:?}");
    }
}
