use rand::Rng;

use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        // NaN passes through so divergence stays visible downstream
        let out = x
            .data()
            .iter()
            .map(|&v| if v < T::zero() { T::zero() } else { v })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.push(value, Op::Relu { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "add",
                format!("shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            ));
        }
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "mul",
                format!("shapes {:?} and {:?} differ", av.shape(), bv.shape()),
            ));
        }
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self
            .value(input)
            .data()
            .iter()
            .fold(T::zero(), |acc, v| acc + *v);
        self.push(Tensor::scalar(total), Op::Sum { input })
    }

    /// Joins `[N, C1, H, W]` and `[N, C2, H, W]` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, c1, h, w] = self.value(a).dims4("concat_channels")?;
        let [n2, c2, h2, w2] = self.value(b).dims4("concat_channels")?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "batch/spatial dims differ: {:?} vs {:?}",
                    (n, h, w),
                    (n2, h2, w2)
                ),
            ));
        }
        let plane = h * w;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (c1 + c2) * plane);
        for s in 0..n {
            out.extend_from_slice(&ad[s * c1 * plane..][..c1 * plane]);
            out.extend_from_slice(&bd[s * c2 * plane..][..c2 * plane]);
        }
        let value = Tensor::from_parts(vec![n, c1 + c2, h, w], out);
        Ok(self.push(value, Op::ConcatChannels { a, b }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        let x = self.value(input);
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.push(value, Op::Dropout { input, mask }))
    }

    /// Collapses every axis after the first: `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let n = x.shape()[0];
        let d = x.numel() / n;
        let value = Tensor::from_parts(vec![n, d], x.data().to_vec());
        self.push(value, Op::Reshape { input })
    }
}

pub(super) fn relu_backward<T: Scalar>(
    g: &[T],
    input: Var,
    x: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(input) {
        return;
    }
    let dx = sink.slot(input);
    for ((d, gv), xv) in dx.iter_mut().zip(g).zip(x.data()) {
        if *xv > T::zero() {
            *d += *gv;
        }
    }
}

pub(super) fn mul_backward<T: Scalar>(
    g: &[T],
    (a, av): (Var, &Tensor<T>),
    (b, bv): (Var, &Tensor<T>),
    sink: &mut GradSink<'_, T>,
) {
    if sink.wants(a) {
        let da: Vec<T> = g.iter().zip(bv.data()).map(|(g, y)| *g * *y).collect();
        sink.add_owned(a, da);
    }
    if sink.wants(b) {
        let db: Vec<T> = g.iter().zip(av.data()).map(|(g, x)| *g * *x).collect();
        sink.add_owned(b, db);
    }
}

pub(super) fn concat_backward<T: Scalar>(
    g: &[T],
    (a, av): (Var, &Tensor<T>),
    (b, bv): (Var, &Tensor<T>),
    sink: &mut GradSink<'_, T>,
) {
    let [n, c1, h, w] = av.dims4("concat_channels").expect("checked in forward");
    let c2 = bv.shape()[1];
    let plane = h * w;
    let stride = (c1 + c2) * plane;
    if sink.wants(a) {
        let mut da = Vec::with_capacity(av.numel());
        for s in 0..n {
            da.extend_from_slice(&g[s * stride..][..c1 * plane]);
        }
        sink.add_owned(a, da);
    }
    if sink.wants(b) {
        let mut db = Vec::with_capacity(bv.numel());
        for s in 0..n {
            db.extend_from_slice(&g[s * stride + c1 * plane..][..c2 * plane]);
        }
        sink.add_owned(b, db);
    }
}

pub(super) fn dropout_backward<T: Scalar>(
    g: &[T],
    input: Var,
    mask: &[T],
    sink: &mut GradSink<'_, T>,
) {
    if sink.wants(input) {
        let dx: Vec<T> = g.iter().zip(mask).map(|(g, m)| *g * *m).collect();
        sink.add_owned(input, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_propagates_nan() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::new(&[3], vec![f32::NAN, -1.0, 2.0]).unwrap());
        let y = t.relu(x);
        let out = t.value(y).data();
        assert!(out[0].is_nan());
        assert_eq!(&out[1..], &[0.0, 2.0]);
    }
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape, data).unwrap(), true)
    }

    #[test]
    fn relu_cases_and_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let z = leaf(&mut tape, &[2], vec![-3.0, 5.0]);
        let rz = tape.relu(z);
        let loss = tape.sum(rz);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[0.0, 1.0]);
        // gradient at exactly zero is zero
        assert!(tape.grad(x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn relu_keeps_positive_input() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], vec![0.5, 1.0, 7.0]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.5, 1.0, 7.0]);
    }

    #[test]
    fn add_arithmetic_and_gradient() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let b = leaf(&mut tape, &[2], vec![3.0, 4.0]);
        let z = tape.constant(Tensor::zeros(&[2]).unwrap());
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        let az = tape.add(a, z).unwrap();
        assert_eq!(tape.value(az).data(), tape.value(a).data());
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn add_shape_mismatch() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let b = leaf(&mut tape, &[3], vec![1.0, 2.0, 3.0]);
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn concat_layout_and_slice_back() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, &[1, 2, 2, 2], (5..13).map(f64::from).collect());
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 2, 2]);
        let out = tape.value(y).data().to_vec();
        assert_eq!(&out[..4], tape.value(a).data());
        assert_eq!(&out[4..], tape.value(b).data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1, 1, 2, 2], vec![0.0; 4]);
        let b = leaf(&mut tape, &[1, 1, 3, 3], vec![0.0; 9]);
        assert!(tape.concat_channels(a, b).is_err());
        // zero-channel tensors cannot even be constructed
        assert!(Tensor::<f64>::new(&[1, 0, 2, 2], vec![]).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1000], vec![1.0; 1000]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|v| *v == 0.0 || *v == 2.0));
        let kept = vals.iter().filter(|v| **v > 0.0).count();
        assert!((400..600).contains(&kept));
    }
}
