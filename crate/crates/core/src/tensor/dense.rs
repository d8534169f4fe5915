use super::gemm::{gemm, MatRef};
use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    /// Affine map `[N, D] · [D, K] + bias[K]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [n, d] = self.value(input).dims2("dense")?;
        let [wd, k] = self.value(weight).dims2("dense")?;
        if wd != d {
            return Err(Error::shape(
                "dense",
                format!("input has {d} features but the weight expects {wd}"),
            ));
        }
        let mut out = vec![T::zero(); n * k];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [k] {
                return Err(Error::shape(
                    "dense",
                    format!("bias shape {:?} does not match {k} outputs", bv.shape()),
                ));
            }
            for row in out.chunks_mut(k) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            T::one(),
            MatRef::row_major(self.value(input).data(), n, d),
            MatRef::row_major(self.value(weight).data(), d, k),
            T::one(),
            &mut out,
        );
        let value = Tensor::from_parts(vec![n, k], out);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }
}

pub(super) fn dense_backward<T: Scalar>(
    g: &[T],
    (input, x): (Var, &Tensor<T>),
    (weight, w): (Var, &Tensor<T>),
    bias: Option<Var>,
    sink: &mut GradSink<'_, T>,
) {
    let [n, d] = x.dims2("dense").expect("checked in forward");
    let k = w.shape()[1];
    if let Some(b) = bias {
        if sink.wants(b) {
            let mut db = vec![T::zero(); k];
            for row in g.chunks(k) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += *v;
                }
            }
            sink.add_owned(b, db);
        }
    }
    if sink.wants(weight) {
        let mut dw = vec![T::zero(); d * k];
        gemm(
            T::one(),
            MatRef::row_major(x.data(), n, d).t(),
            MatRef::row_major(g, n, k),
            T::zero(),
            &mut dw,
        );
        sink.add_owned(weight, dw);
    }
    if sink.wants(input) {
        let mut dx = vec![T::zero(); n * d];
        gemm(
            T::one(),
            MatRef::row_major(g, n, k),
            MatRef::row_major(w.data(), d, k).t(),
            T::zero(),
            &mut dx,
        );
        sink.add_owned(input, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let w = tape.constant(Tensor::new(&[3, 3], eye).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]).unwrap());
        let y = tape.dense(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn hand_computed_product() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.constant(Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2]).unwrap());
        let y = tape.dense(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let w = tape.constant(Tensor::zeros(&[4, 2]).unwrap());
        assert!(matches!(tape.dense(x, w, None), Err(Error::Shape { .. })));
    }
}
