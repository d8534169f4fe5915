use super::conv::conv_out_dim;
use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    /// k×k max pooling without padding. Ties go to the first cell in
    /// row-major window order.
    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("maxpool2d")?;
        if k == 0 || stride == 0 {
            return Err(Error::shape(
                "maxpool2d",
                "window and stride must be positive",
            ));
        }
        let (Some(ho), Some(wo)) = (conv_out_dim(h, k, stride, 0), conv_out_dim(w, k, stride, 0))
        else {
            return Err(Error::shape(
                "maxpool2d",
                format!("window {k}x{k} exceeds the {h}x{w} input"),
            ));
        };
        let plane = h * w;
        let out_plane = ho * wo;
        let xd = x.data();
        let mut both: Vec<(T, u32)> = vec![(T::zero(), 0); n * c * out_plane];
        parallel::for_each_chunk_mut(&mut both, out_plane, |idx, dst| {
            let src = &xd[idx * plane..][..plane];
            for oh in 0..ho {
                for ow in 0..wo {
                    let (r0, c0) = (oh * stride, ow * stride);
                    let mut best_i = r0 * w + c0;
                    let mut best = src[best_i];
                    for i in r0..r0 + k {
                        for j in c0..c0 + k {
                            let v = src[i * w + j];
                            if v > best {
                                best = v;
                                best_i = i * w + j;
                            }
                        }
                    }
                    dst[oh * wo + ow] = (best, best_i as u32);
                }
            }
        });
        let (out, argmax): (Vec<T>, Vec<u32>) = both.into_iter().unzip();
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("global_avg_pool")?;
        let plane = h * w;
        let scale = T::one() / T::of(plane as f64);
        let out: Vec<T> = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().fold(T::zero(), |acc, v| acc + *v) * scale)
            .collect();
        Ok(self.push(
            Tensor::from_parts(vec![n, c], out),
            Op::GlobalAvgPool { input },
        ))
    }
}

pub(super) fn maxpool_backward<T: Scalar>(
    g: &[T],
    input: Var,
    argmax: &[u32],
    out: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(input) {
        return;
    }
    let [_, _, ho, wo] = out.dims4("maxpool2d").expect("rank checked in forward");
    let out_plane = ho * wo;
    let dx = sink.slot(input);
    let planes = argmax.len() / out_plane;
    let plane = dx.len() / planes;
    parallel::for_each_chunk_mut(dx, plane, |idx, dst| {
        let gs = &g[idx * out_plane..][..out_plane];
        let am = &argmax[idx * out_plane..][..out_plane];
        for (gv, &a) in gs.iter().zip(am) {
            dst[a as usize] += *gv;
        }
    });
}

pub(super) fn gap_backward<T: Scalar>(
    g: &[T],
    input: Var,
    x: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    if !sink.wants(input) {
        return;
    }
    let [_, _, h, w] = x.dims4("global_avg_pool").expect("rank checked in forward");
    let plane = h * w;
    let scale = T::one() / T::of(plane as f64);
    let dx = sink.slot(input);
    for (p, gv) in dx.chunks_mut(plane).zip(g) {
        let share = *gv * scale;
        p.iter_mut().for_each(|d| *d += share);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_max() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(
            Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_route_to_first_cell() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 0.5).unwrap(), true);
        let y = tape.maxpool2d(x, 3, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g[0], 1.0);
        assert!(g[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn window_larger_than_input_fails() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]).unwrap());
        assert!(matches!(tape.maxpool2d(x, 3, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn average_of_plane() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::new(&[1, 1, 2, 2], vec![2.0, 4.0, 6.0, 8.0]).unwrap(),
            true,
        );
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.shape(y), &[1, 1]);
        assert_eq!(tape.value(y).data(), &[5.0]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);
    }
}
