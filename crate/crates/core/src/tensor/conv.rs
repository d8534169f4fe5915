//! 2-D convolution (cross-correlation, no kernel flip) lowered onto GEMM via
//! patch-matrix expansion.
//!
//! The patch matrix has one row per (channel, kernel row, kernel col) and one
//! column per (sample, output row, output col), so the whole batch is a
//! single `[F, C·kH·kW] x [C·kH·kW, N·H'·W']` product.

use super::gemm::{gemm, MatRef};
use super::tape::{GradSink, Op, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;
use crate::scalar::Scalar;

/// Output extent `floor((size + 2p - k) / stride) + 1`, or `None` when the
/// kernel does not fit the padded input.
pub fn conv_out_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn patch_cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

/// Expands `x` (`[N, C, H, W]`) into the `[C·kH·kW, N·H'·W']` patch matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let [n, c, h, w] = dims;
    let geo = Geometry {
        n,
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    };
    im2col_geo(x, &geo)
}

fn im2col_geo<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let cols_len = g.patch_cols();
    let mut cols = vec![T::zero(); g.patch_rows() * cols_len];
    let plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    parallel::for_each_chunk_mut(&mut cols, cols_len, |r, row| {
        let kj = r % g.kw;
        let ki = (r / g.kw) % g.kh;
        let ch = r / (g.kw * g.kh);
        for s in 0..g.n {
            let src = &x[(s * g.c + ch) * plane..][..plane];
            let dst = &mut row[s * out_plane..][..out_plane];
            for oh in 0..g.ho {
                let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                if ih < 0 || ih >= g.h as isize {
                    continue;
                }
                let src_row = &src[ih as usize * g.w..][..g.w];
                let dst_row = &mut dst[oh * g.wo..][..g.wo];
                for (ow, d) in dst_row.iter_mut().enumerate() {
                    let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                    if iw >= 0 && iw < g.w as isize {
                        *d = src_row[iw as usize];
                    }
                }
            }
        }
    });
    cols
}

/// Scatter-adds a patch-matrix gradient back onto the input layout.
fn col2im<T: Scalar>(dcols: &[T], g: &Geometry) -> Vec<T> {
    let plane = g.h * g.w;
    let out_plane = g.ho * g.wo;
    let cols_len = g.patch_cols();
    let mut dx = vec![T::zero(); g.n * g.c * plane];
    parallel::for_each_chunk_mut(&mut dx, plane, |idx, dst| {
        let s = idx / g.c;
        let ch = idx % g.c;
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (ch * g.kh + ki) * g.kw + kj;
                let src = &dcols[r * cols_len + s * out_plane..][..out_plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[ih as usize * g.w..][..g.w];
                    let src_row = &src[oh * g.wo..][..g.wo];
                    for (ow, v) in src_row.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst_row[iw as usize] += *v;
                        }
                    }
                }
            }
        }
    });
    dx
}

fn geometry<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Geometry, usize)> {
    let [n, c, h, w] = x.dims4("conv2d")?;
    let [f, wc, kh, kw] = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but the kernel expects {wc}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    let (Some(ho), Some(wo)) = (
        conv_out_dim(h, kh, stride, pad),
        conv_out_dim(w, kw, stride, pad),
    ) else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} is larger than the padded {h}x{w} input (padding {pad})"),
        ));
    };
    Ok((
        Geometry {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        },
        f,
    ))
}

impl<T: Scalar> Tape<T> {
    /// `[N, C, H, W] * [F, C, kH, kW] (+ bias[F]) -> [N, F, H', W']` with zero
    /// padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (geo, f) = geometry(x, w, stride, padding)?;
        let b = match bias {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [f] {
                    return Err(Error::shape(
                        "conv2d",
                        format!("bias shape {:?} does not match {f} filters", bv.shape()),
                    ));
                }
                Some(bv.data())
            }
            None => None,
        };

        let cols = im2col_geo(x.data(), &geo);
        let k = geo.patch_rows();
        let np = geo.patch_cols();
        let mut out_mat = vec![T::zero(); f * np];
        gemm(
            T::one(),
            MatRef::row_major(w.data(), f, k),
            MatRef::row_major(&cols, k, np),
            T::zero(),
            &mut out_mat,
        );
        drop(cols);

        let p = geo.ho * geo.wo;
        let mut out = vec![T::zero(); geo.n * f * p];
        parallel::for_each_chunk_mut(&mut out, p, |idx, dst| {
            let s = idx / f;
            let filt = idx % f;
            let src = &out_mat[filt * np + s * p..][..p];
            let shift = b.map_or(T::zero(), |b| b[filt]);
            for (d, v) in dst.iter_mut().zip(src) {
                *d = *v + shift;
            }
        });

        let value = Tensor::from_parts(vec![geo.n, f, geo.ho, geo.wo], out);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }
}

pub(super) fn conv2d_backward<T: Scalar>(
    g: &[T],
    (input, x): (Var, &Tensor<T>),
    (weight, w): (Var, &Tensor<T>),
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    sink: &mut GradSink<'_, T>,
) {
    let (geo, f) = geometry(x, w, stride, padding).expect("validated in forward");
    let p = geo.ho * geo.wo;
    let np = geo.patch_cols();
    let k = geo.patch_rows();

    // [N, F, P] -> [F, N·P]
    let mut gmat = vec![T::zero(); f * np];
    parallel::for_each_chunk_mut(&mut gmat, np, |filt, row| {
        for s in 0..geo.n {
            row[s * p..][..p].copy_from_slice(&g[(s * f + filt) * p..][..p]);
        }
    });

    if let Some(b) = bias {
        if sink.wants(b) {
            let db: Vec<T> = gmat
                .chunks(np)
                .map(|row| row.iter().fold(T::zero(), |acc, v| acc + *v))
                .collect();
            sink.add_owned(b, db);
        }
    }

    let need_w = sink.wants(weight);
    let need_x = sink.wants(input);
    if need_w {
        let cols = im2col_geo(x.data(), &geo);
        let mut dw = vec![T::zero(); f * k];
        gemm(
            T::one(),
            MatRef::row_major(&gmat, f, np),
            MatRef::row_major(&cols, k, np).t(),
            T::zero(),
            &mut dw,
        );
        sink.add_owned(weight, dw);
    }
    if need_x {
        let mut dcols = vec![T::zero(); k * np];
        gemm(
            T::one(),
            MatRef::row_major(w.data(), f, k).t(),
            MatRef::row_major(&gmat, f, np),
            T::zero(),
            &mut dcols,
        );
        let dx = col2im(&dcols, &geo);
        sink.add_owned(input, dx);
    }
}
