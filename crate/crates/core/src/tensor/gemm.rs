//! Safe wrapper over the strided GEMM kernels.

use crate::parallel;
use crate::scalar::Scalar;

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "matrix view out of bounds");
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Rows of `C` computed per task; fixed so that the split never depends on
/// the worker count.
const ROW_BLOCK: usize = 64;

/// `C = alpha * A * B + beta * C` with `C` row-major contiguous (m×n).
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimensions differ");
    assert_eq!(c.len(), m * n, "gemm output has the wrong size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let a_last = (m - 1) * a.row_stride + (k - 1) * a.col_stride;
    let b_last = (k - 1) * b.row_stride + (n - 1) * b.col_stride;
    assert!(
        a_last < a.data.len() && b_last < b.data.len(),
        "gemm view out of bounds"
    );

    parallel::for_each_chunk_mut(c, ROW_BLOCK * n, |block, c_rows| {
        let row0 = block * ROW_BLOCK;
        let rows = c_rows.len() / n;
        let a_off = row0 * a.row_stride;
        // SAFETY: bounds were checked above for the full matrices; this block
        // covers rows row0..row0+rows of A and C only.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                alpha,
                a.data.as_ptr().add(a_off),
                a.row_stride as isize,
                a.col_stride as isize,
                b.data.as_ptr(),
                b.row_stride as isize,
                b.col_stride as isize,
                beta,
                c_rows.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_across_blocks() {
        let (m, k, n) = (150, 7, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i % 5) as f64 * 0.5).collect();
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::row_major(&a, m, k),
            MatRef::row_major(&b, k, n),
            0.0,
            &mut c,
        );
        assert_eq!(c, naive(&a, &b, m, k, n));
    }

    #[test]
    fn transposed_views() {
        // A^T B where A is 3x2 stored row-major.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = vec![0.0f64; 4];
        gemm(
            1.0,
            MatRef::row_major(&a, 3, 2).t(),
            MatRef::row_major(&b, 3, 2),
            0.0,
            &mut c,
        );
        assert_eq!(c, vec![6.0, 8.0, 8.0, 10.0]);
    }
}
