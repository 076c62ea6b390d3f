use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// A strided view of `batch` matrices of size `rows × cols` over a flat buffer.
///
/// Transposition is free: [`MatView::t`] swaps the row and column strides.
#[derive(Clone, Copy, Debug)]
pub struct MatView<'a> {
    data: &'a [f32],
    offset: usize,
    batch: usize,
    rows: usize,
    cols: usize,
    batch_stride: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatView<'a> {
    /// Contiguous row-major `[batch, rows, cols]`.
    pub fn new(data: &'a [f32], batch: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::strided(data, 0, [batch, rows, cols], [rows * cols, cols, 1])
    }

    pub fn strided(data: &'a [f32], offset: usize, dims: [usize; 3], strides: [usize; 3]) -> Result<Self> {
        let [batch, rows, cols] = dims;
        let view = Self {
            data,
            offset,
            batch,
            rows,
            cols,
            batch_stride: strides[0],
            row_stride: strides[1],
            col_stride: strides[2],
        };
        if batch > 0 && rows > 0 && cols > 0 {
            let last =
                offset + (batch - 1) * view.batch_stride + (rows - 1) * view.row_stride + (cols - 1) * view.col_stride;
            if last >= data.len() {
                return Err(Error::invalid(
                    "MatView",
                    format!(
                        "view {dims:?} with strides {strides:?} exceeds buffer of {}",
                        data.len()
                    ),
                ));
            }
        }
        Ok(view)
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.batch, self.rows, self.cols]
    }

    pub fn get(&self, b: usize, r: usize, c: usize) -> f32 {
        self.data[self.offset + b * self.batch_stride + r * self.row_stride + c * self.col_stride]
    }
}

/// `[B, M, K] × [B, K, N] → [B, M, N]`, returned as a tensor of shape `[1, B, M, N]`.
pub fn batched_matmul(a: MatView<'_>, b: MatView<'_>) -> Result<Tensor> {
    let [ba, m, k] = a.dims();
    let [bb, kb, n] = b.dims();
    if ba != bb || k != kb {
        return Err(Error::shape(
            "batched_matmul",
            format!("[B, M, K] x [B, K, N] with B={ba}, K={k}"),
            format!("{:?} x {:?}", a.dims(), b.dims()),
        ));
    }
    let mut out = Tensor::zeros([1, ba, m, n]);
    if m * n == 0 {
        return Ok(out);
    }
    out.data_mut().par_chunks_mut(m * n).enumerate().for_each(|(bi, dst)| {
        let a_ptr = a.data[a.offset + bi * a.batch_stride..].as_ptr();
        let b_ptr = b.data[b.offset + bi * b.batch_stride..].as_ptr();
        // SAFETY: both views were bounds-checked at construction; dst is an
        // exclusive, contiguous m×n buffer.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a_ptr,
                a.row_stride as isize,
                a.col_stride as isize,
                b_ptr,
                b.row_stride as isize,
                b.col_stride as isize,
                0.0,
                dst.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_neutral() {
        let a: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let out = batched_matmul(MatView::new(&a, 1, 2, 3).unwrap(), MatView::new(&eye, 1, 3, 3).unwrap()).unwrap();
        assert_eq!(out.data(), &a[..]);
    }

    #[test]
    fn ones_times_ones() {
        let ones = [1.0f32; 4];
        let v = MatView::new(&ones, 1, 2, 2).unwrap();
        let out = batched_matmul(v, v).unwrap();
        assert!(out.data().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn transposed_view() {
        // a = [[1,2],[3,4]], a^T a = [[10,14],[14,20]]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let v = MatView::new(&a, 1, 2, 2).unwrap();
        let out = batched_matmul(v.t(), v).unwrap();
        assert_eq!(out.data(), &[10.0, 14.0, 14.0, 20.0]);
    }

    #[test]
    fn rejects_inner_mismatch_and_oob_views() {
        let a = [0.0f32; 6];
        let v23 = MatView::new(&a, 1, 2, 3).unwrap();
        assert!(batched_matmul(v23, v23).is_err());
        assert!(MatView::new(&a, 2, 2, 3).is_err());
    }
}
