//! Dense NCHW `f32` tensors and the numeric kernels the network is built from.
//!
//! Every kernel accumulates each output element in a fixed order. Work is only
//! ever split along output channels or fixed-size blocks of output pixels, so
//! results are bit-identical for any worker count.

pub(crate) mod conv;
mod matmul;
pub(crate) mod ops;

pub use conv::conv2d;
pub use matmul::{batched_matmul, MatView};
pub use ops::{
    add, add_inplace, concat_channels, maxpool2d, sigmoid, sigmoid_scalar, silu, silu_inplace, silu_scalar, softmax,
    softmax_inplace, split_channels, upsample_nearest_x2,
};

use crate::error::{Error, Result};

/// A dense 4-D array `(N, C, H, W)` stored row-major with `W` fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor::new",
                format!("{expected} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f` at every `[n, c, h, w]` index in storage order.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i0 in 0..n {
            for i1 in 0..c {
                for i2 in 0..h {
                    for i3 in 0..w {
                        data.push(f([i0, i1, i2, i3]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Builds a tensor from a slice-like shape, padding missing leading dims with 1.
    ///
    /// Conv weights are always 4-D; biases and other 1-D vectors come in as
    /// `[len]` and end up as `[1, 1, 1, len]`.
    pub fn from_dims(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        if dims.len() > 4 {
            return Err(Error::invalid("Tensor::from_dims", format!("rank {} > 4", dims.len())));
        }
        let mut shape = [1usize; 4];
        shape[4 - dims.len()..].copy_from_slice(dims);
        Self::new(shape, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, idx: [usize; 4]) -> f32 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], value: f32) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    fn offset(&self, [n, c, h, w]: [usize; 4]) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    /// The `H×W` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    /// Largest elementwise absolute difference; `f32::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        if self.shape != other.shape {
            return f32::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish_non_exhaustive()
    }
}
