use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

const ELEMWISE_CHUNK: usize = 1 << 14;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_scalar(x: f32) -> f32 {
    x * sigmoid_scalar(x)
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    out.data_mut()
        .par_chunks_mut(ELEMWISE_CHUNK)
        .for_each(|c| c.iter_mut().for_each(|v| *v = sigmoid_scalar(*v)));
    out
}

pub fn silu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    silu_inplace(&mut out);
    out
}

pub fn silu_inplace(t: &mut Tensor) {
    silu_slice(t.data_mut());
}

pub(crate) fn silu_slice(data: &mut [f32]) {
    data.par_chunks_mut(ELEMWISE_CHUNK)
        .for_each(|c| c.iter_mut().for_each(|v| *v = silu_scalar(*v)));
}

/// Softmax along `axis` (0..4), with max-subtraction.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    let mut out = t.clone();
    softmax_inplace(&mut out, axis)?;
    Ok(out)
}

pub fn softmax_inplace(t: &mut Tensor, axis: usize) -> Result<()> {
    if axis >= 4 {
        return Err(Error::invalid(
            "softmax",
            format!("axis {axis} out of range for a 4-D tensor"),
        ));
    }
    let shape = t.shape();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let data = t.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            softmax_strided(data, base, len, inner);
        }
    }
    Ok(())
}

/// In-place softmax over `data[base + j*stride]` for `j < len`.
pub(crate) fn softmax_strided(data: &mut [f32], base: usize, len: usize, stride: usize) {
    if len == 0 {
        return;
    }
    let mut max = f32::NEG_INFINITY;
    for j in 0..len {
        max = max.max(data[base + j * stride]);
    }
    let mut sum = 0.0f32;
    for j in 0..len {
        let e = (data[base + j * stride] - max).exp();
        data[base + j * stride] = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for j in 0..len {
        data[base + j * stride] *= inv;
    }
}

/// Max pooling with `-inf` padding, so padded cells never win.
pub fn maxpool2d(t: &Tensor, k: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let [n, c, h, w] = t.shape();
    if k == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d", "kernel and stride must be >= 1"));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial size >= {k} after padding"),
            format!("{h}x{w} with padding {padding}"),
        ));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = t.data();
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane, dst)| {
            let src = &src[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                let y0 = (oy * stride) as isize - padding as isize;
                for ox in 0..ow {
                    let x0 = (ox * stride) as isize - padding as isize;
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..k as isize {
                        let y = y0 + ky;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let row = &src[y as usize * w..(y as usize + 1) * w];
                        for kx in 0..k as isize {
                            let x = x0 + kx;
                            if x >= 0 && x < w as isize {
                                m = m.max(row[x as usize]);
                            }
                        }
                    }
                    dst[oy * ow + ox] = m;
                }
            }
        });
    Ok(out)
}

/// Nearest-neighbour 2× upsampling: every pixel becomes a 2×2 block.
pub fn upsample_nearest_x2(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let src = t.data();
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane, dst)| {
            let src = &src[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
                let drow = &mut dst[y * ow..(y + 1) * ow];
                for (x, d) in drow.iter_mut().enumerate() {
                    *d = srow[x / 2];
                }
            }
        });
    out
}

/// Stacks tensors along the channel axis, preserving order.
pub fn concat_channels(ts: &[&Tensor]) -> Result<Tensor> {
    let first = ts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.shape();
    for t in ts {
        let [tn, _, th, tw] = t.shape();
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("N,H,W = {n},{h},{w}"),
                format!("{:?}", t.shape()),
            ));
        }
    }
    let c_total: usize = ts.iter().map(|t| t.c()).sum();
    let mut data = Vec::with_capacity(n * c_total * h * w);
    for b in 0..n {
        for t in ts {
            let per = t.c() * h * w;
            data.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::new([n, c_total, h, w], data)
}

/// Splits along channels into consecutive pieces of the given sizes.
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = t.shape();
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::shape(
            "split_channels",
            format!("sizes summing to {c}"),
            format!("{sizes:?}"),
        ));
    }
    let hw = h * w;
    let mut offset = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let mut data = Vec::with_capacity(n * s * hw);
        for b in 0..n {
            let start = (b * c + offset) * hw;
            data.extend_from_slice(&t.data()[start..start + s * hw]);
        }
        out.push(Tensor::new([n, s, h, w], data)?);
        offset += s;
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    add_inplace(&mut out, b)?;
    Ok(out)
}

pub fn add_inplace(a: &mut Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += *y);
    Ok(())
}
