//! 2-D convolution (cross-correlation, zero padding).
//!
//! Dense and grouped convolutions go through im2col + `sgemm` over fixed-size
//! blocks of output pixels; depthwise convolutions use a direct kernel. Block
//! sizes depend only on the layer shape, never on the worker count.

use rayon::prelude::*;

use super::ops::silu_scalar;
use super::Tensor;
use crate::error::{Error, Result};

/// Target number of floats in one im2col block.
const COL_BLOCK_FLOATS: usize = 1 << 18;
const MIN_BLOCK_COLS: usize = 64;
const MAX_BLOCK_COLS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Epilogue {
    None,
    Silu,
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f32);
// SAFETY: used only to hand out disjoint output regions to worker threads.
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    // a method call makes closures capture the wrapper, not the raw pointer field
    fn get(self) -> *mut f32 {
        self.0
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    icg: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

/// Convolves `input` `[N, C, H, W]` with `weight` `[outC, C/groups, kH, kW]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    conv2d_fused(input, weight, bias, stride, padding, groups, Epilogue::None)
}

pub(crate) fn conv2d_fused(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    groups: usize,
    epilogue: Epilogue,
) -> Result<Tensor> {
    let g = geometry(input, weight, bias, stride, padding, groups)?;
    let mut out = Tensor::zeros([g.n, g.oc, g.oh, g.ow]);
    let plane = g.oh * g.ow;
    if let Some(b) = bias {
        out.data_mut()
            .chunks_mut(plane)
            .enumerate()
            .for_each(|(i, p)| p.fill(b[i % g.oc]));
    }
    let depthwise = g.groups == g.c && g.icg == 1 && g.oc == g.c;
    for b in 0..g.n {
        let src = &input.data()[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        let dst = &mut out.data_mut()[b * g.oc * plane..(b + 1) * g.oc * plane];
        if depthwise {
            depthwise_kernel(&g, src, weight.data(), dst, epilogue);
        } else {
            gemm_kernel(&g, src, weight.data(), dst, epilogue);
        }
    }
    Ok(out)
}

fn geometry(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Geometry> {
    let [n, c, h, w] = input.shape();
    let [oc, icg, kh, kw] = weight.shape();
    if stride == 0 || groups == 0 {
        return Err(Error::invalid("conv2d", "stride and groups must be >= 1"));
    }
    if c % groups != 0 || oc % groups != 0 || icg * groups != c {
        return Err(Error::shape(
            "conv2d",
            format!("weight [outC, {}/{groups}, kH, kW] for input {:?}", c, input.shape()),
            format!("weight {:?}", weight.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != oc {
            return Err(Error::shape(
                "conv2d",
                format!("bias of length {oc}"),
                format!("length {}", b.len()),
            ));
        }
    }
    if h + 2 * padding < kh || w + 2 * padding < kw || kh == 0 || kw == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("padded input at least {kh}x{kw}"),
            format!("input {:?} with padding {padding}", input.shape()),
        ));
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        oc,
        icg,
        kh,
        kw,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
        stride,
        padding,
        groups,
    })
}

fn apply_epilogue(values: &mut [f32], epilogue: Epilogue) {
    if epilogue == Epilogue::Silu {
        values.iter_mut().for_each(|v| *v = silu_scalar(*v));
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `k`.
#[inline]
fn valid_range(k: usize, out_len: usize, in_len: usize, stride: usize, padding: usize) -> (usize, usize) {
    // input index = o * stride + k - padding must lie in [0, in_len)
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    let hi = if in_len + padding > k {
        ((in_len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn depthwise_kernel(g: &Geometry, src: &[f32], weight: &[f32], dst: &mut [f32], epilogue: Epilogue) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let taps = g.kh * g.kw;
    dst.par_chunks_mut(plane_out).enumerate().for_each(|(ch, out)| {
        let inp = &src[ch * plane_in..(ch + 1) * plane_in];
        let wk = &weight[ch * taps..(ch + 1) * taps];
        for ky in 0..g.kh {
            let (y_lo, y_hi) = valid_range(ky, g.oh, g.h, g.stride, g.padding);
            for kx in 0..g.kw {
                let wv = wk[ky * g.kw + kx];
                let (x_lo, x_hi) = valid_range(kx, g.ow, g.w, g.stride, g.padding);
                if x_lo >= x_hi {
                    continue;
                }
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    let row_in = &inp[iy * g.w..(iy + 1) * g.w];
                    let row_out = &mut out[oy * g.ow + x_lo..oy * g.ow + x_hi];
                    let x0 = x_lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        let seg = &row_in[x0..x0 + row_out.len()];
                        for (o, i) in row_out.iter_mut().zip(seg) {
                            *o += wv * i;
                        }
                    } else {
                        for (j, o) in row_out.iter_mut().enumerate() {
                            *o += wv * row_in[x0 + j * g.stride];
                        }
                    }
                }
            }
        }
        apply_epilogue(out, epilogue);
    });
}

fn gemm_kernel(g: &Geometry, src: &[f32], weight: &[f32], dst: &mut [f32], epilogue: Epilogue) {
    let m = g.oc / g.groups;
    let k = g.icg * g.kh * g.kw;
    let n = g.oh * g.ow;
    let pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0;
    let block = if pointwise {
        MAX_BLOCK_COLS
    } else {
        (COL_BLOCK_FLOATS / k.max(1)).clamp(MIN_BLOCK_COLS, MAX_BLOCK_COLS)
    };
    let n_blocks = n.div_ceil(block);
    let out_ptr = SendPtr(dst.as_mut_ptr());
    let plane_in = g.h * g.w;

    (0..g.groups * n_blocks).into_par_iter().for_each(|job| {
        let grp = job / n_blocks;
        let col0 = (job % n_blocks) * block;
        let cols = block.min(n - col0);
        let w_grp = &weight[grp * m * k..(grp + 1) * m * k];
        let in_grp = &src[grp * g.icg * plane_in..(grp + 1) * g.icg * plane_in];

        let col_buf;
        let (b_ptr, rsb) = if pointwise {
            (in_grp[col0..].as_ptr(), n as isize)
        } else {
            col_buf = im2col_block(g, in_grp, col0, cols);
            (col_buf.as_ptr(), cols as isize)
        };
        // SAFETY: each job owns rows [grp*m, (grp+1)*m) × columns
        // [col0, col0+cols) of the output, disjoint from every other job.
        unsafe {
            let c_ptr = out_ptr.get().add(grp * m * n + col0);
            matrixmultiply::sgemm(
                m,
                k,
                cols,
                1.0,
                w_grp.as_ptr(),
                k as isize,
                1,
                b_ptr,
                rsb,
                1,
                1.0,
                c_ptr,
                n as isize,
                1,
            );
            if epilogue != Epilogue::None {
                for r in 0..m {
                    let row = std::slice::from_raw_parts_mut(c_ptr.add(r * n), cols);
                    apply_epilogue(row, epilogue);
                }
            }
        }
    });
}

/// Unfolds output pixels `[col0, col0 + cols)` into a `[icg·kH·kW, cols]` matrix.
fn im2col_block(g: &Geometry, src: &[f32], col0: usize, cols: usize) -> Vec<f32> {
    let mut col = vec![0.0f32; g.icg * g.kh * g.kw * cols];
    let plane_in = g.h * g.w;
    for ic in 0..g.icg {
        let inp = &src[ic * plane_in..(ic + 1) * plane_in];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ic * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (x_lo, x_hi) = valid_range(kx, g.ow, g.w, g.stride, g.padding);
                let (y_lo, y_hi) = valid_range(ky, g.oh, g.h, g.stride, g.padding);
                let mut j = 0;
                while j < cols {
                    let p = col0 + j;
                    let oy = p / g.ow;
                    let ox_start = p % g.ow;
                    let run = (g.ow - ox_start).min(cols - j);
                    if oy >= y_lo && oy < y_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let row_in = &inp[iy * g.w..(iy + 1) * g.w];
                        let a = ox_start.max(x_lo);
                        let b = (ox_start + run).min(x_hi);
                        for ox in a..b {
                            dst[j + ox - ox_start] = row_in[ox * g.stride + kx - g.padding];
                        }
                    }
                    j += run;
                }
            }
        }
    }
    col
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_padding_arithmetic() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.at([0, 0, 1, 1]), 9.0);
        for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at([0, 0, yy, xx]), 4.0);
        }
        assert_eq!(y.at([0, 0, 0, 1]), 6.0);
    }

    #[test]
    fn identity_kernel_is_exact() {
        let x = Tensor::from_fn([1, 1, 4, 5], |[_, _, h, w]| (h * 7 + w) as f32 * 0.37 - 3.0);
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &w, None, 1, 0, 1).unwrap(), x);
    }

    #[test]
    fn no_kernel_flip() {
        // kernel picks the right neighbour; cross-correlation keeps orientation
        let x = Tensor::from_fn([1, 1, 1, 4], |[_, _, _, w]| w as f32);
        let w = Tensor::new([1, 1, 1, 3], vec![0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn depthwise_with_bias_and_stride() {
        let x = Tensor::full([1, 2, 4, 4], 1.0);
        let w = Tensor::full([2, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, Some(&[0.5, -0.5]), 2, 1, 2).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 2]);
        assert_eq!(y.at([0, 0, 0, 0]), 4.5);
        assert_eq!(y.at([0, 1, 1, 1]), 8.5);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let x = Tensor::zeros([1, 3, 4, 4]);
        let w = Tensor::zeros([8, 4, 3, 3]);
        let err = conv2d(&x, &w, None, 1, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 4, 4]") && err.contains("[8, 4, 3, 3]"), "{err}");
        assert!(conv2d(&x, &Tensor::zeros([8, 3, 3, 3]), Some(&[0.0; 3]), 1, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([8, 3, 3, 3]), None, 0, 1, 1).is_err());
        assert!(conv2d(
            &Tensor::zeros([1, 3, 1, 1]),
            &Tensor::zeros([8, 3, 3, 3]),
            None,
            1,
            0,
            1
        )
        .is_err());
    }

    #[test]
    fn valid_range_matches_scan() {
        for k in 0..7 {
            for stride in 1..4 {
                for padding in 0..4 {
                    for in_len in 1..9 {
                        if in_len + 2 * padding < k + 1 {
                            continue;
                        }
                        let out_len = (in_len + 2 * padding - (k + 1)) / stride + 1;
                        let (lo, hi) = valid_range(k, out_len, in_len, stride, padding);
                        for o in 0..out_len {
                            let i = (o * stride + k) as isize - padding as isize;
                            let valid = i >= 0 && i < in_len as isize;
                            assert_eq!(
                                valid,
                                o >= lo && o < hi,
                                "k={k} s={stride} p={padding} n={in_len} o={o}"
                            );
                        }
                    }
                }
            }
        }
    }
}
