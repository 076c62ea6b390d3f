//! Direct-loop reference kernels and decoders, written without any library kernels.

use rand::Rng;
use reefscan::metrics::iou;
use reefscan::prepost::Detection;
use reefscan::Tensor;

/// Six nested loops with `f64` accumulation; out-of-range taps contribute zero.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&[f32]>, stride: usize, pad: usize, groups: usize) -> Tensor {
    let [n, c, h, wd] = x.shape();
    let [oc, icg, kh, kw] = w.shape();
    assert_eq!(c, icg * groups);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let ocg = oc / groups;
    Tensor::from_fn([n, oc, oh, ow], |[b, o, y, xo]| {
        let g = o / ocg;
        let mut acc = bias.map_or(0.0, |bs| bs[o] as f64);
        for i in 0..icg {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    let ix = (xo * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    let v = x.at([b, g * icg + i, iy as usize, ix as usize]) as f64;
                    acc += v * w.at([o, i, ky, kx]) as f64;
                }
            }
        }
        acc as f32
    })
}

/// Padding never wins: only in-range taps are compared.
pub fn maxpool2d(x: &Tensor, k: usize, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    Tensor::from_fn([n, c, oh, ow], |[b, ch, y, xo]| {
        let mut best = f32::NEG_INFINITY;
        for ky in 0..k {
            for kx in 0..k {
                let iy = (y * stride + ky) as isize - pad as isize;
                let ix = (xo * stride + kx) as isize - pad as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    best = best.max(x.at([b, ch, iy as usize, ix as usize]));
                }
            }
        }
        best
    })
}

/// `a` is `[batch][m][k]` through `ga`, `b` is `[batch][k][n]` through `gb`.
pub fn matmul(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ga: impl Fn(usize, usize, usize) -> f32,
    gb: impl Fn(usize, usize, usize) -> f32,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(batch * m * n);
    for bt in 0..batch {
        for i in 0..m {
            for j in 0..n {
                let s: f64 = (0..k).map(|p| ga(bt, i, p) as f64 * gb(bt, p, j) as f64).sum();
                out.push(s as f32);
            }
        }
    }
    out
}

/// Max deviation scaled by the reference's largest magnitude (floored at 1e-6).
pub fn rel_error(got: &[f32], want: &[f32]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64)).max(1e-6);
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((*a as f64 - *b as f64).abs()));
    diff / scale
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Decodes one-to-one head maps by the textbook recipe: per-anchor softmax expectation
/// in `f64`, sigmoid of the best class logit, strict threshold, full stable sort.
pub fn decode(heads: &[Tensor], strides: &[usize], reg_max: usize, conf: f32, max_det: usize) -> Vec<Detection> {
    let mut all = Vec::new();
    for (head, &s) in heads.iter().zip(strides) {
        let [_, ch, gh, gw] = head.shape();
        let nc = ch - 4 * reg_max;
        for y in 0..gh {
            for x in 0..gw {
                let (mut cls, mut logit) = (0, f32::NEG_INFINITY);
                for c in 0..nc {
                    let v = head.at([0, 4 * reg_max + c, y, x]);
                    if v > logit {
                        (cls, logit) = (c, v);
                    }
                }
                let score = (1.0 / (1.0 + (-(logit as f64)).exp())) as f32;
                let mut dist = [0.0f64; 4];
                for (side, d) in dist.iter_mut().enumerate() {
                    let logits: Vec<f64> = (0..reg_max)
                        .map(|b| head.at([0, side * reg_max + b, y, x]) as f64)
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    *d = e.iter().enumerate().map(|(i, v)| i as f64 * v / z).sum();
                }
                let (ax, ay) = (x as f64 + 0.5, y as f64 + 0.5);
                let sf = s as f64;
                let bbox = [
                    ((ax - dist[0]) * sf) as f32,
                    ((ay - dist[1]) * sf) as f32,
                    ((ax + dist[2]) * sf) as f32,
                    ((ay + dist[3]) * sf) as f32,
                ];
                all.push(Detection {
                    bbox,
                    score,
                    class_id: cls,
                });
            }
        }
    }
    let mut kept: Vec<Detection> = all.into_iter().filter(|d| d.score > conf).collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept.truncate(max_det);
    kept
}

/// Worst per-detection agreement after pairing each reference detection with the
/// unused same-class candidate of highest IoU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub pairs: usize,
    pub min_iou: f64,
    pub max_score_diff: f64,
}

pub fn compare_detections(got: &[Detection], want: &[Detection]) -> Result<Agreement, String> {
    if got.len() != want.len() {
        return Err(format!("{} detections, reference has {}", got.len(), want.len()));
    }
    let mut used = vec![false; got.len()];
    let mut agreement = Agreement {
        pairs: want.len(),
        min_iou: 1.0,
        max_score_diff: 0.0,
    };
    for (k, w) in want.iter().enumerate() {
        let best = got
            .iter()
            .enumerate()
            .filter(|(i, g)| !used[*i] && g.class_id == w.class_id)
            .map(|(i, g)| (i, iou(&g.bbox, &w.bbox)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, o)) = best else {
            return Err(format!("reference detection {k} has no same-class candidate"));
        };
        used[i] = true;
        agreement.min_iou = agreement.min_iou.min(o);
        agreement.max_score_diff = agreement
            .max_score_diff
            .max((got[i].score as f64 - w.score as f64).abs());
    }
    Ok(agreement)
}
