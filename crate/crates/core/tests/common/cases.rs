//! Randomized operator sweeps against the naive kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefscan::tensor::{batched_matmul, conv2d, maxpool2d, MatView};

use super::naive;

/// Cases run and the worst relative error seen.
#[derive(Debug, Clone, Copy)]
pub struct Sweep {
    pub cases: usize,
    pub worst: f64,
}

fn record(s: &mut Sweep, e: f64) {
    s.cases += 1;
    s.worst = s.worst.max(e);
}

pub fn conv_sweep(seed: u64, cases: usize) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Sweep { cases: 0, worst: 0.0 };
    for case in 0..cases {
        // every tenth case is large enough to span several im2col blocks
        let big = case % 10 == 9;
        let width = if big { rng.gen_range(8..33) } else { rng.gen_range(1..6) };
        // 0 stands for depthwise
        let (c, icg, groups) = match [1, 1, 2, 4, 0][rng.gen_range(0..5)] {
            0 => (width, 1, width),
            g => (width * g, width, g),
        };
        let oc = groups * if big { rng.gen_range(4..33) } else { rng.gen_range(1..5) };
        let k: usize = [1, 3, 5, 7][rng.gen_range(0..4)];
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..=k / 2);
        let lo = k.saturating_sub(2 * pad).max(1);
        let (h, w) = if big {
            (rng.gen_range(40..80), rng.gen_range(40..80))
        } else {
            (rng.gen_range(lo..lo + 14), rng.gen_range(lo..lo + 14))
        };
        let n = rng.gen_range(1..3);
        let x = naive::random_tensor(&mut rng, [n, c, h, w]);
        let wt = naive::random_tensor(&mut rng, [oc, icg, k, k]);
        let bias: Option<Vec<f32>> = rng
            .gen_bool(0.5)
            .then(|| (0..oc).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = conv2d(&x, &wt, bias.as_deref(), stride, pad, groups).unwrap();
        let want = naive::conv2d(&x, &wt, bias.as_deref(), stride, pad, groups);
        assert_eq!(got.shape(), want.shape(), "case {case}");
        record(&mut s, naive::rel_error(got.data(), want.data()));
    }
    s
}

pub fn maxpool_sweep(seed: u64, cases: usize) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Sweep { cases: 0, worst: 0.0 };
    for case in 0..cases {
        let k = [1, 2, 3, 5][rng.gen_range(0..4)];
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..=k / 2);
        let (h, w) = (rng.gen_range(k..k + 15), rng.gen_range(k..k + 15));
        let shape = [rng.gen_range(1..3), rng.gen_range(1..6), h, w];
        let x = naive::random_tensor(&mut rng, shape);
        let got = maxpool2d(&x, k, stride, pad).unwrap();
        let want = naive::maxpool2d(&x, k, stride, pad);
        assert_eq!(got.shape(), want.shape(), "case {case}");
        record(&mut s, naive::rel_error(got.data(), want.data()));
    }
    s
}

pub fn matmul_sweep(seed: u64, cases: usize) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Sweep { cases: 0, worst: 0.0 };
    for _ in 0..cases {
        let big = rng.gen_bool(0.1);
        let dim = |rng: &mut ChaCha8Rng| {
            if big {
                rng.gen_range(32..160)
            } else {
                rng.gen_range(1..20)
            }
        };
        let (batch, m, k, n) = (rng.gen_range(1..4), dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let (ta, tb) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
        let a: Vec<f32> = (0..batch * m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..batch * k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // stored transposed when flagged, then viewed back through `t()`
        let va = if ta {
            MatView::new(&a, batch, k, m).unwrap().t()
        } else {
            MatView::new(&a, batch, m, k).unwrap()
        };
        let vb = if tb {
            MatView::new(&b, batch, n, k).unwrap().t()
        } else {
            MatView::new(&b, batch, k, n).unwrap()
        };
        let got = batched_matmul(va, vb).unwrap();
        let ga = |bt: usize, i: usize, p: usize| {
            if ta {
                a[bt * m * k + p * m + i]
            } else {
                a[bt * m * k + i * k + p]
            }
        };
        let gb = |bt: usize, p: usize, j: usize| {
            if tb {
                b[bt * k * n + j * k + p]
            } else {
                b[bt * k * n + p * n + j]
            }
        };
        let want = naive::matmul(batch, m, k, n, ga, gb);
        assert_eq!(got.shape(), [1, batch, m, n]);
        record(&mut s, naive::rel_error(got.data(), &want));
    }
    s
}
