use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefscan::metrics::{iou, GtBox};
use reefscan::prepost::Detection;

/// Exhaustive evaluator written independently of the library: full IoU matrix per image,
/// one global ranking, and the precision envelope taken as a max over every later rank.
pub fn brute_force_map(preds: &[Vec<Detection>], gts: &[Vec<GtBox>], nc: usize) -> (f64, f64, Vec<Vec<f64>>) {
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut per_class = Vec::new();
    for class in 0..nc {
        let n_gt: usize = gts
            .iter()
            .map(|g| g.iter().filter(|b| b.class_id == class).count())
            .sum();
        if n_gt == 0 {
            continue;
        }
        let mut aps = Vec::new();
        for &thr in &thresholds {
            let mut all: Vec<(f32, usize, usize)> = Vec::new();
            for (img, p) in preds.iter().enumerate() {
                for (k, d) in p.iter().enumerate() {
                    if d.class_id == class {
                        all.push((d.score, img, k));
                    }
                }
            }
            // bubble sort: score descending, then image, then input index
            for i in 0..all.len() {
                for j in 0..all.len() - 1 - i {
                    let (a, b) = (all[j], all[j + 1]);
                    let swap = b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2));
                    if swap {
                        all.swap(j, j + 1);
                    }
                }
            }
            let class_gts: Vec<Vec<[f32; 4]>> = gts
                .iter()
                .map(|g| g.iter().filter(|b| b.class_id == class).map(|b| b.bbox).collect())
                .collect();
            let matrices: Vec<Vec<Vec<f64>>> = preds
                .iter()
                .zip(&class_gts)
                .map(|(p, g)| {
                    p.iter()
                        .map(|d| g.iter().map(|gt| iou(&d.bbox, gt)).collect())
                        .collect()
                })
                .collect();
            let mut used: Vec<Vec<bool>> = class_gts.iter().map(|g| vec![false; g.len()]).collect();
            let mut hits = Vec::new();
            for &(_, img, k) in &all {
                let row = &matrices[img][k];
                let mut pick: Option<usize> = None;
                for g in 0..row.len() {
                    if used[img][g] || row[g] < thr {
                        continue;
                    }
                    match pick {
                        Some(p) if row[p] >= row[g] => {}
                        _ => pick = Some(g),
                    }
                }
                if let Some(g) = pick {
                    used[img][g] = true;
                }
                hits.push(pick.is_some());
            }
            let mut points = Vec::new();
            for r in 0..=100usize {
                let mut best = 0.0f64;
                for k in 0..hits.len() {
                    let tp = hits[..=k].iter().filter(|&&h| h).count();
                    if tp * 100 >= r * n_gt {
                        best = best.max(tp as f64 / (k + 1) as f64);
                    }
                }
                points.push(best);
            }
            aps.push(points.iter().sum::<f64>() / 101.0);
        }
        per_class.push(aps);
    }
    let means: Vec<f64> = (0..10)
        .map(|t| {
            if per_class.is_empty() {
                0.0
            } else {
                per_class.iter().map(|c| c[t]).sum::<f64>() / per_class.len() as f64
            }
        })
        .collect();
    (means[0], means.iter().sum::<f64>() / 10.0, per_class)
}

pub fn synthetic_set(seed: u64, images: usize, nc: usize) -> (Vec<Vec<Detection>>, Vec<Vec<GtBox>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let n = rng.gen_range(0..8);
        let g: Vec<GtBox> = (0..n)
            .map(|_| {
                let x = rng.gen_range(0..80) as f32;
                let y = rng.gen_range(0..80) as f32;
                let w = rng.gen_range(4..30) as f32;
                let h = rng.gen_range(4..30) as f32;
                GtBox {
                    class_id: rng.gen_range(0..nc),
                    bbox: [x, y, x + w, y + h],
                }
            })
            .collect();
        let mut p = Vec::new();
        for gt in &g {
            for _ in 0..rng.gen_range(0..3) {
                let j = |rng: &mut ChaCha8Rng| rng.gen_range(-4..=4) as f32;
                let b = gt.bbox;
                p.push(Detection {
                    bbox: [
                        b[0] + j(&mut rng),
                        b[1] + j(&mut rng),
                        b[2] + j(&mut rng),
                        b[3] + j(&mut rng),
                    ],
                    score: rng.gen_range(1..=10) as f32 / 10.0,
                    class_id: if rng.gen_bool(0.9) {
                        gt.class_id
                    } else {
                        rng.gen_range(0..nc)
                    },
                });
            }
        }
        for _ in 0..rng.gen_range(0..4) {
            let x = rng.gen_range(0..90) as f32;
            let y = rng.gen_range(0..90) as f32;
            p.push(Detection {
                bbox: [x, y, x + rng.gen_range(2..20) as f32, y + rng.gen_range(2..20) as f32],
                score: rng.gen_range(1..=10) as f32 / 10.0,
                class_id: rng.gen_range(0..nc),
            });
        }
        preds.push(p);
        gts.push(g);
    }
    (preds, gts)
}
