mod common;

use common::{brute_force_map, synthetic_set};
use proptest::prelude::*;
use reefscan::metrics::{average_precision, iou, iou_thresholds, map_report, ScoredBox};

#[test]
fn map_report_equals_brute_force_on_fifty_images() {
    for seed in 0..5 {
        let (preds, gts) = synthetic_set(1000 + seed, 50, 3);
        let report = map_report(&preds, &gts, 3).unwrap();
        let (m50, m5095, per_class) = brute_force_map(&preds, &gts, 3);
        assert_eq!(report.map50, m50, "seed {seed}");
        assert_eq!(report.map50_95, m5095, "seed {seed}");
        for (c, want) in report.classes.iter().zip(&per_class) {
            assert_eq!(&c.ap, want, "seed {seed} class {}", c.class_id);
        }
    }
}

#[test]
fn overlapping_ground_truth_lets_duplicates_raise_ap() {
    // One prediction covers two ground-truth boxes at IoU >= 0.5 with each: its duplicate
    // matches the second box, so duplicating predictions is not AP-non-increasing in general.
    let g1 = [0.0, 0.0, 10.0, 10.0];
    let g2 = [0.0, 0.0, 10.0, 8.0];
    let p = ScoredBox {
        score: 0.9,
        bbox: [0.0, 0.0, 10.0, 9.0],
    };
    assert!(iou(&p.bbox, &g1) >= 0.5 && iou(&p.bbox, &g2) >= 0.5);
    let once = average_precision(&[(vec![p], vec![g1, g2])], 0.5).ap.unwrap();
    let twice = average_precision(&[(vec![p, p], vec![g1, g2])], 0.5).ap.unwrap();
    assert!(twice > once);
}

/// Ground truth on a grid of disjoint cells, so no box reaches IoU > 0.5 with two of them.
fn disjoint_gts(cells: &[(u8, u8, u8)]) -> Vec<[f32; 4]> {
    let mut seen = std::collections::HashSet::new();
    cells
        .iter()
        .filter(|c| seen.insert((c.0, c.1)))
        .map(|&(cx, cy, s)| {
            let (x, y) = (cx as f32 * 40.0, cy as f32 * 40.0);
            let side = 10.0 + s as f32;
            [x, y, x + side, y + side]
        })
        .collect()
}

fn preds_near(gts: &[[f32; 4]], jitter: &[(i8, i8, u8)]) -> Vec<ScoredBox> {
    jitter
        .iter()
        .enumerate()
        .map(|(i, &(dx, dy, s))| {
            let b = if gts.is_empty() {
                [0.0, 0.0, 10.0, 10.0]
            } else {
                gts[i % gts.len()]
            };
            ScoredBox {
                score: s as f32 / 255.0,
                bbox: [b[0] + dx as f32, b[1] + dy as f32, b[2] + dx as f32, b[3] + dy as f32],
            }
        })
        .collect()
}

fn cells() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
    prop::collection::vec((0u8..6, 0u8..6, 0u8..20), 0..10)
}

fn jitters() -> impl Strategy<Value = Vec<(i8, i8, u8)>> {
    prop::collection::vec((-8i8..=8, -8i8..=8, any::<u8>()), 0..20)
}

proptest! {
    #[test]
    fn ap_non_increasing_in_threshold(c in cells(), j in jitters()) {
        let gts = disjoint_gts(&c);
        let preds = preds_near(&gts, &j);
        let aps: Vec<f64> = iou_thresholds().iter().map(|&t| average_precision(&[(preds.clone(), gts.clone())], t).ap.unwrap_or(0.0)).collect();
        prop_assert!(aps.windows(2).all(|w| w[1] <= w[0]), "{:?}", aps);
    }

    #[test]
    fn duplicating_predictions_never_raises_ap_with_disjoint_gt(c in cells(), j in jitters(), t in 1usize..10) {
        let thr = iou_thresholds()[t];
        let gts = disjoint_gts(&c);
        let preds = preds_near(&gts, &j);
        let doubled: Vec<ScoredBox> = preds.iter().flat_map(|p| [*p, *p]).collect();
        let a = average_precision(&[(preds, gts.clone())], thr).ap.unwrap_or(0.0);
        let b = average_precision(&[(doubled, gts)], thr).ap.unwrap_or(0.0);
        prop_assert!(b <= a, "{} > {}", b, a);
    }

    #[test]
    fn scaling_coordinates_leaves_ap_unchanged(c in cells(), j in jitters(), k in 0i32..4) {
        // powers of two keep every coordinate, and so every IoU, exact
        let f = 2f32.powi(k - 1);
        let gts = disjoint_gts(&c);
        let preds = preds_near(&gts, &j);
        let sg: Vec<[f32; 4]> = gts.iter().map(|b| b.map(|v| v * f)).collect();
        let sp: Vec<ScoredBox> = preds.iter().map(|p| ScoredBox { score: p.score, bbox: p.bbox.map(|v| v * f) }).collect();
        for t in iou_thresholds() {
            prop_assert_eq!(
                average_precision(&[(preds.clone(), gts.clone())], t).ap,
                average_precision(&[(sp.clone(), sg.clone())], t).ap
            );
        }
    }

    #[test]
    fn map_non_increasing_in_threshold_with_overlapping_gt(seed in any::<u64>()) {
        let (preds, gts) = synthetic_set(seed, 10, 2);
        let r = map_report(&preds, &gts, 2).unwrap();
        for c in &r.classes {
            prop_assert!(c.ap.windows(2).all(|w| w[1] <= w[0]), "{:?}", c.ap);
        }
    }

    #[test]
    fn map50_95_never_exceeds_map50(seed in any::<u64>()) {
        let (preds, gts) = synthetic_set(seed, 8, 2);
        let r = map_report(&preds, &gts, 2).unwrap();
        prop_assert!(r.map50_95 <= r.map50);
        prop_assert!((0.0..=1.0).contains(&r.map50) && (0.0..=1.0).contains(&r.map50_95));
    }
}
