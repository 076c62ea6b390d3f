//! COCO-style detection metrics: greedy IoU matching, 101-point AP, mAP50 and mAP50:95.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::prepost::Detection;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// Intersection over union of two `[x1, y1, x2, y2]` boxes; 0 for an empty union.
pub fn iou(a: &[f32; 4], b: &[f32; 4]) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.map(f64::from);
    let [bx1, by1, bx2, by2] = b.map(f64::from);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let area_a = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0);
    let area_b = (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One ground-truth line in normalised YOLO form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub class_id: usize,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl GroundTruthBox {
    /// Absolute `[x1, y1, x2, y2]` for an image of the given size.
    pub fn to_xyxy(&self, width: usize, height: usize) -> [f32; 4] {
        let (w, h) = (width as f64, height as f64);
        let (cx, cy, bw, bh) = (
            self.cx as f64 * w,
            self.cy as f64 * h,
            self.w as f64 * w,
            self.h as f64 * h,
        );
        [
            (cx - bw / 2.0) as f32,
            (cy - bh / 2.0) as f32,
            (cx + bw / 2.0) as f32,
            (cy + bh / 2.0) as f32,
        ]
    }
}

/// Parses YOLO label text (`class cx cy w h` per line; blank lines ignored).
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<GroundTruthBox>> {
    let err = |line: usize, msg: String| Error::Label {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(err(line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id = fields[0]
            .parse::<usize>()
            .map_err(|_| err(line_no, format!("class {:?} is not a non-negative integer", fields[0])))?;
        let mut v = [0.0f32; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(line_no, format!("{f:?} is not a number")))?;
            if !(0.0..=1.0).contains(slot) {
                return Err(err(line_no, format!("{f} outside [0, 1]")));
            }
        }
        if v[2] <= 0.0 || v[3] <= 0.0 {
            return Err(err(line_no, "box width and height must be positive".into()));
        }
        out.push(GroundTruthBox {
            class_id,
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        });
    }
    Ok(out)
}

pub fn read_label_file(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_labels(&text, path)
}

/// Ground truth for one image in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GtBox {
    pub class_id: usize,
    pub bbox: [f32; 4],
}

/// Greedy matching of one image's predictions (already in rank order) for one class.
/// Returns whether each prediction is a true positive.
pub fn match_image(preds: &[[f32; 4]], gts: &[[f32; 4]], iou_thr: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(p, gt);
                if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Precision/recall summary for one class at one IoU threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ApResult {
    /// `None` when the class has neither ground truth nor predictions.
    pub ap: Option<f64>,
    /// Interpolated precision at recall 0.00, 0.01, ..., 1.00.
    pub precision_101: Vec<f64>,
    pub final_recall: f64,
    pub final_precision: f64,
}

/// 101-point interpolated AP from ranked true/false-positive flags.
pub fn ap_from_ranked(tp_flags: &[bool], n_gt: usize) -> ApResult {
    if n_gt == 0 {
        return ApResult {
            ap: if tp_flags.is_empty() { None } else { Some(0.0) },
            precision_101: vec![0.0; 101],
            final_recall: 0.0,
            final_precision: 0.0,
        };
    }
    let mut tp_cum = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += usize::from(hit);
        tp_cum.push(tp);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    // recall_i >= r/100 in exact integer arithmetic
    let mut precision_101 = Vec::with_capacity(101);
    let mut cursor = 0;
    for r in 0..=100usize {
        while cursor < tp_cum.len() && tp_cum[cursor] * 100 < r * n_gt {
            cursor += 1;
        }
        precision_101.push(if cursor < tp_cum.len() { precision[cursor] } else { 0.0 });
    }
    let ap = precision_101.iter().sum::<f64>() / 101.0;
    ApResult {
        ap: Some(ap),
        precision_101,
        final_recall: tp as f64 / n_gt as f64,
        final_precision: if tp_flags.is_empty() {
            0.0
        } else {
            tp as f64 / tp_flags.len() as f64
        },
    }
}

/// Scored box of one class, as fed to [`average_precision`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub score: f32,
    pub bbox: [f32; 4],
}

/// AP for a single class pooled over images; `images[i] = (predictions, ground truth)`.
///
/// Predictions are ranked by descending score; equal scores keep image order, then input order.
pub fn average_precision(images: &[(Vec<ScoredBox>, Vec<[f32; 4]>)], iou_thr: f64) -> ApResult {
    let mut ranked: Vec<(f32, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    for (img, (preds, gts)) in images.iter().enumerate() {
        n_gt += gts.len();
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
        let boxes: Vec<[f32; 4]> = order.iter().map(|&i| preds[i].bbox).collect();
        let hits = match_image(&boxes, gts, iou_thr);
        ranked.extend(order.iter().zip(hits).map(|(&i, hit)| (preds[i].score, img, i, hit)));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
    ap_from_ranked(&flags, n_gt)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub n_gt: usize,
    pub n_pred: usize,
    /// AP at each IoU threshold 0.50..0.95.
    pub ap: Vec<f64>,
    /// Final recall at each IoU threshold.
    pub recall: Vec<f64>,
    /// Final precision at each IoU threshold.
    pub precision: Vec<f64>,
    /// Interpolated precision at recall 0.00..1.00 for IoU 0.50.
    pub precision_101_at_50: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub map50: f64,
    pub map50_95: f64,
    pub iou_thresholds: Vec<f64>,
    /// Mean AP over evaluated classes at each threshold.
    pub map_per_threshold: Vec<f64>,
    pub images: usize,
    /// Classes with ground truth; these enter the means.
    pub classes: Vec<ClassReport>,
}

/// Evaluates per-image predictions against per-image ground truth (pixel coordinates).
pub fn map_report(preds: &[Vec<Detection>], gts: &[Vec<GtBox>], nc: usize) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(
            "map_report",
            format!("{} prediction sets for {} images", preds.len(), gts.len()),
        ));
    }
    let thresholds = iou_thresholds();
    let mut classes = Vec::new();
    for class in 0..nc {
        let images: Vec<(Vec<ScoredBox>, Vec<[f32; 4]>)> = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| {
                (
                    p.iter()
                        .filter(|d| d.class_id == class)
                        .map(|d| ScoredBox {
                            score: d.score,
                            bbox: d.bbox,
                        })
                        .collect(),
                    g.iter().filter(|b| b.class_id == class).map(|b| b.bbox).collect(),
                )
            })
            .collect();
        let n_gt: usize = images.iter().map(|i| i.1.len()).sum();
        if n_gt == 0 {
            continue;
        }
        let results: Vec<ApResult> = thresholds.iter().map(|&t| average_precision(&images, t)).collect();
        classes.push(ClassReport {
            class_id: class,
            n_gt,
            n_pred: images.iter().map(|i| i.0.len()).sum(),
            ap: results.iter().map(|r| r.ap.unwrap_or(0.0)).collect(),
            recall: results.iter().map(|r| r.final_recall).collect(),
            precision: results.iter().map(|r| r.final_precision).collect(),
            precision_101_at_50: results[0].precision_101.clone(),
        });
    }
    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|t| {
            if classes.is_empty() {
                0.0
            } else {
                classes.iter().map(|c| c.ap[t]).sum::<f64>() / classes.len() as f64
            }
        })
        .collect();
    Ok(MetricsReport {
        map50: map_per_threshold[0],
        map50_95: map_per_threshold.iter().sum::<f64>() / thresholds.len() as f64,
        iou_thresholds: thresholds.to_vec(),
        map_per_threshold,
        images: preds.len(),
        classes,
    })
}
