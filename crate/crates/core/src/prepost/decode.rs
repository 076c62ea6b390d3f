use serde::{Deserialize, Serialize};

use super::LetterboxTransform;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub reg_max: usize,
    pub strides: Vec<usize>,
    /// Detections must score strictly above this.
    pub conf_threshold: f32,
    pub max_det: usize,
}

impl DecodeConfig {
    pub const DETECT_CONF: f32 = 0.25;
    pub const EVAL_CONF: f32 = 0.001;

    pub fn detect() -> Self {
        Self::with_conf(Self::DETECT_CONF)
    }

    pub fn eval() -> Self {
        Self::with_conf(Self::EVAL_CONF)
    }

    pub fn with_conf(conf_threshold: f32) -> Self {
        Self {
            reg_max: 16,
            strides: vec![8, 16, 32],
            conf_threshold,
            max_det: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::invalid(
                "DecodeConfig",
                format!("conf_threshold {} outside [0, 1]", self.conf_threshold),
            ));
        }
        if self.max_det == 0 {
            return Err(Error::invalid("DecodeConfig", "max_det must be at least 1"));
        }
        if self.reg_max == 0 || self.strides.is_empty() {
            return Err(Error::invalid("DecodeConfig", "reg_max and strides must be non-empty"));
        }
        Ok(())
    }
}

/// One detected object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `[x1, y1, x2, y2]`.
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub score: f32,
    #[serde(rename = "class")]
    pub class_id: usize,
}

/// Anchor centres in grid units and the stride of each.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchors {
    pub points: Vec<[f32; 2]>,
    pub strides: Vec<f32>,
}

impl Anchors {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cell-centre anchors for every level of a square input, finest level first.
pub fn make_anchors(strides: &[usize], size: usize) -> Anchors {
    let grids: Vec<(usize, usize)> = strides.iter().map(|&s| (size / s, size / s)).collect();
    anchors_for_grids(strides, &grids)
}

fn anchors_for_grids(strides: &[usize], grids: &[(usize, usize)]) -> Anchors {
    let total: usize = grids.iter().map(|(h, w)| h * w).sum();
    let mut points = Vec::with_capacity(total);
    let mut out_strides = Vec::with_capacity(total);
    for (&s, &(h, w)) in strides.iter().zip(grids) {
        for y in 0..h {
            for x in 0..w {
                points.push([x as f32 + 0.5, y as f32 + 0.5]);
                out_strides.push(s as f32);
            }
        }
    }
    Anchors {
        points,
        strides: out_strides,
    }
}

/// Expected bin index under a softmax over `logits`.
pub fn dfl_expectation(logits: &[f32]) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut num = 0.0f32;
    let mut den = 0.0f32;
    for (i, &l) in logits.iter().enumerate() {
        let e = (l - max).exp();
        num += i as f32 * e;
        den += e;
    }
    num / den
}

/// Indices of the highest scores above `conf`, best first, at most `max_det`.
/// Equal scores keep the lower index first.
pub fn select_top(scores: &[f32], conf: f32, max_det: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > conf).collect();
    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if idx.len() > max_det {
        idx.select_nth_unstable_by(max_det - 1, by_rank);
        idx.truncate(max_det);
    }
    idx.sort_unstable_by(by_rank);
    idx
}

/// Decodes the one-to-one head maps into boxes in letterbox pixel coordinates.
pub fn decode_one2one(heads: &[Tensor], cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if heads.len() != cfg.strides.len() {
        return Err(Error::invalid(
            "decode_one2one",
            format!("{} head maps for {} strides", heads.len(), cfg.strides.len()),
        ));
    }
    let box_ch = 4 * cfg.reg_max;
    let channels = heads[0].c();
    if channels <= box_ch {
        return Err(Error::shape(
            "decode_one2one",
            format!("more than {box_ch} channels"),
            channels.to_string(),
        ));
    }
    let nc = channels - box_ch;
    for h in heads {
        if h.n() != 1 || h.c() != channels {
            return Err(Error::shape(
                "decode_one2one",
                format!("[1, {channels}, H, W] for every level"),
                format!("{:?}", h.shape()),
            ));
        }
    }
    let grids: Vec<(usize, usize)> = heads.iter().map(|h| (h.h(), h.w())).collect();
    let anchors = anchors_for_grids(&cfg.strides, &grids);

    // (level, position within level) for every flattened anchor
    let mut locate = Vec::with_capacity(anchors.len());
    let mut best = Vec::with_capacity(anchors.len());
    for (level, h) in heads.iter().enumerate() {
        let hw = h.h() * h.w();
        let d = h.data();
        for p in 0..hw {
            let mut cls = 0;
            let mut logit = d[box_ch * hw + p];
            for c in 1..nc {
                let v = d[(box_ch + c) * hw + p];
                if v > logit {
                    logit = v;
                    cls = c;
                }
            }
            locate.push((level, p));
            best.push((sigmoid_scalar(logit), cls));
        }
    }
    let scores: Vec<f32> = best.iter().map(|b| b.0).collect();
    let keep = select_top(&scores, cfg.conf_threshold, cfg.max_det);

    let mut bins = vec![0.0f32; cfg.reg_max];
    Ok(keep
        .into_iter()
        .map(|i| {
            let (level, p) = locate[i];
            let h = &heads[level];
            let hw = h.h() * h.w();
            let d = h.data();
            let mut dist = [0.0f32; 4];
            for (side, slot) in dist.iter_mut().enumerate() {
                for (b, v) in bins.iter_mut().enumerate() {
                    *v = d[(side * cfg.reg_max + b) * hw + p];
                }
                *slot = dfl_expectation(&bins);
            }
            let [ax, ay] = anchors.points[i];
            let s = anchors.strides[i];
            Detection {
                bbox: [
                    (ax - dist[0]) * s,
                    (ay - dist[1]) * s,
                    (ax + dist[2]) * s,
                    (ay + dist[3]) * s,
                ],
                score: best[i].0,
                class_id: best[i].1,
            }
        })
        .collect())
}

/// Maps detections back to original-image pixels, clipped to the image.
pub fn unletterbox(dets: &[Detection], t: &LetterboxTransform) -> Vec<Detection> {
    let (w, h) = (t.width as f32, t.height as f32);
    dets.iter()
        .map(|d| {
            let (x1, y1) = t.to_original(d.bbox[0], d.bbox[1]);
            let (x2, y2) = t.to_original(d.bbox[2], d.bbox[3]);
            Detection {
                bbox: [x1.clamp(0.0, w), y1.clamp(0.0, h), x2.clamp(0.0, w), y2.clamp(0.0, h)],
                ..d.clone()
            }
        })
        .collect()
}
