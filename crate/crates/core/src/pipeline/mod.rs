//! Frame ingestion, detection and counting, benchmarking, evaluation and inspection.

mod overlay;
mod source;

pub use overlay::{draw_box, render_overlay};
pub use source::{encode_ppm, list_images, parse_ppm, read_image, write_ppm, Frame, FrameSource};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, ModelSummary, INPUT_SIZE};
use crate::metrics::{map_report, parse_labels, read_label_file, GtBox, MetricsReport};
use crate::prepost::{decode_one2one, letterbox, unletterbox, DecodeConfig, Detection, LetterboxTransform, RgbImage};
use crate::tensor::Tensor;
use crate::weights::{load_model, ModelMeta};

/// A bound model plus decoding settings.
pub struct Detector {
    pub model: ModelGraph,
    pub cfg: DecodeConfig,
    pub input_size: usize,
}

/// Detections for one frame with its timings.
#[derive(Clone, Debug)]
pub struct Processed {
    pub detections: Vec<Detection>,
    pub model_latency: Duration,
    pub e2e_latency: Duration,
}

impl Detector {
    pub fn new(model: ModelGraph, cfg: DecodeConfig, input_size: usize) -> Result<Self> {
        cfg.validate()?;
        if input_size == 0 || !input_size.is_multiple_of(32) {
            return Err(Error::invalid(
                "Detector",
                format!("input size {input_size} must be a positive multiple of 32"),
            ));
        }
        Ok(Self { model, cfg, input_size })
    }

    /// Loads a container from disk with the standard 640 input.
    pub fn from_weights(path: &Path, cfg: DecodeConfig) -> Result<(Self, ModelMeta)> {
        let (model, meta) = load_model(path)?;
        let mut cfg = cfg;
        cfg.strides = meta.strides.clone();
        cfg.reg_max = meta.reg_max;
        Ok((Self::new(model, cfg, INPUT_SIZE)?, meta))
    }

    pub fn preprocess(&self, img: &RgbImage) -> Result<(Tensor, LetterboxTransform)> {
        letterbox(img, self.input_size)
    }

    /// Runs the network and decoding on a letterboxed input; returns original-image boxes
    /// and the model-only latency.
    pub fn infer(&self, input: &Tensor, transform: &LetterboxTransform) -> Result<(Vec<Detection>, Duration)> {
        let start = Instant::now();
        let heads = self.model.forward(input)?;
        let model_latency = start.elapsed();
        let dets = decode_one2one(&heads, &self.cfg)?;
        Ok((unletterbox(&dets, transform), model_latency))
    }

    /// Preprocess, infer and postprocess one decoded frame.
    pub fn process(&self, img: &RgbImage) -> Result<Processed> {
        let start = Instant::now();
        let (input, t) = self.preprocess(img)?;
        let (detections, model_latency) = self.infer(&input, &t)?;
        Ok(Processed {
            detections,
            model_latency,
            e2e_latency: start.elapsed(),
        })
    }
}

/// One line of detection output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: usize,
    pub count: usize,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_latency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "e2e_latency_s")]
    pub end_to_end_latency_s: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct DetectOptions {
    pub overlay_dir: Option<PathBuf>,
    /// Omit latency fields so output is reproducible byte for byte.
    pub no_timing: bool,
    /// Decode and letterbox the next frame on a helper thread while the current one runs.
    pub pipelined: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DetectSummary {
    pub frames_ok: usize,
    pub frames_failed: usize,
}

struct Prepared {
    index: usize,
    name: String,
    work: Result<(RgbImage, Tensor, LetterboxTransform, Duration)>,
}

fn prepare(det: &Detector, frame: Frame) -> Prepared {
    let work = frame.image.and_then(|img| {
        let start = Instant::now();
        let (t, tf) = det.preprocess(&img)?;
        Ok((img, t, tf, start.elapsed()))
    });
    Prepared {
        index: frame.index,
        name: frame.name,
        work,
    }
}

/// Runs detection over every frame, writing one JSON line per successful frame.
///
/// Failed frames are logged and skipped; the caller decides how to report them.
pub fn run_detect(
    det: &Detector,
    source: FrameSource,
    opts: &DetectOptions,
    out: &mut dyn Write,
) -> Result<DetectSummary> {
    if let Some(dir) = &opts.overlay_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut summary = DetectSummary::default();
    let mut handle = |p: Prepared| -> Result<()> {
        let result = p.work.and_then(|(img, input, tf, prep)| {
            let start = Instant::now();
            let (dets, model) = det.infer(&input, &tf)?;
            Ok((img, dets, model, prep + start.elapsed()))
        });
        match result {
            Ok((img, dets, model, e2e)) => {
                let line = FrameResult {
                    frame: p.index,
                    count: dets.len(),
                    model_latency_s: (!opts.no_timing).then_some(model.as_secs_f64()),
                    end_to_end_latency_s: (!opts.no_timing).then_some(e2e.as_secs_f64()),
                    detections: dets,
                };
                serde_json::to_writer(&mut *out, &line)?;
                out.write_all(b"\n").map_err(|e| Error::io("writing results", e))?;
                if let Some(dir) = &opts.overlay_dir {
                    write_ppm(
                        &render_overlay(&img, &line.detections),
                        &dir.join(format!("frame_{:06}.ppm", p.index)),
                    )?;
                }
                summary.frames_ok += 1;
            }
            Err(e) => {
                log::error!("frame {} ({}): {e}", p.index, p.name);
                summary.frames_failed += 1;
            }
        }
        Ok(())
    };

    if opts.pipelined {
        std::thread::scope(|s| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Prepared>(1);
            s.spawn(move || {
                for frame in source {
                    if tx.send(prepare(det, frame)).is_err() {
                        break;
                    }
                }
            });
            for p in rx {
                handle(p)?;
            }
            Ok(())
        })?;
    } else {
        for frame in source {
            handle(prepare(det, frame))?;
        }
    }
    out.flush().map_err(|e| Error::io("flushing results", e))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub warmup_frames: usize,
    pub input_size: usize,
    pub threads: usize,
    pub total_time_s: f64,
    pub avg_fps: f64,
    pub avg_model_latency_s: f64,
    pub avg_end_to_end_latency_s: f64,
}

/// Times detection over `frames` decoded images, cycling through them.
///
/// The first `warmup` runs are excluded. End-to-end latency covers letterboxing,
/// the forward pass and decoding; reading and decoding image files is not timed.
pub fn run_bench(det: &Detector, images: &[RgbImage], warmup: usize, frames: usize) -> Result<BenchReport> {
    if images.is_empty() || frames == 0 {
        return Err(Error::invalid("bench", "need at least one image and one timed frame"));
    }
    let mut cycle = images.iter().cycle();
    for img in cycle.by_ref().take(warmup) {
        det.process(img)?;
    }
    let mut model = Duration::ZERO;
    let mut e2e = Duration::ZERO;
    let start = Instant::now();
    for img in cycle.take(frames) {
        let p = det.process(img)?;
        model += p.model_latency;
        e2e += p.e2e_latency;
    }
    let total = start.elapsed().as_secs_f64();
    let n = frames as f64;
    Ok(BenchReport {
        frames,
        warmup_frames: warmup,
        input_size: det.input_size,
        threads: rayon::current_num_threads(),
        total_time_s: total,
        avg_fps: n / total,
        avg_model_latency_s: model.as_secs_f64() / n,
        avg_end_to_end_latency_s: e2e.as_secs_f64() / n,
    })
}

/// Where evaluation predictions come from.
pub enum PredictionSource<'a> {
    Model(&'a Detector),
    /// JSON lines in the detect output format, matched to images by frame index.
    Jsonl(PathBuf),
    /// One YOLO label file per image; an optional sixth column is the score (default 1).
    LabelDir(PathBuf),
}

fn label_path(labels: &Path, image: &Path) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default();
    labels.join(stem).with_extension("txt")
}

fn read_prediction_labels(path: &Path, width: usize, height: usize) -> Result<Vec<Detection>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let (boxed, score) = match fields.len() {
            5 => (line.to_string(), 1.0),
            6 => {
                let s: f32 = fields[5].parse().map_err(|_| Error::Label {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("score {:?} is not a number", fields[5]),
                })?;
                (fields[..5].join(" "), s)
            }
            n => {
                return Err(Error::Label {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected 5 or 6 fields, found {n}"),
                })
            }
        };
        let gt = parse_labels(&boxed, path).map_err(|e| match e {
            Error::Label { path, msg, .. } => Error::Label { path, line: i + 1, msg },
            other => other,
        })?;
        out.extend(gt.into_iter().map(|g| Detection {
            bbox: g.to_xyxy(width, height),
            score,
            class_id: g.class_id,
        }));
    }
    Ok(out)
}

/// Evaluates predictions for every image in `images_dir` against `labels_dir`.
///
/// Images without a label file have no ground truth. `nc` defaults to one more than
/// the largest class id seen.
pub fn run_eval(
    images_dir: &Path,
    labels_dir: &Path,
    preds: PredictionSource<'_>,
    nc: Option<usize>,
) -> Result<MetricsReport> {
    let images = list_images(images_dir)?;
    if images.is_empty() {
        return Err(Error::invalid("eval", format!("no images in {}", images_dir.display())));
    }
    let has_labels = std::fs::read_dir(labels_dir)
        .map_err(|e| Error::io(format!("listing {}", labels_dir.display()), e))?
        .filter_map(|e| e.ok())
        .any(|e| e.path().extension().is_some_and(|x| x == "txt"));
    if !has_labels {
        return Err(Error::invalid(
            "eval",
            format!("no label files in {}", labels_dir.display()),
        ));
    }

    let jsonl: Option<Vec<FrameResult>> = match &preds {
        PredictionSource::Jsonl(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            let mut rows = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                rows.push(serde_json::from_str::<FrameResult>(line)?);
            }
            Some(rows)
        }
        _ => None,
    };

    let mut all_preds = Vec::with_capacity(images.len());
    let mut all_gts = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let img = read_image(path)?;
        let lp = label_path(labels_dir, path);
        let gts: Vec<GtBox> = if lp.exists() {
            read_label_file(&lp)?
                .into_iter()
                .map(|g| GtBox {
                    class_id: g.class_id,
                    bbox: g.to_xyxy(img.width, img.height),
                })
                .collect()
        } else {
            log::debug!("{}: no label file, treating as empty", path.display());
            Vec::new()
        };
        let p = match &preds {
            PredictionSource::Model(det) => det.process(&img)?.detections,
            PredictionSource::Jsonl(_) => jsonl
                .as_ref()
                .and_then(|rows| rows.iter().find(|r| r.frame == i))
                .map(|r| r.detections.clone())
                .unwrap_or_default(),
            PredictionSource::LabelDir(dir) => read_prediction_labels(&label_path(dir, path), img.width, img.height)?,
        };
        all_preds.push(p);
        all_gts.push(gts);
    }
    let nc = nc.unwrap_or_else(|| {
        let max_gt = all_gts.iter().flatten().map(|g| g.class_id);
        let max_pred = all_preds.iter().flatten().map(|d| d.class_id);
        max_gt.chain(max_pred).max().map_or(1, |m| m + 1)
    });
    map_report(&all_preds, &all_gts, nc)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InspectReport {
    pub arch: String,
    pub nc: usize,
    pub reg_max: usize,
    pub strides: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Pre-fusion count recorded by the exporter.
    pub param_count_prefusion: u64,
    /// Fused count recorded by the exporter.
    pub param_count_fused_manifest: u64,
    #[serde(flatten)]
    pub summary: ModelSummary,
}

pub fn run_inspect(weights: &Path, input_size: usize) -> Result<InspectReport> {
    let (model, meta) = load_model(weights)?;
    Ok(InspectReport {
        arch: meta.arch,
        nc: meta.nc,
        reg_max: meta.reg_max,
        strides: meta.strides,
        source: meta.source,
        param_count_prefusion: meta.param_count_prefusion,
        param_count_fused_manifest: meta.param_count_fused,
        summary: model.summary(input_size),
    })
}
