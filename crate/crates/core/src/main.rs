use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reefscan::graph::INPUT_SIZE;
use reefscan::pipeline::{self, DetectOptions, Detector, FrameSource, PredictionSource};
use reefscan::prepost::DecodeConfig;

#[derive(Parser)]
#[command(
    name = "reefscan",
    version,
    about = "Fish detection and counting with a CPU YOLOv10-nano engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect and count fish, one JSON line per frame
    Detect(DetectArgs),
    /// Time the detector and print a JSON report
    Bench(BenchArgs),
    /// Compute mAP50 and mAP50:95 against YOLO label files
    Eval(EvalArgs),
    /// Print parameter and FLOP accounting for a weight container
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// Image directory, or `-` for raw RGB24 frames on stdin
    #[arg(long)]
    source: PathBuf,
    /// Frame width for raw streams
    #[arg(long)]
    width: Option<usize>,
    /// Frame height for raw streams
    #[arg(long)]
    height: Option<usize>,
    /// Nominal stream frame rate, recorded only
    #[arg(long)]
    fps_meta: Option<f64>,
}

impl SourceArgs {
    fn open(&self) -> reefscan::Result<FrameSource> {
        if self.source == Path::new("-") {
            let (w, h) = (self.width.unwrap_or(0), self.height.unwrap_or(0));
            if let Some(fps) = self.fps_meta {
                log::info!("raw stream {w}x{h} at nominal {fps} fps");
            }
            FrameSource::raw_stream(Box::new(std::io::stdin()), w, h)
        } else {
            FrameSource::image_dir(&self.source)
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 0.25)]
    conf: f32,
    #[arg(long, default_value_t = 300)]
    max_det: usize,
    /// Results file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for annotated PPM frames
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Leave latency fields out of the results
    #[arg(long)]
    no_timing: bool,
    /// Prepare the next frame on a second thread while the current one runs
    #[arg(long)]
    pipelined: bool,
    #[arg(long, default_value_t = INPUT_SIZE)]
    imgsz: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Timed frames; defaults to the number of source frames
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    conf: f32,
    #[arg(long, default_value_t = INPUT_SIZE)]
    imgsz: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Required unless --preds is given
    #[arg(long, required_unless_present = "preds")]
    weights: Option<PathBuf>,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    conf: f32,
    #[arg(long, default_value_t = 300)]
    max_det: usize,
    /// Precomputed predictions: a detect JSONL file or a directory of YOLO label files
    #[arg(long)]
    preds: Option<PathBuf>,
    /// Number of classes when no weights are loaded
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long, default_value_t = INPUT_SIZE)]
    imgsz: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = INPUT_SIZE)]
    imgsz: usize,
}

fn detector(weights: &Path, conf: f32, max_det: usize, imgsz: usize) -> reefscan::Result<Detector> {
    let mut cfg = DecodeConfig::with_conf(conf);
    cfg.max_det = max_det;
    let (det, meta) = Detector::from_weights(weights, cfg)?;
    log::info!("loaded {} (nc={}) from {}", meta.arch, meta.nc, weights.display());
    Detector::new(det.model, det.cfg, imgsz)
}

fn print_json(value: &impl serde::Serialize) -> reefscan::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn detect(a: DetectArgs) -> reefscan::Result<bool> {
    let det = detector(&a.weights, a.conf, a.max_det, a.imgsz)?;
    let source = a.source.open()?;
    let opts = DetectOptions {
        overlay_dir: a.overlay,
        no_timing: a.no_timing,
        pipelined: a.pipelined,
    };
    let summary = match &a.out {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| reefscan::Error::io(format!("creating {}", path.display()), e))?;
            let mut out = BufWriter::new(file);
            pipeline::run_detect(&det, source, &opts, &mut out)?
        }
        None => {
            let mut out = std::io::stdout().lock();
            pipeline::run_detect(&det, source, &opts, &mut out)?
        }
    };
    log::info!(
        "{} frames processed, {} failed",
        summary.frames_ok,
        summary.frames_failed
    );
    if summary.frames_failed > 0 {
        eprintln!("error: {} frame(s) failed", summary.frames_failed);
    }
    Ok(summary.frames_failed == 0)
}

fn bench(a: BenchArgs) -> reefscan::Result<bool> {
    let det = detector(&a.weights, a.conf, 300, a.imgsz)?;
    let mut images = Vec::new();
    for frame in a.source.open()? {
        images.push(frame.image?);
    }
    let frames = a.frames.unwrap_or(images.len());
    print_json(&pipeline::run_bench(&det, &images, a.warmup, frames)?)?;
    Ok(true)
}

fn eval(a: EvalArgs) -> reefscan::Result<bool> {
    let det;
    let (source, nc) = match (&a.preds, &a.weights) {
        (Some(p), _) if p.is_dir() => (PredictionSource::LabelDir(p.clone()), a.nc),
        (Some(p), _) => (PredictionSource::Jsonl(p.clone()), a.nc),
        (None, Some(w)) => {
            det = detector(w, a.conf, a.max_det, a.imgsz)?;
            let nc = det.model.nc();
            (PredictionSource::Model(&det), Some(nc))
        }
        (None, None) => unreachable!("clap requires --weights without --preds"),
    };
    print_json(&pipeline::run_eval(&a.images, &a.labels, source, nc)?)?;
    Ok(true)
}

fn inspect(a: InspectArgs) -> reefscan::Result<bool> {
    print_json(&pipeline::run_inspect(&a.weights, a.imgsz)?)?;
    Ok(true)
}

/// Applies REEFSCAN_THREADS to the global worker pool.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("REEFSCAN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("REEFSCAN_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Detect(a) => detect(a),
        Command::Bench(a) => bench(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
