//! Engine outputs against the committed reference fixtures.

use serde::Deserialize;

use reefscan::graph::LayerOutput;
use reefscan::pipeline::{read_image, Detector};
use reefscan::prepost::{DecodeConfig, Detection};
use reefscan::weights::{load_model, read_container};

use super::fixture;
use super::naive::{self, Agreement};

#[derive(Deserialize)]
pub struct ReferenceImage {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<Detection>,
}

#[derive(Deserialize)]
pub struct ReferenceFile {
    pub conf: f32,
    pub max_det: usize,
    pub images: Vec<ReferenceImage>,
}

/// Max-abs deviation of every tapped layer output from the golden activations.
pub fn layer_deviations() -> Vec<(String, f32)> {
    let (model, _) = load_model(fixture("yolov10n_random.fwc")).unwrap();
    let golden = read_container(fixture("golden_activations.fwc")).unwrap();
    let input = golden.get("input").unwrap().to_tensor().unwrap();
    let mut out = Vec::new();
    model
        .forward_with_taps(&input, |i, o| match o {
            LayerOutput::Map(t) => {
                let want = golden.get(&format!("layer.{i}.output")).unwrap().to_tensor().unwrap();
                out.push((format!("layer.{i}"), t.max_abs_diff(&want)));
            }
            LayerOutput::Head(maps) => {
                for (k, t) in maps.iter().enumerate() {
                    let want = golden
                        .get(&format!("layer.{i}.output.{k}"))
                        .unwrap()
                        .to_tensor()
                        .unwrap();
                    out.push((format!("layer.{i}.{k}"), t.max_abs_diff(&want)));
                }
            }
        })
        .unwrap();
    out
}

/// Engine forward and decode on the golden input against the textbook decode of the
/// golden head maps.
pub fn golden_input_detections(conf: f32) -> Result<Agreement, String> {
    let (model, meta) = load_model(fixture("yolov10n_random.fwc")).unwrap();
    let golden = read_container(fixture("golden_activations.fwc")).unwrap();
    let input = golden.get("input").unwrap().to_tensor().unwrap();
    let heads: Vec<_> = (0..3)
        .map(|k| {
            golden
                .get(&format!("layer.23.output.{k}"))
                .unwrap()
                .to_tensor()
                .unwrap()
        })
        .collect();
    let want = naive::decode(&heads, &meta.strides, meta.reg_max, conf, 300);
    let mut cfg = DecodeConfig::with_conf(conf);
    cfg.strides = meta.strides.clone();
    let got = reefscan::prepost::decode_one2one(&model.forward(&input).unwrap(), &cfg).unwrap();
    naive::compare_detections(&got, &want)
}

/// Per-image agreement between the full detect path and the reference detections.
pub fn image_detections() -> Vec<(String, Result<Agreement, String>)> {
    let text = std::fs::read_to_string(fixture("reference_detections.json")).unwrap();
    let reference: ReferenceFile = serde_json::from_str(&text).unwrap();
    let mut cfg = DecodeConfig::with_conf(reference.conf);
    cfg.max_det = reference.max_det;
    let (det, _) = Detector::from_weights(&fixture("yolov10n_random.fwc"), cfg).unwrap();
    reference
        .images
        .iter()
        .map(|r| {
            let img = read_image(&fixture("images").join(&r.image)).unwrap();
            assert_eq!((img.width, img.height), (r.width, r.height), "{}", r.image);
            let got = det.process(&img).unwrap().detections;
            (r.image.clone(), naive::compare_detections(&got, &r.detections))
        })
        .collect()
}
