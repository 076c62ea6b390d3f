//! The YOLOv10-nano network: topology, execution, and parameter/FLOP accounting.

mod topology;

pub use topology::{last_consumers, output_shapes, yolov10n_layers, Input, LayerKind, LayerSpec};

use serde::Serialize;

use crate::blocks::{C2f, C2fCib, Conv, ParamSource, Psa, ScDown, SlotCollector, Sppf, V10Detect, ZeroParams};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, upsample_nearest_x2, Tensor};

pub const REG_MAX: usize = 16;
pub const STRIDES: [usize; 3] = [8, 16, 32];
pub const INPUT_SIZE: usize = 640;

#[derive(Clone, Debug)]
enum Block {
    Conv(Conv),
    C2f(C2f),
    ScDown(ScDown),
    Sppf(Sppf),
    Psa(Psa),
    Upsample,
    Concat,
    C2fCib(C2fCib),
    Detect(V10Detect),
}

impl Block {
    fn build(src: &mut dyn ParamSource, spec: &LayerSpec) -> Result<Self> {
        let p = format!("model.{}", spec.index);
        Ok(match spec.kind {
            LayerKind::Conv { c1, c2, k, s } => {
                Block::Conv(Conv::build(src, &p, c1, c2, k, s, 1, crate::blocks::Act::Silu))
            }
            LayerKind::C2f { c1, c2, n, shortcut } => Block::C2f(C2f::build(src, &p, c1, c2, n, shortcut)?),
            LayerKind::ScDown { c1, c2, k, s } => Block::ScDown(ScDown::build(src, &p, c1, c2, k, s)),
            LayerKind::Sppf { c1, c2, k } => Block::Sppf(Sppf::build(src, &p, c1, c2, k)),
            LayerKind::Psa { c } => Block::Psa(Psa::build(src, &p, c)?),
            LayerKind::Upsample => Block::Upsample,
            LayerKind::Concat => Block::Concat,
            LayerKind::C2fCib {
                c1,
                c2,
                n,
                shortcut,
                large_kernel,
            } => Block::C2fCib(C2fCib::build(src, &p, c1, c2, n, shortcut, large_kernel)?),
            LayerKind::Detect {
                nc,
                reg_max,
                ref channels,
            } => Block::Detect(V10Detect::build(src, &p, nc, reg_max, channels)?),
        })
    }

    /// `(all parameters, parameters on the inference path)`.
    fn params(&self) -> (u64, u64) {
        let single = |n: u64| (n, n);
        match self {
            Block::Conv(b) => single(b.param_count()),
            Block::C2f(b) => single(b.param_count()),
            Block::ScDown(b) => single(b.param_count()),
            Block::Sppf(b) => single(b.param_count()),
            Block::Psa(b) => single(b.param_count()),
            Block::C2fCib(b) => single(b.param_count()),
            Block::Upsample | Block::Concat => (0, 0),
            Block::Detect(d) => {
                let o2o = d.one2one.param_count();
                (o2o + d.one2many.param_count(), o2o)
            }
        }
    }

    /// `(both detection heads, one-to-one only)`; identical for non-head layers.
    fn flops(&self, hw: (usize, usize), head_sizes: &[(usize, usize)]) -> (u64, u64) {
        let single = |n: u64| (n, n);
        match self {
            Block::Conv(b) => single(b.flops(hw)),
            Block::C2f(b) => single(b.flops(hw)),
            Block::ScDown(b) => single(b.flops(hw)),
            Block::Sppf(b) => single(b.flops(hw)),
            Block::Psa(b) => single(b.flops(hw)),
            Block::C2fCib(b) => single(b.flops(hw)),
            Block::Upsample | Block::Concat => (0, 0),
            Block::Detect(d) => {
                let o2o = d.one2one.flops(head_sizes);
                (o2o + d.one2many.flops(head_sizes), o2o)
            }
        }
    }
}

/// Output of one executed layer.
pub enum LayerOutput<'a> {
    Map(&'a Tensor),
    /// The detection head's per-level maps.
    Head(&'a [Tensor]),
}

/// The nano network, either bound to weights or an unbound skeleton.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    layers: Vec<LayerSpec>,
    blocks: Vec<Block>,
    slots: Vec<(String, Vec<usize>)>,
    bound: bool,
    nc: usize,
}

/// Builds the unbound nano graph for `nc` classes.
pub fn build_yolov10n(nc: usize) -> Result<ModelGraph> {
    let mut slots = SlotCollector::default();
    let mut g = ModelGraph::with_source(nc, &mut slots)?;
    g.slots = slots.slots;
    g.bound = false;
    Ok(g)
}

impl ModelGraph {
    /// Builds the graph taking every parameter from `src`; the result counts as bound.
    pub fn with_source(nc: usize, src: &mut dyn ParamSource) -> Result<Self> {
        if nc == 0 {
            return Err(Error::Construction("nc must be at least 1".into()));
        }
        let layers = yolov10n_layers(nc, REG_MAX);
        let blocks = layers
            .iter()
            .map(|l| Block::build(src, l))
            .collect::<Result<Vec<_>>>()?;
        let mut collector = SlotCollector::default();
        for l in &layers {
            Block::build(&mut collector, l)?;
        }
        Ok(Self {
            layers,
            blocks,
            slots: collector.slots,
            bound: true,
            nc,
        })
    }

    /// A bound graph whose parameters are all zero.
    pub fn zeros(nc: usize) -> Result<Self> {
        Self::with_source(nc, &mut ZeroParams)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Every parameter tensor the graph expects, as `(name, shape)` in construction order.
    pub fn slots(&self) -> &[(String, Vec<usize>)] {
        &self.slots
    }

    pub fn is_bound(&self) -> bool {
        self.bound
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn reg_max(&self) -> usize {
        REG_MAX
    }

    pub fn strides(&self) -> [usize; 3] {
        STRIDES
    }

    /// Runs the network and returns the three one-to-one head maps (strides 8, 16, 32).
    pub fn forward(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.forward_with_taps(input, |_, _| {})
    }

    /// Like [`forward`](Self::forward), calling `tap(index, output)` after every layer.
    ///
    /// Intermediate outputs are dropped as soon as their last consumer has run.
    pub fn forward_with_taps(
        &self,
        input: &Tensor,
        mut tap: impl FnMut(usize, LayerOutput<'_>),
    ) -> Result<Vec<Tensor>> {
        if !self.bound {
            return Err(Error::Unbound(self.slots.iter().map(|(n, _)| n.clone()).collect()));
        }
        let [n, c, h, w] = input.shape();
        if n != 1 || c != 3 || h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(
                "ModelGraph::forward",
                "[1, 3, H, W] with H and W positive multiples of 32",
                format!("{:?}", input.shape()),
            ));
        }
        let last_use = last_consumers(&self.layers);
        let mut outputs: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        for (spec, block) in self.layers.iter().zip(&self.blocks) {
            let sources = spec.sources();
            let get = |i: usize| -> &Tensor {
                if spec.index == 0 {
                    input
                } else {
                    outputs[sources[i]]
                        .as_ref()
                        .expect("producer output retained until last use")
                }
            };
            let out = match block {
                Block::Conv(b) => b.forward(get(0))?,
                Block::C2f(b) => b.forward(get(0))?,
                Block::ScDown(b) => b.forward(get(0))?,
                Block::Sppf(b) => b.forward(get(0))?,
                Block::Psa(b) => b.forward(get(0))?,
                Block::C2fCib(b) => b.forward(get(0))?,
                Block::Upsample => upsample_nearest_x2(get(0)),
                Block::Concat => {
                    let ins: Vec<&Tensor> = (0..sources.len()).map(get).collect();
                    concat_channels(&ins)?
                }
                Block::Detect(d) => {
                    let ins: Vec<&Tensor> = (0..sources.len()).map(get).collect();
                    let maps = d.forward(&ins)?;
                    tap(spec.index, LayerOutput::Head(&maps));
                    return Ok(maps);
                }
            };
            tap(spec.index, LayerOutput::Map(&out));
            if spec.index > 0 {
                for &s in &sources {
                    if last_use[s] == Some(spec.index) {
                        outputs[s] = None;
                    }
                }
            }
            outputs[spec.index] = Some(out);
        }
        Err(Error::Construction("graph has no detection head".into()))
    }

    /// Per-layer parameter counts; independent of input size.
    pub fn count_parameters(&self) -> ParamCounts {
        let per_layer: Vec<(u64, u64)> = self.blocks.iter().map(Block::params).collect();
        ParamCounts {
            total: per_layer.iter().map(|p| p.0).sum(),
            inference_path: per_layer.iter().map(|p| p.1).sum(),
            per_layer,
        }
    }

    /// Per-layer FLOPs for a square input of side `input_size`.
    pub fn estimate_flops(&self, input_size: usize) -> FlopCounts {
        let shapes = output_shapes(&self.layers, input_size);
        let per_layer: Vec<(u64, u64)> = self
            .layers
            .iter()
            .zip(&self.blocks)
            .map(|(spec, block)| {
                let srcs = spec.sources();
                let hw = if spec.index == 0 {
                    (input_size, input_size)
                } else {
                    (shapes[srcs[0]].1, shapes[srcs[0]].2)
                };
                let head: Vec<(usize, usize)> = srcs.iter().map(|&s| (shapes[s].1, shapes[s].2)).collect();
                block.flops(hw, &head)
            })
            .collect();
        FlopCounts {
            both_heads: per_layer.iter().map(|f| f.0).sum(),
            one2one: per_layer.iter().map(|f| f.1).sum(),
            per_layer,
        }
    }

    /// Parameter and FLOP accounting in one report.
    pub fn summary(&self, input_size: usize) -> ModelSummary {
        let params = self.count_parameters();
        let flops = self.estimate_flops(input_size);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| LayerSummary {
                index: i,
                kind: spec.kind.name().to_string(),
                from: spec.sources(),
                params: params.per_layer[i].0,
                params_inference: params.per_layer[i].1,
                flops_both_heads: flops.per_layer[i].0,
                flops_one2one: flops.per_layer[i].1,
            })
            .collect();
        ModelSummary {
            input_size,
            param_count_total: params.total,
            param_count_inference_path: params.inference_path,
            flops_both_heads: flops.both_heads,
            flops_one2one: flops.one2one,
            gflops_both_heads: flops.both_heads as f64 / 1e9,
            gflops_one2one: flops.one2one as f64 / 1e9,
            layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub total: u64,
    pub inference_path: u64,
    /// `(total, inference path)` per layer.
    pub per_layer: Vec<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopCounts {
    pub both_heads: u64,
    pub one2one: u64,
    /// `(both heads, one-to-one)` per layer.
    pub per_layer: Vec<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSummary {
    pub index: usize,
    pub kind: String,
    pub from: Vec<usize>,
    pub params: u64,
    pub params_inference: u64,
    pub flops_both_heads: u64,
    pub flops_one2one: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub input_size: usize,
    pub param_count_total: u64,
    pub param_count_inference_path: u64,
    pub flops_both_heads: u64,
    pub flops_one2one: u64,
    pub gflops_both_heads: f64,
    pub gflops_one2one: f64,
    pub layers: Vec<LayerSummary>,
}
