use super::{Act, Conv, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, Tensor};

/// Per-level box and class branches.
#[derive(Clone, Debug)]
pub struct DetectBranch {
    pub box_convs: [Conv; 3],
    pub cls_convs: [Conv; 5],
}

impl DetectBranch {
    fn build(
        src: &mut dyn ParamSource,
        box_prefix: &str,
        cls_prefix: &str,
        x: usize,
        c2: usize,
        c3: usize,
        nc: usize,
        box_out: usize,
    ) -> Self {
        let b = |i: &str| format!("{box_prefix}.{i}");
        let c = |i: &str| format!("{cls_prefix}.{i}");
        Self {
            box_convs: [
                Conv::build(src, &b("0"), x, c2, 3, 1, 1, Act::Silu),
                Conv::build(src, &b("1"), c2, c2, 3, 1, 1, Act::Silu),
                Conv::plain(src, &b("2"), c2, box_out),
            ],
            cls_convs: [
                Conv::build(src, &c("0.0"), x, x, 3, 1, x, Act::Silu),
                Conv::build(src, &c("0.1"), x, c3, 1, 1, 1, Act::Silu),
                Conv::build(src, &c("1.0"), c3, c3, 3, 1, c3, Act::Silu),
                Conv::build(src, &c("1.1"), c3, c3, 1, 1, 1, Act::Silu),
                Conv::plain(src, &c("2"), c3, nc),
            ],
        }
    }

    /// Returns `[box distributions | class logits]` along channels.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut b = self.box_convs[0].forward(x)?;
        for conv in &self.box_convs[1..] {
            b = conv.forward(&b)?;
        }
        let mut c = self.cls_convs[0].forward(x)?;
        for conv in &self.cls_convs[1..] {
            c = conv.forward(&c)?;
        }
        concat_channels(&[&b, &c])
    }

    fn param_count(&self) -> u64 {
        self.box_convs
            .iter()
            .chain(&self.cls_convs)
            .map(Conv::param_count)
            .sum()
    }

    fn flops(&self, hw: (usize, usize)) -> u64 {
        self.box_convs.iter().chain(&self.cls_convs).map(|c| c.flops(hw)).sum()
    }
}

/// One branch per pyramid level.
#[derive(Clone, Debug)]
pub struct HeadSet {
    pub levels: Vec<DetectBranch>,
}

impl HeadSet {
    pub fn param_count(&self) -> u64 {
        self.levels.iter().map(DetectBranch::param_count).sum()
    }

    /// FLOPs given the spatial size of each level's input.
    pub fn flops(&self, sizes: &[(usize, usize)]) -> u64 {
        self.levels.iter().zip(sizes).map(|(l, &hw)| l.flops(hw)).sum()
    }
}

/// Dual-assignment detection head.
///
/// Both the one-to-one and one-to-many branch sets are loaded so the parameter
/// count matches the trained checkpoint; only the one-to-one set is evaluated.
#[derive(Clone, Debug)]
pub struct V10Detect {
    pub one2one: HeadSet,
    pub one2many: HeadSet,
    pub nc: usize,
    pub reg_max: usize,
}

impl V10Detect {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        nc: usize,
        reg_max: usize,
        channels: &[usize],
    ) -> Result<Self> {
        if nc == 0 || channels.is_empty() {
            return Err(Error::Construction(format!(
                "{prefix}: detection head needs nc >= 1 and at least one level"
            )));
        }
        let c2 = (channels[0] / 4).max(16).max(reg_max * 4);
        let c3 = channels[0].max(nc.min(100));
        let box_out = 4 * reg_max;
        let set = |box_name: &str, cls_name: &str, src: &mut dyn ParamSource| HeadSet {
            levels: channels
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    DetectBranch::build(
                        src,
                        &format!("{prefix}.{box_name}.{i}"),
                        &format!("{prefix}.{cls_name}.{i}"),
                        x,
                        c2,
                        c3,
                        nc,
                        box_out,
                    )
                })
                .collect(),
        };
        let one2many = set("cv2", "cv3", src);
        let one2one = set("one2one_cv2", "one2one_cv3", src);
        Ok(Self {
            one2one,
            one2many,
            nc,
            reg_max,
        })
    }

    /// Evaluates the one-to-one branches; returns one `[1, 4·reg_max + nc, H, W]` map per level.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Vec<Tensor>> {
        if inputs.len() != self.one2one.levels.len() {
            return Err(Error::invalid(
                "V10Detect::forward",
                format!(
                    "expected {} feature maps, got {}",
                    self.one2one.levels.len(),
                    inputs.len()
                ),
            ));
        }
        self.one2one
            .levels
            .iter()
            .zip(inputs)
            .map(|(b, x)| b.forward(x))
            .collect()
    }

    pub fn out_channels(&self) -> usize {
        4 * self.reg_max + self.nc
    }
}
