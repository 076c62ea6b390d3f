use super::{Act, Conv, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::{add_inplace, concat_channels, split_channels, Tensor};

/// Two 3×3 convs with an optional residual.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub cv1: Conv,
    pub cv2: Conv,
    pub shortcut: bool,
}

impl Bottleneck {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, c: usize, shortcut: bool) -> Self {
        Self {
            cv1: Conv::build(src, &format!("{prefix}.cv1"), c, c, 3, 1, 1, Act::Silu),
            cv2: Conv::build(src, &format!("{prefix}.cv2"), c, c, 3, 1, 1, Act::Silu),
            shortcut,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.cv2.forward(&self.cv1.forward(x)?)?;
        if self.shortcut {
            add_inplace(&mut y, x)?;
        }
        Ok(y)
    }

    fn param_count(&self) -> u64 {
        self.cv1.param_count() + self.cv2.param_count()
    }

    fn flops(&self, hw: (usize, usize)) -> u64 {
        self.cv1.flops(hw) + self.cv2.flops(hw)
    }
}

/// Compact inverted block: dw3×3 → 1×1 expand → dw7×7 (or 3×3) → 1×1 project → dw3×3.
///
/// The large-kernel stage arrives as a single fused 7×7 depthwise conv.
#[derive(Clone, Debug)]
pub struct Cib {
    pub stages: [Conv; 5],
    pub shortcut: bool,
}

impl Cib {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, c: usize, shortcut: bool, large_kernel: bool) -> Self {
        let hidden = 2 * c;
        let mid_k = if large_kernel { 7 } else { 3 };
        let p = |i: usize| format!("{prefix}.cv1.{i}");
        Self {
            stages: [
                Conv::build(src, &p(0), c, c, 3, 1, c, Act::Silu),
                Conv::build(src, &p(1), c, hidden, 1, 1, 1, Act::Silu),
                Conv::build(src, &p(2), hidden, hidden, mid_k, 1, hidden, Act::Silu),
                Conv::build(src, &p(3), hidden, c, 1, 1, 1, Act::Silu),
                Conv::build(src, &p(4), c, c, 3, 1, c, Act::Silu),
            ],
            shortcut,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.stages[0].forward(x)?;
        for s in &self.stages[1..] {
            y = s.forward(&y)?;
        }
        if self.shortcut {
            add_inplace(&mut y, x)?;
        }
        Ok(y)
    }

    fn param_count(&self) -> u64 {
        self.stages.iter().map(Conv::param_count).sum()
    }

    fn flops(&self, hw: (usize, usize)) -> u64 {
        self.stages.iter().map(|s| s.flops(hw)).sum()
    }
}

/// Shared split → sequential inner blocks → concat → 1×1 skeleton.
#[derive(Clone, Debug)]
struct CspSkeleton<B> {
    cv1: Conv,
    cv2: Conv,
    inner: Vec<B>,
    hidden: usize,
}

impl<B> CspSkeleton<B> {
    fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        c1: usize,
        c2: usize,
        n: usize,
        mut inner: impl FnMut(&mut dyn ParamSource, &str, usize) -> B,
    ) -> Result<Self> {
        if !c2.is_multiple_of(2) {
            return Err(Error::Construction(format!(
                "{prefix}: output channels {c2} must be even for the split"
            )));
        }
        let hidden = c2 / 2;
        let cv1 = Conv::build(src, &format!("{prefix}.cv1"), c1, 2 * hidden, 1, 1, 1, Act::Silu);
        let cv2 = Conv::build(src, &format!("{prefix}.cv2"), (2 + n) * hidden, c2, 1, 1, 1, Act::Silu);
        let inner = (0..n).map(|i| inner(src, &format!("{prefix}.m.{i}"), hidden)).collect();
        Ok(Self {
            cv1,
            cv2,
            inner,
            hidden,
        })
    }

    fn forward(&self, x: &Tensor, f: impl Fn(&B, &Tensor) -> Result<Tensor>) -> Result<Tensor> {
        let y = self.cv1.forward(x)?;
        let mut chunks = split_channels(&y, &[self.hidden, self.hidden])?;
        for b in &self.inner {
            let next = f(b, chunks.last().expect("split yields two chunks"))?;
            chunks.push(next);
        }
        let refs: Vec<&Tensor> = chunks.iter().collect();
        self.cv2.forward(&concat_channels(&refs)?)
    }

    fn outer_params(&self) -> u64 {
        self.cv1.param_count() + self.cv2.param_count()
    }

    fn outer_flops(&self, hw: (usize, usize)) -> u64 {
        self.cv1.flops(hw) + self.cv2.flops(hw)
    }
}

/// Cross-stage-partial block with `n` bottlenecks.
#[derive(Clone, Debug)]
pub struct C2f(CspSkeleton<Bottleneck>);

impl C2f {
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        c1: usize,
        c2: usize,
        n: usize,
        shortcut: bool,
    ) -> Result<Self> {
        CspSkeleton::build(src, prefix, c1, c2, n, |s, p, h| Bottleneck::build(s, p, h, shortcut)).map(Self)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.0.forward(x, Bottleneck::forward)
    }

    pub fn param_count(&self) -> u64 {
        self.0.outer_params() + self.0.inner.iter().map(Bottleneck::param_count).sum::<u64>()
    }

    pub fn flops(&self, hw: (usize, usize)) -> u64 {
        self.0.outer_flops(hw) + self.0.inner.iter().map(|b| b.flops(hw)).sum::<u64>()
    }
}

/// The C2f skeleton with compact inverted blocks inside.
#[derive(Clone, Debug)]
pub struct C2fCib(CspSkeleton<Cib>);

impl C2fCib {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        c1: usize,
        c2: usize,
        n: usize,
        shortcut: bool,
        large_kernel: bool,
    ) -> Result<Self> {
        CspSkeleton::build(src, prefix, c1, c2, n, |s, p, h| {
            Cib::build(s, p, h, shortcut, large_kernel)
        })
        .map(Self)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.0.forward(x, Cib::forward)
    }

    pub fn param_count(&self) -> u64 {
        self.0.outer_params() + self.0.inner.iter().map(Cib::param_count).sum::<u64>()
    }

    pub fn flops(&self, hw: (usize, usize)) -> u64 {
        self.0.outer_flops(hw) + self.0.inner.iter().map(|b| b.flops(hw)).sum::<u64>()
    }
}
