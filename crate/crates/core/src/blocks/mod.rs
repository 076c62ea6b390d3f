//! YOLOv10 building blocks over BatchNorm-folded weights.
//!
//! Blocks are constructed from a [`ParamSource`], which hands out tensors by
//! their upstream checkpoint path (`model.{idx}.{submodule}.{weight|bias}`).
//! The same constructors therefore enumerate graph slots, bind a container, or
//! produce an all-zero model, depending on the source.

mod c2f;
mod detect;
mod psa;

pub use c2f::{Bottleneck, C2f, C2fCib, Cib};
pub use detect::{DetectBranch, HeadSet, V10Detect};
pub use psa::{Attention, Psa};

use crate::error::Result;
use crate::tensor::conv::{conv2d_fused, Epilogue};
use crate::tensor::{maxpool2d, Tensor};

/// Supplies named parameter tensors during block construction.
pub trait ParamSource {
    /// Returns the tensor stored under `name`; it must have shape `dims`.
    fn take(&mut self, name: &str, dims: &[usize]) -> Tensor;
}

/// Hands out zero tensors of the requested shape.
#[derive(Debug, Default)]
pub struct ZeroParams;

impl ParamSource for ZeroParams {
    fn take(&mut self, _name: &str, dims: &[usize]) -> Tensor {
        zeros_for(dims)
    }
}

/// Records every requested `(name, shape)` pair and hands out zeros.
#[derive(Debug, Default)]
pub struct SlotCollector {
    pub slots: Vec<(String, Vec<usize>)>,
}

impl ParamSource for SlotCollector {
    fn take(&mut self, name: &str, dims: &[usize]) -> Tensor {
        self.slots.push((name.to_string(), dims.to_vec()));
        zeros_for(dims)
    }
}

pub(crate) fn zeros_for(dims: &[usize]) -> Tensor {
    let mut shape = [1usize; 4];
    shape[4 - dims.len()..].copy_from_slice(dims);
    Tensor::zeros(shape)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Silu,
    Identity,
}

/// Convolution with folded BatchNorm bias and optional SiLU.
#[derive(Clone, Debug)]
pub struct Conv {
    weight: Tensor,
    bias: Vec<f32>,
    stride: usize,
    padding: usize,
    groups: usize,
    act: Act,
}

impl Conv {
    /// An upstream `Conv` module (`{prefix}.conv.weight` / `{prefix}.conv.bias`), padding `k/2`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        src: &mut dyn ParamSource,
        prefix: &str,
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
        groups: usize,
        act: Act,
    ) -> Self {
        Self::from_names(src, &format!("{prefix}.conv"), c1, c2, k, s, groups, act)
    }

    /// A bare `nn.Conv2d` 1×1 with bias (`{prefix}.weight` / `{prefix}.bias`), no activation.
    pub fn plain(src: &mut dyn ParamSource, prefix: &str, c1: usize, c2: usize) -> Self {
        Self::from_names(src, prefix, c1, c2, 1, 1, 1, Act::Identity)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_names(
        src: &mut dyn ParamSource,
        base: &str,
        c1: usize,
        c2: usize,
        k: usize,
        s: usize,
        groups: usize,
        act: Act,
    ) -> Self {
        let weight = src.take(&format!("{base}.weight"), &[c2, c1 / groups, k, k]);
        let bias = src.take(&format!("{base}.bias"), &[c2]).into_data();
        Self {
            weight,
            bias,
            stride: s,
            padding: k / 2,
            groups,
            act,
        }
    }

    /// Builds a block directly from tensors, mainly for tests.
    pub fn from_parts(weight: Tensor, bias: Vec<f32>, stride: usize, groups: usize, act: Act) -> Self {
        let padding = weight.h() / 2;
        Self {
            weight,
            bias,
            stride,
            padding,
            groups,
            act,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let epilogue = match self.act {
            Act::Silu => Epilogue::Silu,
            Act::Identity => Epilogue::None,
        };
        conv2d_fused(
            x,
            &self.weight,
            Some(&self.bias),
            self.stride,
            self.padding,
            self.groups,
            epilogue,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weight.n()
    }

    pub fn param_count(&self) -> u64 {
        (self.weight.len() + self.bias.len()) as u64
    }

    pub fn out_hw(&self, (h, w): (usize, usize)) -> (usize, usize) {
        let k = self.weight.h();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    /// `2·outC·outH·outW·(inC/groups)·kH·kW + outC·outH·outW` for an input of size `hw`.
    pub fn flops(&self, hw: (usize, usize)) -> u64 {
        let (oh, ow) = self.out_hw(hw);
        let [oc, icg, kh, kw] = self.weight.shape();
        let outputs = (oc * oh * ow) as u64;
        2 * outputs * (icg * kh * kw) as u64 + outputs
    }
}

/// Spatial-channel decoupled downsampling: pointwise conv, then stride-2 depthwise.
#[derive(Clone, Debug)]
pub struct ScDown {
    pub cv1: Conv,
    pub cv2: Conv,
}

impl ScDown {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, c1: usize, c2: usize, k: usize, s: usize) -> Self {
        Self {
            cv1: Conv::build(src, &format!("{prefix}.cv1"), c1, c2, 1, 1, 1, Act::Silu),
            cv2: Conv::build(src, &format!("{prefix}.cv2"), c2, c2, k, s, c2, Act::Identity),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.cv2.forward(&self.cv1.forward(x)?)
    }

    pub fn param_count(&self) -> u64 {
        self.cv1.param_count() + self.cv2.param_count()
    }

    pub fn flops(&self, hw: (usize, usize)) -> u64 {
        self.cv1.flops(hw) + self.cv2.flops(hw)
    }
}

/// Fast spatial pyramid pooling: three cascaded max-pools concatenated with the input projection.
#[derive(Clone, Debug)]
pub struct Sppf {
    pub cv1: Conv,
    pub cv2: Conv,
    pub k: usize,
}

impl Sppf {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, c1: usize, c2: usize, k: usize) -> Self {
        let hidden = c1 / 2;
        Self {
            cv1: Conv::build(src, &format!("{prefix}.cv1"), c1, hidden, 1, 1, 1, Act::Silu),
            cv2: Conv::build(src, &format!("{prefix}.cv2"), hidden * 4, c2, 1, 1, 1, Act::Silu),
            k,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y0 = self.cv1.forward(x)?;
        let y1 = maxpool2d(&y0, self.k, 1, self.k / 2)?;
        let y2 = maxpool2d(&y1, self.k, 1, self.k / 2)?;
        let y3 = maxpool2d(&y2, self.k, 1, self.k / 2)?;
        self.cv2
            .forward(&crate::tensor::concat_channels(&[&y0, &y1, &y2, &y3])?)
    }

    pub fn param_count(&self) -> u64 {
        self.cv1.param_count() + self.cv2.param_count()
    }

    pub fn flops(&self, hw: (usize, usize)) -> u64 {
        self.cv1.flops(hw) + self.cv2.flops(hw)
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::ParamSource;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Uniform random parameters scaled by `1/sqrt(fan_in)`.
    pub struct RandomParams(pub ChaCha8Rng);

    impl RandomParams {
        pub fn new(seed: u64) -> Self {
            Self(ChaCha8Rng::seed_from_u64(seed))
        }
    }

    impl ParamSource for RandomParams {
        fn take(&mut self, _name: &str, dims: &[usize]) -> Tensor {
            let fan_in: usize = if dims.len() == 4 { dims[1..].iter().product() } else { 1 };
            let scale = 1.0 / (fan_in as f32).sqrt();
            let len = dims.iter().product();
            let data = (0..len).map(|_| self.0.gen_range(-1.0..1.0) * scale).collect();
            Tensor::from_dims(dims, data).unwrap()
        }
    }

    /// Fills every parameter with a constant.
    pub struct ConstParams(pub f32);

    impl ParamSource for ConstParams {
        fn take(&mut self, _name: &str, dims: &[usize]) -> Tensor {
            Tensor::from_dims(dims, vec![self.0; dims.iter().product()]).unwrap()
        }
    }

    pub fn random_input(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn conv_names_and_counts() {
        let mut slots = SlotCollector::default();
        let conv = Conv::build(&mut slots, "model.0", 3, 16, 3, 2, 1, Act::Silu);
        assert_eq!(
            slots.slots,
            vec![
                ("model.0.conv.weight".to_string(), vec![16, 3, 3, 3]),
                ("model.0.conv.bias".to_string(), vec![16]),
            ]
        );
        assert_eq!(conv.param_count(), 448);
        // 2·16·320·320·3·9 plus one bias add per output
        assert_eq!(conv.flops((640, 640)), 88_473_600 + 1_638_400);
        assert_eq!(conv.out_hw((640, 640)), (320, 320));
    }

    #[test]
    fn plain_conv_uses_bare_names() {
        let mut slots = SlotCollector::default();
        Conv::plain(&mut slots, "model.23.one2one_cv3.0.2", 64, 1);
        assert_eq!(slots.slots[0].0, "model.23.one2one_cv3.0.2.weight");
        assert_eq!(slots.slots[1], ("model.23.one2one_cv3.0.2.bias".to_string(), vec![1]));
    }

    #[test]
    fn scdown_shape_and_zero() {
        let b = ScDown::build(&mut ZeroParams, "m", 64, 128, 3, 2);
        let y = b.forward(&random_input([1, 64, 16, 12], 1)).unwrap();
        assert_eq!(y.shape(), [1, 128, 8, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scdown_has_no_activation_on_depthwise() {
        // pw with bias -1 and zero weight gives silu(-1) everywhere; dw identity-center weight
        // must pass the negative value through unchanged.
        let mut src = ConstParams(0.0);
        let mut b = ScDown::build(&mut src, "m", 2, 2, 3, 2);
        b.cv1 = Conv::from_parts(Tensor::zeros([2, 2, 1, 1]), vec![-1.0, -1.0], 1, 1, Act::Silu);
        let mut w = Tensor::zeros([2, 1, 3, 3]);
        w.set([0, 0, 1, 1], 1.0);
        w.set([1, 0, 1, 1], 1.0);
        b.cv2 = Conv::from_parts(w, vec![0.0, 0.0], 2, 2, Act::Identity);
        let y = b.forward(&Tensor::zeros([1, 2, 4, 4])).unwrap();
        let expected = crate::tensor::silu_scalar(-1.0);
        assert!(y.data().iter().all(|&v| (v - expected).abs() < 1e-7));
    }

    #[test]
    fn sppf_constant_map() {
        // cv1: zero weights, bias b -> silu(b) constant; pools keep it; cv2 sums 4 copies.
        let mut b = Sppf::build(&mut ZeroParams, "m", 4, 4, 5);
        b.cv1 = Conv::from_parts(Tensor::zeros([2, 4, 1, 1]), vec![0.5, 0.5], 1, 1, Act::Silu);
        b.cv2 = Conv::from_parts(Tensor::full([4, 8, 1, 1], 1.0), vec![0.0; 4], 1, 1, Act::Identity);
        let y = b.forward(&random_input([1, 4, 7, 9], 3)).unwrap();
        assert_eq!(y.shape(), [1, 4, 7, 9]);
        let expected = 8.0 * crate::tensor::silu_scalar(0.5);
        assert!(y.data().iter().all(|&v| (v - expected).abs() < 1e-5));
    }
}
