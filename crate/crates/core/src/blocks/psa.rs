use super::{Act, Conv, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::ops::softmax_strided;
use crate::tensor::{add_inplace, batched_matmul, concat_channels, split_channels, MatView, Tensor};

const HEAD_DIM: usize = 64;

/// Multi-head self-attention over spatial positions with a depthwise positional term.
///
/// The `qkv` projection is laid out per head as `[q(key_dim), k(key_dim), v(head_dim)]`,
/// matching the upstream checkpoint.
#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Conv,
    pub proj: Conv,
    pub pe: Conv,
    pub heads: usize,
    pub head_dim: usize,
    pub key_dim: usize,
}

impl Attention {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) || !(dim / heads).is_multiple_of(2) {
            return Err(Error::Construction(format!(
                "{prefix}: {dim} channels cannot be split into {heads} heads with an even head size"
            )));
        }
        let head_dim = dim / heads;
        let key_dim = head_dim / 2;
        let qkv_ch = dim + 2 * key_dim * heads;
        Ok(Self {
            qkv: Conv::build(src, &format!("{prefix}.qkv"), dim, qkv_ch, 1, 1, 1, Act::Identity),
            proj: Conv::build(src, &format!("{prefix}.proj"), dim, dim, 1, 1, 1, Act::Identity),
            pe: Conv::build(src, &format!("{prefix}.pe"), dim, dim, 3, 1, dim, Act::Identity),
            heads,
            head_dim,
            key_dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [n, _, h, w] = x.shape();
        if n != 1 {
            return Err(Error::invalid(
                "attention",
                format!("batch size {n} unsupported, expected 1"),
            ));
        }
        let tokens = h * w;
        let qkv = self.qkv.forward(x)?;
        let per_head = 2 * self.key_dim + self.head_dim;
        let data = qkv.data();
        let head_stride = per_head * tokens;

        let q = MatView::strided(data, 0, [self.heads, self.key_dim, tokens], [head_stride, tokens, 1])?;
        let k = MatView::strided(
            data,
            self.key_dim * tokens,
            [self.heads, self.key_dim, tokens],
            [head_stride, tokens, 1],
        )?;
        let v = MatView::strided(
            data,
            2 * self.key_dim * tokens,
            [self.heads, self.head_dim, tokens],
            [head_stride, tokens, 1],
        )?;

        // scores[head, query, key]
        let mut scores = batched_matmul(q.t(), k)?;
        let scale = (self.key_dim as f32).powf(-0.5);
        let sd = scores.data_mut();
        sd.iter_mut().for_each(|s| *s *= scale);
        for row in 0..self.heads * tokens {
            softmax_strided(sd, row * tokens, tokens, 1);
        }
        let scores_view = MatView::new(scores.data(), self.heads, tokens, tokens)?;
        // out[head, d, query] = Σ_key v[head, d, key] · scores[head, query, key]
        let attended = batched_matmul(v, scores_view.t())?;
        let mut out = attended.reshape([1, self.heads * self.head_dim, h, w])?;

        let mut v_planes = Vec::with_capacity(self.heads * self.head_dim * tokens);
        for head in 0..self.heads {
            let start = head * head_stride + 2 * self.key_dim * tokens;
            v_planes.extend_from_slice(&data[start..start + self.head_dim * tokens]);
        }
        let v_map = Tensor::new([1, self.heads * self.head_dim, h, w], v_planes)?;
        add_inplace(&mut out, &self.pe.forward(&v_map)?)?;
        self.proj.forward(&out)
    }

    fn param_count(&self) -> u64 {
        self.qkv.param_count() + self.proj.param_count() + self.pe.param_count()
    }

    /// Conv FLOPs plus `2·M·N·K` for each of the two attention products.
    fn flops(&self, hw: (usize, usize)) -> u64 {
        let tokens = (hw.0 * hw.1) as u64;
        let heads = self.heads as u64;
        let matmuls = heads * (2 * tokens * tokens * self.key_dim as u64 + 2 * self.head_dim as u64 * tokens * tokens);
        self.qkv.flops(hw) + self.proj.flops(hw) + self.pe.flops(hw) + matmuls
    }
}

/// Partial self-attention: attention + FFN applied to half of the channels.
#[derive(Clone, Debug)]
pub struct Psa {
    pub cv1: Conv,
    pub cv2: Conv,
    pub attn: Attention,
    pub ffn: [Conv; 2],
    pub hidden: usize,
}

impl Psa {
    pub fn build(src: &mut dyn ParamSource, prefix: &str, c: usize) -> Result<Self> {
        if c == 0 || !c.is_multiple_of(2 * HEAD_DIM) {
            return Err(Error::Construction(format!(
                "{prefix}: PSA needs channels divisible by {}, got {c}",
                2 * HEAD_DIM
            )));
        }
        let hidden = c / 2;
        let heads = (hidden / HEAD_DIM).max(1);
        Ok(Self {
            cv1: Conv::build(src, &format!("{prefix}.cv1"), c, 2 * hidden, 1, 1, 1, Act::Silu),
            cv2: Conv::build(src, &format!("{prefix}.cv2"), 2 * hidden, c, 1, 1, 1, Act::Silu),
            attn: Attention::build(src, &format!("{prefix}.attn"), hidden, heads)?,
            ffn: [
                Conv::build(src, &format!("{prefix}.ffn.0"), hidden, 2 * hidden, 1, 1, 1, Act::Silu),
                Conv::build(
                    src,
                    &format!("{prefix}.ffn.1"),
                    2 * hidden,
                    hidden,
                    1,
                    1,
                    1,
                    Act::Identity,
                ),
            ],
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.cv1.forward(x)?;
        let mut parts = split_channels(&y, &[self.hidden, self.hidden])?;
        let mut b = parts.pop().expect("two parts");
        let a = parts.pop().expect("two parts");
        let a_out = self.attn.forward(&b)?;
        add_inplace(&mut b, &a_out)?;
        let f = self.ffn[1].forward(&self.ffn[0].forward(&b)?)?;
        add_inplace(&mut b, &f)?;
        self.cv2.forward(&concat_channels(&[&a, &b])?)
    }

    pub fn param_count(&self) -> u64 {
        self.cv1.param_count()
            + self.cv2.param_count()
            + self.attn.param_count()
            + self.ffn.iter().map(Conv::param_count).sum::<u64>()
    }

    pub fn flops(&self, hw: (usize, usize)) -> u64 {
        self.cv1.flops(hw)
            + self.cv2.flops(hw)
            + self.attn.flops(hw)
            + self.ffn.iter().map(|c| c.flops(hw)).sum::<u64>()
    }
}
