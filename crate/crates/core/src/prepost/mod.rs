//! Letterbox preprocessing and NMS-free decoding of the one-to-one head.

mod decode;

pub use decode::{
    decode_one2one, dfl_expectation, make_anchors, select_top, unletterbox, Anchors, DecodeConfig, Detection,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD_VALUE: u8 = 114;

/// An interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "RgbImage::new",
                format!("{} bytes for {width}x{height}", width * height * 3),
                data.len().to_string(),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

/// Maps between original-image and letterboxed-input coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f32,
    pub pad_left: usize,
    pub pad_top: usize,
    pub width: usize,
    pub height: usize,
    pub target: usize,
}

impl LetterboxTransform {
    /// Scale `min(S/W, S/H)`, resized size `round(W·r) × round(H·r)` with ties to even, padding split with
    /// the extra pixel on the right/bottom.
    pub fn new(width: usize, height: usize, target: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("letterbox", format!("empty image {width}x{height}")));
        }
        if target == 0 {
            return Err(Error::invalid("letterbox", "target size must be positive"));
        }
        let r = (target as f64 / width as f64).min(target as f64 / height as f64);
        let (nw, nh) = Self::resized_dims(width, height, r, target);
        Ok(Self {
            scale: r as f32,
            pad_left: (target - nw) / 2,
            pad_top: (target - nh) / 2,
            width,
            height,
            target,
        })
    }

    fn resized_dims(width: usize, height: usize, r: f64, target: usize) -> (usize, usize) {
        let nw = ((width as f64 * r).round_ties_even() as usize).clamp(1, target);
        let nh = ((height as f64 * r).round_ties_even() as usize).clamp(1, target);
        (nw, nh)
    }

    /// Size of the resized image inside the canvas.
    pub fn resized(&self) -> (usize, usize) {
        let r = (self.target as f64 / self.width as f64).min(self.target as f64 / self.height as f64);
        Self::resized_dims(self.width, self.height, r, self.target)
    }

    /// Letterbox coordinates to original-image coordinates (unclipped).
    pub fn to_original(&self, x: f32, y: f32) -> (f32, f32) {
        (
            (x - self.pad_left as f32) / self.scale,
            (y - self.pad_top as f32) / self.scale,
        )
    }

    pub fn to_letterbox(&self, x: f32, y: f32) -> (f32, f32) {
        (
            x * self.scale + self.pad_left as f32,
            y * self.scale + self.pad_top as f32,
        )
    }
}

/// Source sample positions for a half-pixel-centre resize along one axis:
/// `(lower index, upper index, upper weight)` per output pixel.
fn sample_axis(n_out: usize, n_in: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let f = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (f.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (f - i0 as f64) as f32)
        })
        .collect()
}

/// Letterboxes `img` into a `[1, 3, S, S]` tensor scaled to `[0, 1]`.
///
/// Resizing is bilinear with half-pixel centres, evaluated in floating point
/// without intermediate rounding to 8 bits.
pub fn letterbox(img: &RgbImage, target: usize) -> Result<(Tensor, LetterboxTransform)> {
    let t = LetterboxTransform::new(img.width, img.height, target)?;
    let (nw, nh) = t.resized();
    let plane = target * target;
    let mut out = vec![PAD_VALUE as f32 / 255.0; 3 * plane];
    let inv = 1.0 / 255.0f32;

    if (nw, nh) == (img.width, img.height) {
        for y in 0..nh {
            for x in 0..nw {
                let p = img.pixel(x, y);
                let o = (y + t.pad_top) * target + x + t.pad_left;
                for c in 0..3 {
                    out[c * plane + o] = p[c] as f32 / 255.0;
                }
            }
        }
    } else {
        let xs = sample_axis(nw, img.width);
        let ys = sample_axis(nh, img.height);
        let src = &img.data;
        let row = img.width * 3;
        for (y, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, wx)) in xs.iter().enumerate() {
                let o = (y + t.pad_top) * target + x + t.pad_left;
                for c in 0..3 {
                    let at = |yy: usize, xx: usize| src[yy * row + xx * 3 + c] as f32;
                    let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                    let bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                    out[c * plane + o] = (top * (1.0 - wy) + bot * wy) * inv;
                }
            }
        }
    }
    Ok((Tensor::new([1, 3, target, target], out)?, t))
}
