use crate::prepost::{Detection, RgbImage};

const BOX_COLOR: [u8; 3] = [255, 64, 32];
const BANNER_BG: [u8; 3] = [0, 0, 0];
const TEXT_COLOR: [u8; 3] = [255, 255, 255];
const THICKNESS: usize = 2;
const GLYPH_SCALE: usize = 2;
const BANNER_HEIGHT: usize = 5 * GLYPH_SCALE + 4;

/// 3x5 bitmaps, one row per entry, most significant of the low 3 bits leftmost.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'C' => [0b111, 0b100, 0b100, 0b100, 0b111],
        'O' => [0b111, 0b101, 0b101, 0b101, 0b111],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'N' => [0b101, 0b111, 0b111, 0b111, 0b101],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        _ => [0; 5],
    }
}

fn fill_rect(img: &mut RgbImage, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
    for y in y0..y1.min(img.height) {
        for x in x0..x1.min(img.width) {
            img.put_pixel(x, y, rgb);
        }
    }
}

/// Outlines one box; the outline lies inside the box and is clipped to the image.
pub fn draw_box(img: &mut RgbImage, bbox: &[f32; 4], rgb: [u8; 3]) {
    if img.width == 0 || img.height == 0 {
        return;
    }
    let clamp_x = |v: f32| (v.max(0.0) as usize).min(img.width - 1);
    let clamp_y = |v: f32| (v.max(0.0) as usize).min(img.height - 1);
    let (x1, y1, x2, y2) = (clamp_x(bbox[0]), clamp_y(bbox[1]), clamp_x(bbox[2]), clamp_y(bbox[3]));
    fill_rect(img, x1, y1, x2 + 1, y1 + THICKNESS, rgb);
    fill_rect(img, x1, (y2 + 1).saturating_sub(THICKNESS), x2 + 1, y2 + 1, rgb);
    fill_rect(img, x1, y1, x1 + THICKNESS, y2 + 1, rgb);
    fill_rect(img, (x2 + 1).saturating_sub(THICKNESS), y1, x2 + 1, y2 + 1, rgb);
}

fn draw_text(img: &mut RgbImage, text: &str, x0: usize, y0: usize) {
    let mut x = x0;
    for c in text.chars() {
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    let px = x + col * GLYPH_SCALE;
                    let py = y0 + row * GLYPH_SCALE;
                    fill_rect(img, px, py, px + GLYPH_SCALE, py + GLYPH_SCALE, TEXT_COLOR);
                }
            }
        }
        x += 4 * GLYPH_SCALE;
    }
}

/// Copy of `img` with every detection outlined and a count banner across the top.
pub fn render_overlay(img: &RgbImage, dets: &[Detection]) -> RgbImage {
    let mut out = img.clone();
    for d in dets {
        draw_box(&mut out, &d.bbox, BOX_COLOR);
    }
    let text = format!("COUNT:{}", dets.len());
    let banner_w = (text.len() * 4 * GLYPH_SCALE + 4).min(out.width);
    fill_rect(&mut out, 0, 0, banner_w, BANNER_HEIGHT, BANNER_BG);
    draw_text(&mut out, &text, 2, 2);
    out
}
