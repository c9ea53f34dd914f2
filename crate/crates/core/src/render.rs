//! Comparison grids: one row per image, columns for the grayscale input,
//! each model's output and the ground truth, with plain bitmap labels.

use std::path::Path;

use crate::color::{lab_to_rgb, rgb_to_lab, LabImage, RgbImage};
use crate::error::{Error, Result};

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const PAD: usize = 2;
const BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];
const INK: [f32; 3] = [0.0, 0.0, 0.0];

/// 5x7 glyphs, one byte per row, high bit on the left.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ' ' => [0; GLYPH_H],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

/// Pixel width of `text` at scale 1.
pub fn text_width(text: &str) -> usize {
    let n = text.chars().count();
    if n == 0 {
        0
    } else {
        n * (GLYPH_W + 1) - 1
    }
}

/// Mutable RGB canvas.
struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            px: BACKGROUND.repeat(h * w),
        }
    }

    fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        if y < self.h && x < self.w {
            let i = (y * self.w + x) * 3;
            self.px[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn blit(&mut self, y0: usize, x0: usize, img: &RgbImage, scale: usize) {
        for y in 0..img.height() * scale {
            for x in 0..img.width() * scale {
                self.set(y0 + y, x0 + x, img.pixel(y / scale, x / scale));
            }
        }
    }

    fn text(&mut self, y0: usize, x0: usize, text: &str) {
        for (i, c) in text.chars().enumerate() {
            let g = glyph(c);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        self.set(y0 + row, x0 + i * (GLYPH_W + 1) + col, INK);
                    }
                }
            }
        }
    }

    fn finish(self) -> Result<RgbImage> {
        RgbImage::new(self.h, self.w, self.px)
    }
}

/// Lays out `rows` of equally sized cells with `labels` above the columns.
/// Labels wider than a cell are truncated.
pub fn render_grid(rows: &[Vec<RgbImage>], labels: &[String], scale: usize) -> Result<RgbImage> {
    let Some(first) = rows.first().and_then(|r| r.first()) else {
        return Err(Error::invalid("a grid needs at least one cell"));
    };
    if scale == 0 {
        return Err(Error::invalid("scale must be at least 1"));
    }
    let cols = rows[0].len();
    let (ch, cw) = (first.height(), first.width());
    if rows.iter().any(|r| r.len() != cols)
        || rows.iter().flatten().any(|c| (c.height(), c.width()) != (ch, cw))
    {
        return Err(Error::shape("grid rows must have equal length and cells equal size"));
    }
    if !labels.is_empty() && labels.len() != cols {
        return Err(Error::invalid(format!("{} labels for {cols} columns", labels.len())));
    }
    let (sh, sw) = (ch * scale, cw * scale);
    let header = if labels.is_empty() { 0 } else { GLYPH_H + 2 * PAD };
    let mut canvas = Canvas::new(
        header + rows.len() * (sh + PAD) + PAD,
        cols * (sw + PAD) + PAD,
    );
    let fit = (sw + 1) / (GLYPH_W + 1);
    for (c, label) in labels.iter().enumerate() {
        let text: String = label.chars().take(fit).collect();
        let x = PAD + c * (sw + PAD) + (sw - text_width(&text).min(sw)) / 2;
        canvas.text(PAD, x, &text);
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            canvas.blit(header + PAD + r * (sh + PAD), PAD + c * (sw + PAD), cell, scale);
        }
    }
    canvas.finish()
}

/// The lightness of `img` shown without color.
pub fn grayscale_of(img: &RgbImage) -> Result<RgbImage> {
    let l = rgb_to_lab(img).l().to_vec();
    Ok(lab_to_rgb(&LabImage::grayscale(img.height(), img.width(), l)?))
}

/// Builds one grid row: grayscale, then `outputs` in order, then truth.
pub fn comparison_row(truth: &RgbImage, outputs: Vec<RgbImage>) -> Result<Vec<RgbImage>> {
    let mut row = Vec::with_capacity(outputs.len() + 2);
    row.push(grayscale_of(truth)?);
    row.extend(outputs);
    row.push(truth.clone());
    Ok(row)
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    RgbImage::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_u8())
        .ok_or_else(|| Error::shape("pixel buffer does not match image size"))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
