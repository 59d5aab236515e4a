//! Embedded 5x7 monospace bitmap font and the sign rasterizer.
//!
//! The font is compiled in so rasterization is bit-identical on every
//! machine. Each glyph is seven rows of five bits; bit 4 is the leftmost
//! column. Glyphs advance by 6 cells horizontally and 8 vertically (one
//! blank gap each), all multiplied by the integer `font_scale`.

use crate::domain::Image;
use crate::render::{AttackMask, RenderError, SignSpec};

/// Glyph rows for one printable character.
type Glyph = [u8; 7];

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
/// Horizontal advance per character in unscaled cells.
const ADVANCE_X: u32 = GLYPH_W + 1;
/// Vertical advance per text line in unscaled cells.
const ADVANCE_Y: u32 = GLYPH_H + 1;
/// Unscaled margin between text block and sign edge.
const BORDER: u32 = 2;

fn glyph(c: char) -> Option<Glyph> {
    // Lowercase letters render with the uppercase shapes.
    let c = if c.is_ascii_lowercase() {
        c.to_ascii_uppercase()
    } else {
        c
    };
    let rows: Glyph = match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
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
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
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
        ' ' => [0x00; 7],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '!' => [0x04, 0x04, 0x04, 0x04, 0x04, 0x00, 0x04],
        '?' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
        '\'' => [0x0C, 0x04, 0x08, 0x00, 0x00, 0x00, 0x00],
        '"' => [0x0A, 0x0A, 0x0A, 0x00, 0x00, 0x00, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        ';' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x04, 0x08],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        _ => return None,
    };
    Some(rows)
}

/// Errors with the distinct unsupported characters found in `text`.
pub(crate) fn check_glyph_coverage(text: &str) -> Result<(), RenderError> {
    let mut missing: Vec<char> = Vec::new();
    for c in text.chars() {
        if glyph(c).is_none() && !missing.contains(&c) {
            missing.push(c);
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(RenderError::UnsupportedGlyphs {
            characters: missing.into_iter().collect(),
        })
    }
}

/// Snug canvas size for `text` laid out on a single line at `font_scale`.
pub fn natural_canvas(text: &str, font_scale: u32) -> (u32, u32) {
    let chars = text.chars().count().max(1) as u32;
    let k = font_scale.max(1);
    // One advance per char minus the trailing gap, plus the border twice.
    let width = (chars * ADVANCE_X - 1 + 2 * BORDER) * k;
    let height = (GLYPH_H + 2 * BORDER) * k;
    (width, height)
}

/// A rasterized sign: the colored image, the full-rectangle mask, and the
/// glyph-only mask used by translucent compositing.
#[derive(Debug, Clone)]
pub struct SignRaster {
    pub image: Image,
    /// 1 over the entire sign rectangle.
    pub mask: AttackMask,
    /// 1 only where letter pixels were drawn.
    pub glyph_mask: AttackMask,
}

/// Draws `spec.text` centered on a `canvas_width x canvas_height` sign.
///
/// Text wraps greedily at word boundaries when the canvas allows more than
/// one line; a canvas too small for the text errors rather than truncating.
/// Bit-deterministic: no anti-aliasing, no hinting.
pub fn rasterize_sign_layers(
    spec: &SignSpec,
    canvas_width: u32,
    canvas_height: u32,
) -> Result<SignRaster, RenderError> {
    let k = spec.font_scale;
    check_glyph_coverage(&spec.text)?;
    let min_w = (ADVANCE_X - 1 + 2 * BORDER) * k;
    let min_h = (GLYPH_H + 2 * BORDER) * k;
    if canvas_width < min_w || canvas_height < min_h {
        return Err(RenderError::CanvasTooSmall {
            width: canvas_width,
            height: canvas_height,
            min_width: min_w,
            min_height: min_h,
        });
    }

    // Usable character columns per line after borders.
    let usable_w = canvas_width - 2 * BORDER * k;
    let max_chars_per_line = ((usable_w / k + 1) / ADVANCE_X) as usize;
    let lines = wrap_words(&spec.text, max_chars_per_line)?;
    let block_h = lines.len() as u32 * ADVANCE_Y * k - k;
    if block_h > canvas_height - 2 * BORDER * k {
        return Err(RenderError::TextDoesNotFit {
            text: spec.text.clone(),
            width: canvas_width,
            height: canvas_height,
        });
    }

    let mut image = Image::filled(canvas_width, canvas_height, spec.background_color)?;
    let mut glyph_mask = AttackMask::zeros(canvas_width, canvas_height);
    let y0 = (canvas_height - block_h) / 2;
    for (li, line) in lines.iter().enumerate() {
        let line_w = line.chars().count() as u32 * ADVANCE_X * k - k;
        let x0 = (canvas_width - line_w) / 2;
        let y_line = y0 + li as u32 * ADVANCE_Y * k;
        for (ci, c) in line.chars().enumerate() {
            let rows = glyph(c).expect("coverage checked above");
            let x_char = x0 + ci as u32 * ADVANCE_X * k;
            for (r, row) in rows.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if row & (1 << (GLYPH_W - 1 - col)) == 0 {
                        continue;
                    }
                    for dy in 0..k {
                        for dx in 0..k {
                            let x = x_char + col * k + dx;
                            let y = y_line + r as u32 * k + dy;
                            image.set_pixel(x, y, spec.letter_color);
                            glyph_mask.set(x, y, 1.0);
                        }
                    }
                }
            }
        }
    }
    Ok(SignRaster {
        image,
        mask: AttackMask::ones(canvas_width, canvas_height),
        glyph_mask,
    })
}

/// Greedy word wrap. A single word longer than a line is a hard failure.
fn wrap_words(text: &str, max_chars: usize) -> Result<Vec<String>, RenderError> {
    if max_chars == 0 {
        return Err(RenderError::TextDoesNotFit {
            text: text.to_owned(),
            width: 0,
            height: 0,
        });
    }
    let mut lines: Vec<String> = Vec::new();
    let mut current = String::new();
    for word in text.split_whitespace() {
        let wlen = word.chars().count();
        if wlen > max_chars {
            return Err(RenderError::WordTooWide {
                word: word.to_owned(),
                max_chars,
            });
        }
        if current.is_empty() {
            current.push_str(word);
        } else if current.chars().count() + 1 + wlen <= max_chars {
            current.push(' ');
            current.push_str(word);
        } else {
            lines.push(std::mem::take(&mut current));
            current.push_str(word);
        }
    }
    if !current.is_empty() {
        lines.push(current);
    }
    if lines.is_empty() {
        // Whitespace-only text still renders as a blank sign line.
        lines.push(String::new());
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Rgb;

    fn spec(text: &str, scale: u32) -> SignSpec {
        SignSpec::new(text, Rgb::BLACK, Rgb::WHITE, scale).unwrap()
    }

    #[test]
    fn letter_and_background_pixels_land_where_expected() {
        let s = spec("A", 1);
        let (w, h) = natural_canvas("A", 1);
        let raster = rasterize_sign_layers(&s, w, h).unwrap();
        // Glyph 'A' row 0 is .###. so column 1 of the glyph box is inked.
        assert_eq!(raster.image.pixel(BORDER + 1, BORDER), Rgb::BLACK);
        assert_eq!(raster.image.pixel(0, 0), Rgb::WHITE);
        assert_eq!(raster.image.pixel(BORDER, BORDER), Rgb::WHITE);
        assert_eq!(raster.glyph_mask.get(BORDER + 1, BORDER), 1.0);
        assert_eq!(raster.glyph_mask.get(0, 0), 0.0);
        // The rectangle mask covers the whole canvas.
        assert!(raster.mask.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rasterization_is_deterministic() {
        let s = spec("PROCEED ONWARD", 2);
        let (w, h) = natural_canvas("PROCEED ONWARD", 2);
        let a = rasterize_sign_layers(&s, w, h).unwrap();
        let b = rasterize_sign_layers(&s, w, h).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.glyph_mask.values(), b.glyph_mask.values());
    }

    fn glyph_bbox(raster: &SignRaster) -> (u32, u32, u32, u32) {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..raster.image.height() {
            for x in 0..raster.image.width() {
                if raster.glyph_mask.get(x, y) == 1.0 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    #[test]
    fn double_scale_doubles_the_glyph_bounding_box() {
        let (w1, h1) = natural_canvas("PROCEED", 1);
        let (w2, h2) = natural_canvas("PROCEED", 2);
        assert_eq!((w2, h2), (2 * w1, 2 * h1));
        let r1 = rasterize_sign_layers(&spec("PROCEED", 1), w1, h1).unwrap();
        let r2 = rasterize_sign_layers(&spec("PROCEED", 2), w2, h2).unwrap();
        let (_, _, bw1, bh1) = glyph_bbox(&r1);
        let (_, _, bw2, bh2) = glyph_bbox(&r2);
        assert_eq!((bw2, bh2), (2 * bw1, 2 * bh1));
    }

    #[test]
    fn unsupported_glyphs_are_listed() {
        let s = SignSpec::new("GO → HOME @ ONCE", Rgb::BLACK, Rgb::WHITE, 1).unwrap();
        let (w, h) = natural_canvas(&s.text, 1);
        let err = rasterize_sign_layers(&s, w, h).unwrap_err();
        match err {
            RenderError::UnsupportedGlyphs { characters } => {
                assert!(characters.contains('→'));
                assert!(characters.contains('@'));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn text_wraps_at_word_boundaries() {
        // Canvas wide enough for one word per line only.
        let s = spec("GO UP", 1);
        let (w1, h1) = natural_canvas("GO", 1);
        let raster = rasterize_sign_layers(&s, w1, h1 * 3).unwrap();
        // Two lines of glyphs: ink must appear in two vertical bands.
        let (_, y0, _, bh) = glyph_bbox(&raster);
        assert!(bh > GLYPH_H, "expected two wrapped lines, got box {bh}");
        assert!(y0 < raster.image.height() / 2);
    }

    #[test]
    fn oversized_text_errors_rather_than_truncates() {
        let s = spec("UNREASONABLYLONGWORD", 1);
        let (w, h) = natural_canvas("GO", 1);
        assert!(matches!(
            rasterize_sign_layers(&s, w, h),
            Err(RenderError::WordTooWide { .. })
        ));
        let s2 = spec("GO UP GO UP", 1);
        let (w2, h2) = natural_canvas("GO", 1);
        assert!(matches!(
            rasterize_sign_layers(&s2, w2, h2),
            Err(RenderError::TextDoesNotFit { .. })
        ));
    }

    #[test]
    fn canvas_below_one_glyph_row_is_rejected() {
        let s = spec("A", 2);
        assert!(matches!(
            rasterize_sign_layers(&s, 8, 8),
            Err(RenderError::CanvasTooSmall { .. })
        ));
    }
}
