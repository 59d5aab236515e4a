//! Deterministic attack rendering: rasterize a sign, warp it by a
//! similarity transform, and composite it into a scenario image.
//!
//! Everything is pure integer/float math with fixed rounding (half-up,
//! then clamp), no anti-aliasing, and nearest-neighbor resampling, so equal
//! inputs produce byte-equal outputs on any machine.

mod font;

pub use font::{natural_canvas, rasterize_sign_layers, SignRaster};

/// Checks a phrase is non-empty and every glyph is drawable, without
/// rasterizing anything.
pub(crate) fn check_phrase_renderable(phrase: &str) -> Result<(), RenderError> {
    if phrase.trim().is_empty() {
        return Err(RenderError::EmptySignText);
    }
    font::check_glyph_coverage(phrase)
}

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dictionary, DomainError, Image, Rgb, Scenario, canonicalize};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scale {0} must be positive and finite")]
    InvalidScale(f64),
    #[error("rotation {0} must be finite")]
    InvalidRotation(f64),
    #[error("translation ({0}, {1}) must be finite")]
    InvalidTranslation(f64, f64),
    #[error("blend weight {0} must lie in (0, 1]")]
    InvalidBlendWeight(f64),
    #[error("font scale must be at least 1")]
    InvalidFontScale,
    #[error("sign text is empty")]
    EmptySignText,
    #[error("text contains characters without glyphs: {characters:?}")]
    UnsupportedGlyphs { characters: String },
    #[error("canvas {width}x{height} is below the {min_width}x{min_height} needed for one glyph row")]
    CanvasTooSmall {
        width: u32,
        height: u32,
        min_width: u32,
        min_height: u32,
    },
    #[error("text {text:?} does not fit a {width}x{height} canvas")]
    TextDoesNotFit {
        text: String,
        width: u32,
        height: u32,
    },
    #[error("word {word:?} exceeds the {max_chars}-character line capacity")]
    WordTooWide { word: String, max_chars: usize },
    #[error("mask value {0} is outside [0, 1]")]
    MaskValueOutOfRange(f32),
    #[error("matrix is singular or near-singular")]
    SingularMatrix,
    #[error("{context}: dimensions {left_w}x{left_h} vs {right_w}x{right_h} differ")]
    ShapeMismatch {
        context: &'static str,
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("vp index {index} exceeds dictionary of {len} entries")]
    VpIndexOutOfRange { index: usize, len: usize },
    #[error("sign text {actual:?} does not match dictionary phrase {expected:?} at index {index}")]
    PhraseMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("scenario {scenario_id:?}: sign footprint lands entirely outside the image")]
    FootprintOutOfFrame { scenario_id: String },
    #[error("scenario {scenario_id:?}: sign footprint misses the placement region")]
    FootprintMissesRegion { scenario_id: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// What gets printed on the sign and in which colors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignSpec {
    pub text: String,
    pub letter_color: Rgb,
    pub background_color: Rgb,
    /// Integer multiplier on the built-in glyph size.
    pub font_scale: u32,
}

impl SignSpec {
    pub fn new(
        text: impl Into<String>,
        letter_color: Rgb,
        background_color: Rgb,
        font_scale: u32,
    ) -> Result<Self, RenderError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(RenderError::EmptySignText);
        }
        if font_scale == 0 {
            return Err(RenderError::InvalidFontScale);
        }
        Ok(SignSpec {
            text,
            letter_color,
            background_color,
            font_scale,
        })
    }
}

/// Where the sign lands: similarity parameters applied about the sign
/// center, anchored at the center of the scenario's placement region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementSpec {
    pub scale: f64,
    /// Radians, counterclockwise in image coordinates.
    pub rotation: f64,
    /// Pixels, relative to the placement-region center.
    pub translation: (f64, f64),
}

impl PlacementSpec {
    pub const IDENTITY: PlacementSpec = PlacementSpec {
        scale: 1.0,
        rotation: 0.0,
        translation: (0.0, 0.0),
    };

    pub fn new(scale: f64, rotation: f64, translation: (f64, f64)) -> Result<Self, RenderError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(RenderError::InvalidScale(scale));
        }
        if !rotation.is_finite() {
            return Err(RenderError::InvalidRotation(rotation));
        }
        if !(translation.0.is_finite() && translation.1.is_finite()) {
            return Err(RenderError::InvalidTranslation(translation.0, translation.1));
        }
        Ok(PlacementSpec {
            scale,
            rotation,
            translation,
        })
    }
}

/// One point of the attack space: a dictionary phrase plus its perceptual
/// attributes. `sign.text` must equal the phrase at `vp_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub vp_index: usize,
    pub sign: SignSpec,
    pub placement: PlacementSpec,
    /// Opacity of the sign background over the scene; 1 = hard replacement.
    pub blend_weight: f64,
}

impl AttackParams {
    pub fn new(
        vp_index: usize,
        sign: SignSpec,
        placement: PlacementSpec,
        blend_weight: f64,
    ) -> Result<Self, RenderError> {
        if !(blend_weight.is_finite() && blend_weight > 0.0 && blend_weight <= 1.0) {
            return Err(RenderError::InvalidBlendWeight(blend_weight));
        }
        Ok(AttackParams {
            vp_index,
            sign,
            placement,
            blend_weight,
        })
    }

    /// Checks `vp_index` is live and the sign text matches that phrase.
    pub fn validate_against(&self, dictionary: &Dictionary) -> Result<(), RenderError> {
        let Some(phrase) = dictionary.phrase(self.vp_index) else {
            return Err(RenderError::VpIndexOutOfRange {
                index: self.vp_index,
                len: dictionary.len(),
            });
        };
        if canonicalize(phrase) != canonicalize(&self.sign.text) {
            return Err(RenderError::PhraseMismatch {
                index: self.vp_index,
                expected: phrase.to_owned(),
                actual: self.sign.text.clone(),
            });
        }
        if !(self.blend_weight.is_finite()
            && self.blend_weight > 0.0
            && self.blend_weight <= 1.0)
        {
            return Err(RenderError::InvalidBlendWeight(self.blend_weight));
        }
        if !(self.placement.scale.is_finite() && self.placement.scale > 0.0) {
            return Err(RenderError::InvalidScale(self.placement.scale));
        }
        Ok(())
    }
}

/// Per-pixel attack coverage in `[0, 1]`. After nearest-neighbor warping
/// values stay in `{0, 1}`; fractional values only enter via hand-built
/// masks.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackMask {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl AttackMask {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, RenderError> {
        if values.len() != width as usize * height as usize {
            return Err(RenderError::ShapeMismatch {
                context: "mask buffer",
                left_w: width,
                left_h: height,
                right_w: values.len() as u32,
                right_h: 1,
            });
        }
        for &v in &values {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(RenderError::MaskValueOutOfRange(v));
            }
        }
        Ok(AttackMask {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        AttackMask {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn ones(width: u32, height: u32) -> Self {
        AttackMask {
            width,
            height,
            values: vec![1.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        debug_assert!(x < self.width && y < self.height);
        self.values[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Number of strictly positive cells.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Homogeneous similarity transform
/// `[[s·cosθ, −s·sinθ, t_x], [s·sinθ, s·cosθ, t_y], [0, 0, 1]]`.
pub fn similarity_matrix(
    s: f64,
    theta: f64,
    t_x: f64,
    t_y: f64,
) -> Result<Matrix3<f64>, RenderError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(RenderError::InvalidScale(s));
    }
    if !theta.is_finite() {
        return Err(RenderError::InvalidRotation(theta));
    }
    if !(t_x.is_finite() && t_y.is_finite()) {
        return Err(RenderError::InvalidTranslation(t_x, t_y));
    }
    let (sin, cos) = theta.sin_cos();
    Ok(Matrix3::new(
        s * cos,
        -s * sin,
        t_x,
        s * sin,
        s * cos,
        t_y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Pure translation as a homogeneous matrix; composes with
/// [`similarity_matrix`] for transforms about arbitrary pivots.
pub fn translation_matrix(t_x: f64, t_y: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, t_x, 0.0, 1.0, t_y, 0.0, 0.0, 1.0)
}

/// Maps the point `(x, y)` through a homogeneous matrix.
pub fn apply_point(matrix: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let v = matrix * Vector3::new(x, y, 1.0);
    (v.x / v.z, v.y / v.z)
}

fn inverse_or_err(matrix: &Matrix3<f64>) -> Result<Matrix3<f64>, RenderError> {
    if matrix.determinant().abs() < 1e-12 {
        return Err(RenderError::SingularMatrix);
    }
    matrix.try_inverse().ok_or(RenderError::SingularMatrix)
}

/// Half-open pixel window `[x0, x1) × [y0, y1)` a scan loop must visit.
/// Warped sign content is provably absent outside the padded bounding box
/// of the transformed canvas corners, so loops may skip the rest.
#[derive(Debug, Clone, Copy)]
struct ScanBox {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl ScanBox {
    fn full(width: u32, height: u32) -> Self {
        ScanBox {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    /// Clamped window around a continuous bounding box, padded one pixel.
    fn around(min_x: f64, max_x: f64, min_y: f64, max_y: f64, width: u32, height: u32) -> Self {
        let clamp_lo = |v: f64| (v - 1.0).floor().max(0.0) as u32;
        let clamp_hi = |v: f64, limit: u32| ((v + 1.0).ceil().min(limit as f64) as u32).min(limit);
        ScanBox {
            x0: clamp_lo(min_x).min(width),
            y0: clamp_lo(min_y).min(height),
            x1: clamp_hi(max_x, width),
            y1: clamp_hi(max_y, height),
        }
    }
}

fn warp_mask_scan(
    mask: &AttackMask,
    inv: &Matrix3<f64>,
    out_width: u32,
    out_height: u32,
    scan: ScanBox,
) -> AttackMask {
    let mut values = vec![0.0f32; out_width as usize * out_height as usize];
    for y in scan.y0..scan.y1 {
        for x in scan.x0..scan.x1 {
            let (sx, sy) = apply_point(inv, x as f64 + 0.5, y as f64 + 0.5);
            let (sx, sy) = (sx.floor(), sy.floor());
            if sx >= 0.0 && sy >= 0.0 && (sx as u32) < mask.width && (sy as u32) < mask.height {
                values[y as usize * out_width as usize + x as usize] =
                    mask.get(sx as u32, sy as u32);
            }
        }
    }
    AttackMask {
        width: out_width,
        height: out_height,
        values,
    }
}

/// Warps a mask into an output grid of explicit size: output value at pixel
/// center x equals the input value at A⁻¹x (nearest neighbor), 0 outside.
pub fn warp_mask_to(
    mask: &AttackMask,
    matrix: &Matrix3<f64>,
    out_width: u32,
    out_height: u32,
) -> Result<AttackMask, RenderError> {
    let inv = inverse_or_err(matrix)?;
    Ok(warp_mask_scan(
        mask,
        &inv,
        out_width,
        out_height,
        ScanBox::full(out_width, out_height),
    ))
}

/// Same-size mask warp; see [`warp_mask_to`].
pub fn warp_mask(mask: &AttackMask, matrix: &Matrix3<f64>) -> Result<AttackMask, RenderError> {
    warp_mask_to(mask, matrix, mask.width, mask.height)
}

fn warp_image_scan(
    image: &Image,
    inv: &Matrix3<f64>,
    out_width: u32,
    out_height: u32,
    fill: Rgb,
    scan: ScanBox,
) -> Result<Image, RenderError> {
    let mut out = Image::filled(out_width, out_height, fill)?;
    for y in scan.y0..scan.y1 {
        for x in scan.x0..scan.x1 {
            let (sx, sy) = apply_point(inv, x as f64 + 0.5, y as f64 + 0.5);
            let (sx, sy) = (sx.floor(), sy.floor());
            if sx >= 0.0
                && sy >= 0.0
                && (sx as u32) < image.width()
                && (sy as u32) < image.height()
            {
                out.set_pixel(x, y, image.pixel(sx as u32, sy as u32));
            }
        }
    }
    Ok(out)
}

/// Warps an image like [`warp_mask_to`]; out-of-bounds samples take `fill`.
pub fn warp_image_to(
    image: &Image,
    matrix: &Matrix3<f64>,
    out_width: u32,
    out_height: u32,
    fill: Rgb,
) -> Result<Image, RenderError> {
    let inv = inverse_or_err(matrix)?;
    warp_image_scan(
        image,
        &inv,
        out_width,
        out_height,
        fill,
        ScanBox::full(out_width, out_height),
    )
}

fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Blends `sign` over `base` through `mask`:
/// `out(x) = (1−mask(x))·B(x) + mask(x)·sign(x)` where `B(x)` is
/// `(1−λ)·base(x) + λ·blend_target` inside `blend_region` and plain
/// `base(x)` elsewhere. Channels round half-up and clamp to `[0, 255]`.
///
/// With no blend region, pixels at mask 0 are copied bit-exactly from base.
pub fn composite(
    base: &Image,
    sign: &Image,
    mask: &AttackMask,
    lambda: f64,
    blend_target: Rgb,
    blend_region: Option<&AttackMask>,
) -> Result<Image, RenderError> {
    if !(lambda.is_finite() && lambda > 0.0 && lambda <= 1.0) {
        return Err(RenderError::InvalidBlendWeight(lambda));
    }
    let check = |w: u32, h: u32, context: &'static str| -> Result<(), RenderError> {
        if w != base.width() || h != base.height() {
            return Err(RenderError::ShapeMismatch {
                context,
                left_w: base.width(),
                left_h: base.height(),
                right_w: w,
                right_h: h,
            });
        }
        Ok(())
    };
    check(sign.width(), sign.height(), "sign vs base")?;
    check(mask.width, mask.height, "mask vs base")?;
    if let Some(region) = blend_region {
        check(region.width, region.height, "blend region vs base")?;
    }
    Ok(composite_scan(
        base,
        sign,
        mask,
        lambda,
        blend_target,
        blend_region,
        ScanBox::full(base.width(), base.height()),
    ))
}

/// Composite restricted to `scan`; callers guarantee the mask and blend
/// region are zero outside it, so skipped pixels are passthrough anyway.
fn composite_scan(
    base: &Image,
    sign: &Image,
    mask: &AttackMask,
    lambda: f64,
    blend_target: Rgb,
    blend_region: Option<&AttackMask>,
    scan: ScanBox,
) -> Image {
    let mut out = base.clone();
    for y in scan.y0..scan.y1 {
        for x in scan.x0..scan.x1 {
            let m = mask.get(x, y) as f64;
            let in_region = blend_region.is_some_and(|r| r.get(x, y) > 0.0);
            if m == 0.0 && !in_region {
                continue; // bit-exact passthrough
            }
            if m == 1.0 {
                out.set_pixel(x, y, sign.pixel(x, y));
                continue;
            }
            let b = base.pixel(x, y);
            let s = sign.pixel(x, y);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let base_term = if in_region {
                    (1.0 - lambda) * b.0[c] as f64 + lambda * blend_target.0[c] as f64
                } else {
                    b.0[c] as f64
                };
                px[c] = round_half_up((1.0 - m) * base_term + m * s.0[c] as f64);
            }
            out.set_pixel(x, y, Rgb(px));
        }
    }
    out
}

/// A composited attack frame plus the geometry facts downstream consumers
/// need: the warped footprint mask, how much of the frame it covers, and
/// how much of the sign was clipped away by the frame edge.
#[derive(Debug, Clone)]
pub struct RenderedAttack {
    pub image: Image,
    /// Warped full-rectangle sign mask in scenario coordinates.
    pub mask: AttackMask,
    /// Fraction of frame pixels covered by the sign footprint.
    pub visible_area_fraction: f64,
    /// Fraction of the sign's nominal footprint lost to frame clipping.
    pub clipped_fraction: f64,
}

/// Renders `pi` into a scenario: rasterize the sign at its natural canvas,
/// warp it by the placement similarity about the sign center onto the
/// placement-region center, and composite.
///
/// A footprint that leaves the frame partially is clipped and recorded in
/// `clipped_fraction`; one that misses the frame or the placement region
/// entirely is an error.
pub fn render_attack(
    scenario: &Scenario,
    pi: &AttackParams,
    dictionary: &Dictionary,
) -> Result<RenderedAttack, RenderError> {
    pi.validate_against(dictionary)?;
    let (canvas_w, canvas_h) = natural_canvas(&pi.sign.text, pi.sign.font_scale);
    let raster = rasterize_sign_layers(&pi.sign, canvas_w, canvas_h)?;

    let (anchor_x, anchor_y) = scenario.placement_region.center();
    let (t_x, t_y) = pi.placement.translation;
    let matrix = translation_matrix(anchor_x + t_x, anchor_y + t_y)
        * similarity_matrix(pi.placement.scale, pi.placement.rotation, 0.0, 0.0)?
        * translation_matrix(-(canvas_w as f64) / 2.0, -(canvas_h as f64) / 2.0);

    let base = scenario.image.as_ref();
    let (frame_w, frame_h) = (base.width(), base.height());

    // Analytic footprint bounding box from the four sign corners.
    let corners = [
        apply_point(&matrix, 0.0, 0.0),
        apply_point(&matrix, canvas_w as f64, 0.0),
        apply_point(&matrix, 0.0, canvas_h as f64),
        apply_point(&matrix, canvas_w as f64, canvas_h as f64),
    ];
    let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    if max_x <= 0.0 || min_x >= frame_w as f64 || max_y <= 0.0 || min_y >= frame_h as f64 {
        return Err(RenderError::FootprintOutOfFrame {
            scenario_id: scenario.id.clone(),
        });
    }
    let region = &scenario.placement_region;
    if max_x <= region.x as f64
        || min_x >= region.right() as f64
        || max_y <= region.y as f64
        || min_y >= region.bottom() as f64
    {
        return Err(RenderError::FootprintMissesRegion {
            scenario_id: scenario.id.clone(),
        });
    }

    // The mask support lives inside the corner bbox, so scan loops skip
    // the rest of the frame (identical output, much less work).
    let scan = ScanBox::around(min_x, max_x, min_y, max_y, frame_w, frame_h);
    let inv = inverse_or_err(&matrix)?;
    let rect_mask = warp_mask_scan(&raster.mask, &inv, frame_w, frame_h, scan);
    let visible = rect_mask.support_size();
    if visible == 0 {
        return Err(RenderError::FootprintOutOfFrame {
            scenario_id: scenario.id.clone(),
        });
    }
    let nominal_area =
        pi.placement.scale * pi.placement.scale * canvas_w as f64 * canvas_h as f64;
    let clipped_fraction = (1.0 - visible as f64 / nominal_area).clamp(0.0, 1.0);
    let visible_area_fraction = visible as f64 / (frame_w as f64 * frame_h as f64);

    let image = if pi.blend_weight >= 1.0 {
        let sign_full =
            warp_image_scan(&raster.image, &inv, frame_w, frame_h, Rgb::BLACK, scan)?;
        composite_scan(
            base,
            &sign_full,
            &rect_mask,
            1.0,
            pi.sign.background_color,
            None,
            scan,
        )
    } else {
        // Translucent sign: letters replace, the sign background blends.
        let glyphs = warp_mask_scan(&raster.glyph_mask, &inv, frame_w, frame_h, scan);
        let letters =
            warp_image_scan(&raster.image, &inv, frame_w, frame_h, Rgb::BLACK, scan)?;
        composite_scan(
            base,
            &letters,
            &glyphs,
            pi.blend_weight,
            pi.sign.background_color,
            Some(&rect_mask),
            scan,
        )
    };
    Ok(RenderedAttack {
        image,
        mask: rect_mask,
        visible_area_fraction,
        clipped_fraction,
    })
}
