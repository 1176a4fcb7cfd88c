//! Screenshot normalization onto the fixed 960x540 model canvas and
//! training-time image augmentation.
//!
//! All resampling is exact integer area averaging. Every output sample is
//! `round_half_up(sum(weight * value) / total_weight)`, so results do not
//! depend on summation order or floating-point behaviour.

use chrono::{DateTime, Utc};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the intermediate letterbox canvas.
pub const CANVAS_WIDTH: usize = 1920;
/// Height of the intermediate letterbox canvas.
pub const CANVAS_HEIGHT: usize = 1080;
/// Downsampling applied to the canvas.
pub const CANVAS_DOWNSAMPLE: f64 = 0.5;
/// Model input width.
pub const NORMALIZED_WIDTH: usize = 960;
/// Model input height.
pub const NORMALIZED_HEIGHT: usize = 540;

/// Screenshot as captured, at device resolution. Row-major RGB8.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScreenshot {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub source_domain: String,
    pub captured_at: DateTime<Utc>,
}

impl RawScreenshot {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "screenshot has zero dimension ({width}x{height})"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "pixel buffer length {} does not match {width}x{height}x3",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_domain: String::new(),
            captured_at: Utc::now(),
        })
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.source_domain = domain.into();
        self
    }

    pub fn with_capture_time(mut self, at: DateTime<Utc>) -> Self {
        self.captured_at = at;
        self
    }

    /// Solid-colour screenshot, mostly useful in tests.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

/// A screenshot projected onto the fixed 960x540 canvas.
///
/// `scale_factor` is the isotropic resize applied before letterboxing (1.0
/// when the screenshot already fit the 1920x1080 frame); the fixed 0.5
/// canvas downsample is not included. Every pixel outside `content_rect` is
/// exactly black.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pixels: Vec<u8>,
    pub scale_factor: f64,
    pub content_rect: Rect,
}

impl NormalizedImage {
    pub const WIDTH: usize = NORMALIZED_WIDTH;
    pub const HEIGHT: usize = NORMALIZED_HEIGHT;

    /// Wraps a 960x540 canvas, deriving the content rectangle as the bounding
    /// box of non-black pixels.
    pub fn from_canvas(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != Self::WIDTH * Self::HEIGHT * 3 {
            return Err(Error::invalid(format!(
                "normalized canvas must be {}x{} RGB, got {} bytes",
                Self::WIDTH,
                Self::HEIGHT,
                pixels.len()
            )));
        }
        let content_rect = nonzero_bounds(&pixels, Self::WIDTH, Self::HEIGHT)
            .unwrap_or(Rect::new(0, 0, 0, 0));
        Ok(Self {
            pixels,
            scale_factor: 1.0,
            content_rect,
        })
    }

    pub fn width(&self) -> usize {
        Self::WIDTH
    }

    pub fn height(&self) -> usize {
        Self::HEIGHT
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Same geometry with replacement pixel data.
    pub fn with_pixels(&self, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != self.pixels.len() {
            return Err(Error::invalid(format!(
                "expected {} bytes, got {}",
                self.pixels.len(),
                pixels.len()
            )));
        }
        Ok(Self {
            pixels,
            scale_factor: self.scale_factor,
            content_rect: self.content_rect,
        })
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * Self::WIDTH + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

fn nonzero_bounds(pixels: &[u8], width: usize, height: usize) -> Option<Rect> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..height {
        for x in 0..width {
            let i = (y * width + x) * 3;
            if pixels[i] | pixels[i + 1] | pixels[i + 2] != 0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x0 != usize::MAX).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
}

#[inline]
fn div_round_half_up(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

/// Source footprint of every output sample along one axis.
///
/// Coordinates are measured in units of `1/dst` source pixels so all overlaps
/// are integers; each output sample has total weight `src`.
struct AxisWeights {
    spans: Vec<(usize, Vec<u64>)>,
}

impl AxisWeights {
    fn new(src: usize, dst: usize) -> Self {
        let (src64, dst64) = (src as u64, dst as u64);
        let spans = (0..dst64)
            .map(|o| {
                let lo = o * src64;
                let hi = lo + src64;
                let first = lo / dst64;
                let last = (hi - 1) / dst64;
                let weights = (first..=last)
                    .map(|i| {
                        let a = (i * dst64).max(lo);
                        let b = ((i + 1) * dst64).min(hi);
                        b - a
                    })
                    .collect();
                (first as usize, weights)
            })
            .collect();
        Self { spans }
    }
}

/// Area-average resample of an RGB8 buffer to `dst_w` x `dst_h`.
///
/// Works for both shrinking and enlarging; round-half-up on the final value.
pub fn resize_area(
    pixels: &[u8],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<u8> {
    assert_eq!(pixels.len(), src_w * src_h * 3, "buffer size mismatch");
    assert!(src_w > 0 && src_h > 0 && dst_w > 0 && dst_h > 0);
    if src_w == dst_w && src_h == dst_h {
        return pixels.to_vec();
    }
    let xs = AxisWeights::new(src_w, dst_w);
    let ys = AxisWeights::new(src_h, dst_h);
    let total = (src_w * src_h) as u64;

    let horizontal = |row: usize| -> Vec<u64> {
        let src_row = &pixels[row * src_w * 3..(row + 1) * src_w * 3];
        let mut out = vec![0u64; dst_w * 3];
        for (ox, (first, weights)) in xs.spans.iter().enumerate() {
            let mut acc = [0u64; 3];
            for (k, &wt) in weights.iter().enumerate() {
                let p = &src_row[(first + k) * 3..(first + k) * 3 + 3];
                acc[0] += wt * p[0] as u64;
                acc[1] += wt * p[1] as u64;
                acc[2] += wt * p[2] as u64;
            }
            out[ox * 3..ox * 3 + 3].copy_from_slice(&acc);
        }
        out
    };

    let mut out = vec![0u8; dst_w * dst_h * 3];
    let mut cached: Option<(usize, Vec<u64>)> = None;
    let mut acc = vec![0u64; dst_w * 3];
    for (oy, (first, weights)) in ys.spans.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0);
        for (k, &wt) in weights.iter().enumerate() {
            let row = first + k;
            let h = match cached.take() {
                Some((r, h)) if r == row => h,
                _ => horizontal(row),
            };
            for (a, &v) in acc.iter_mut().zip(&h) {
                *a += wt * v;
            }
            cached = Some((row, h));
        }
        let dst_row = &mut out[oy * dst_w * 3..(oy + 1) * dst_w * 3];
        for (d, &a) in dst_row.iter_mut().zip(&acc) {
            *d = div_round_half_up(a, total) as u8;
        }
    }
    out
}

/// Output size of a `dim * factor` downsample, rounded half-up, at least 1.
pub fn scaled_dim(dim: usize, factor: f64) -> usize {
    ((dim as f64 * factor + 0.5).floor() as usize).max(1)
}

/// Box-filter downsample by `factor` in (0, 1].
pub fn downsample(
    pixels: &[u8],
    width: usize,
    height: usize,
    factor: f64,
) -> Result<(Vec<u8>, usize, usize)> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!(
            "downsample factor must be in (0, 1], got {factor}"
        )));
    }
    if width == 0 || height == 0 || pixels.len() != width * height * 3 {
        return Err(Error::invalid("downsample input has inconsistent dimensions"));
    }
    let (w, h) = (scaled_dim(width, factor), scaled_dim(height, factor));
    Ok((resize_area(pixels, width, height, w, h), w, h))
}

/// Size an image of `w` x `h` takes when fitted inside `max_w` x `max_h`
/// preserving aspect ratio (round-half-up on the constrained side).
pub(crate) fn fit_within(w: usize, h: usize, max_w: usize, max_h: usize) -> (usize, usize) {
    let (w64, h64, mw, mh) = (w as u64, h as u64, max_w as u64, max_h as u64);
    // max_w / w <= max_h / h  <=>  max_w * h <= max_h * w
    if mw * h64 <= mh * w64 {
        let nh = div_round_half_up(h64 * mw, w64).clamp(1, mh);
        (max_w, nh as usize)
    } else {
        let nw = div_round_half_up(w64 * mh, h64).clamp(1, mw);
        (nw as usize, max_h)
    }
}

/// Paste `src` centered on a black `canvas_w` x `canvas_h` canvas; offsets
/// are floored. Returns the canvas and the top-left offset.
fn center_on_canvas(
    src: &[u8],
    w: usize,
    h: usize,
    canvas_w: usize,
    canvas_h: usize,
) -> (Vec<u8>, usize, usize) {
    let ox = (canvas_w - w) / 2;
    let oy = (canvas_h - h) / 2;
    let mut canvas = vec![0u8; canvas_w * canvas_h * 3];
    for y in 0..h {
        let dst = ((oy + y) * canvas_w + ox) * 3;
        canvas[dst..dst + w * 3].copy_from_slice(&src[y * w * 3..(y + 1) * w * 3]);
    }
    (canvas, ox, oy)
}

/// Projects a raw screenshot onto the 1920x1080 frame and downsamples it to
/// the 960x540 model canvas.
///
/// Oversized screenshots are scaled isotropically to fit; smaller ones are
/// placed unscaled. Margins are black.
pub fn normalize_screenshot(raw: &RawScreenshot) -> Result<NormalizedImage> {
    let (w, h) = (raw.width, raw.height);
    if w == 0 || h == 0 {
        return Err(Error::invalid("screenshot has zero dimension"));
    }
    if raw.pixels.len() != w * h * 3 {
        return Err(Error::invalid("screenshot buffer length mismatch"));
    }

    let oversized = w > CANVAS_WIDTH || h > CANVAS_HEIGHT;
    let (scaled, sw, sh, scale_factor) = if oversized {
        let (sw, sh) = fit_within(w, h, CANVAS_WIDTH, CANVAS_HEIGHT);
        let factor = (CANVAS_WIDTH as f64 / w as f64).min(CANVAS_HEIGHT as f64 / h as f64);
        (resize_area(&raw.pixels, w, h, sw, sh), sw, sh, factor)
    } else {
        (raw.pixels.clone(), w, h, 1.0)
    };

    let (canvas, ox, oy) = center_on_canvas(&scaled, sw, sh, CANVAS_WIDTH, CANVAS_HEIGHT);
    let (pixels, out_w, out_h) =
        downsample(&canvas, CANVAS_WIDTH, CANVAS_HEIGHT, CANVAS_DOWNSAMPLE)?;
    debug_assert_eq!((out_w, out_h), (NORMALIZED_WIDTH, NORMALIZED_HEIGHT));

    // Output pixel x covers canvas columns 2x and 2x+1.
    let x0 = ox / 2;
    let y0 = oy / 2;
    let x1 = (ox + sw).div_ceil(2);
    let y1 = (oy + sh).div_ceil(2);
    Ok(NormalizedImage {
        pixels,
        scale_factor,
        content_rect: Rect::new(x0, y0, x1 - x0, y1 - y0),
    })
}

/// ITU-R BT.601 luma in thousandths: `299 R + 587 G + 114 B`, range 0..=255000.
#[inline]
pub fn luma_milli(p: &[u8]) -> u32 {
    299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32
}

#[inline]
fn luma_u8(p: &[u8]) -> u8 {
    ((luma_milli(p) + 500) / 1000) as u8
}

/// Training-time image transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Inversion,
    Grayscale,
    MarginCrop,
    HueShift,
    Brightness,
    Contrast,
    Saturation,
    Solarization,
}

impl Transform {
    pub const ALL: [Transform; 8] = [
        Transform::Inversion,
        Transform::Grayscale,
        Transform::MarginCrop,
        Transform::HueShift,
        Transform::Brightness,
        Transform::Contrast,
        Transform::Saturation,
        Transform::Solarization,
    ];
}

/// Seeded choice of two distinct transforms from a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub seed: u64,
    pool: Vec<Transform>,
}

impl AugmentationSpec {
    /// Transforms applied per augmentation.
    pub const COUNT: usize = 2;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            pool: Transform::ALL.to_vec(),
        }
    }

    /// Restricts selection to `pool`, which must hold at least two distinct
    /// transforms.
    pub fn with_pool(seed: u64, pool: Vec<Transform>) -> Result<Self> {
        if pool.len() < Self::COUNT {
            return Err(Error::invalid("augmentation pool needs at least two transforms"));
        }
        for (i, t) in pool.iter().enumerate() {
            if pool[..i].contains(t) {
                return Err(Error::invalid(format!("transform {t:?} listed twice in pool")));
            }
        }
        Ok(Self { seed, pool })
    }

    pub fn pool(&self) -> &[Transform] {
        &self.pool
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            pool: self.pool.clone(),
        }
    }
}

/// A transform together with the parameters it was drawn with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AppliedTransform {
    Inversion,
    Grayscale,
    MarginCrop { left: f64, right: f64, top: f64, bottom: f64 },
    HueShift { degrees: f64 },
    Brightness { factor: f64 },
    Contrast { factor: f64 },
    Saturation { factor: f64 },
    Solarization { threshold: u8 },
}

impl AppliedTransform {
    pub fn kind(&self) -> Transform {
        match self {
            AppliedTransform::Inversion => Transform::Inversion,
            AppliedTransform::Grayscale => Transform::Grayscale,
            AppliedTransform::MarginCrop { .. } => Transform::MarginCrop,
            AppliedTransform::HueShift { .. } => Transform::HueShift,
            AppliedTransform::Brightness { .. } => Transform::Brightness,
            AppliedTransform::Contrast { .. } => Transform::Contrast,
            AppliedTransform::Saturation { .. } => Transform::Saturation,
            AppliedTransform::Solarization { .. } => Transform::Solarization,
        }
    }

    // Parameter ranges keep rendered text legible.
    fn draw(kind: Transform, rng: &mut impl Rng) -> Self {
        match kind {
            Transform::Inversion => AppliedTransform::Inversion,
            Transform::Grayscale => AppliedTransform::Grayscale,
            Transform::MarginCrop => AppliedTransform::MarginCrop {
                left: rng.gen_range(0.0..=0.10),
                right: rng.gen_range(0.0..=0.10),
                top: rng.gen_range(0.0..=0.10),
                bottom: rng.gen_range(0.0..=0.10),
            },
            Transform::HueShift => AppliedTransform::HueShift {
                degrees: rng.gen_range(90.0..=270.0),
            },
            Transform::Brightness => AppliedTransform::Brightness {
                factor: rng.gen_range(0.7..=1.3),
            },
            Transform::Contrast => AppliedTransform::Contrast {
                factor: rng.gen_range(0.7..=1.3),
            },
            Transform::Saturation => AppliedTransform::Saturation {
                factor: rng.gen_range(0.4..=1.6),
            },
            Transform::Solarization => AppliedTransform::Solarization {
                threshold: rng.gen_range(160..=240),
            },
        }
    }
}

/// Applies two distinct, seed-selected transforms in selection order.
pub fn augment_image(img: &NormalizedImage, spec: &AugmentationSpec) -> NormalizedImage {
    augment_image_traced(img, spec).0
}

/// Like [`augment_image`], also reporting what was applied.
pub fn augment_image_traced(
    img: &NormalizedImage,
    spec: &AugmentationSpec,
) -> (NormalizedImage, Vec<AppliedTransform>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let picks = index::sample(&mut rng, spec.pool.len(), AugmentationSpec::COUNT);
    let applied: Vec<AppliedTransform> = picks
        .iter()
        .map(|i| AppliedTransform::draw(spec.pool[i], &mut rng))
        .collect();
    let mut out = img.clone();
    for t in &applied {
        out = apply_transform(&out, t);
    }
    (out, applied)
}

/// Applies one transform. Colour transforms touch only the content region,
/// so padding stays black.
pub fn apply_transform(img: &NormalizedImage, t: &AppliedTransform) -> NormalizedImage {
    match *t {
        AppliedTransform::MarginCrop {
            left,
            right,
            top,
            bottom,
        } => margin_crop(img, left, right, top, bottom),
        AppliedTransform::Contrast { factor } => {
            let mean = content_mean_luma(img);
            map_content(img, |p| {
                let f = |v: u8| clamp_u8((v as f64 - mean) * factor + mean);
                [f(p[0]), f(p[1]), f(p[2])]
            })
        }
        _ => map_content(img, |p| color_op(t, p)),
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn color_op(t: &AppliedTransform, p: [u8; 3]) -> [u8; 3] {
    match *t {
        AppliedTransform::Inversion => [255 - p[0], 255 - p[1], 255 - p[2]],
        AppliedTransform::Grayscale => {
            let y = luma_u8(&p);
            [y, y, y]
        }
        AppliedTransform::HueShift { degrees } => hue_rotate(p, degrees),
        AppliedTransform::Brightness { factor } => [
            clamp_u8(p[0] as f64 * factor),
            clamp_u8(p[1] as f64 * factor),
            clamp_u8(p[2] as f64 * factor),
        ],
        AppliedTransform::Saturation { factor } => {
            let y = luma_milli(&p) as f64 / 1000.0;
            let f = |v: u8| clamp_u8(y + (v as f64 - y) * factor);
            [f(p[0]), f(p[1]), f(p[2])]
        }
        AppliedTransform::Solarization { threshold } => {
            let f = |v: u8| if v >= threshold { 255 - v } else { v };
            [f(p[0]), f(p[1]), f(p[2])]
        }
        AppliedTransform::MarginCrop { .. } | AppliedTransform::Contrast { .. } => p,
    }
}

fn map_content(img: &NormalizedImage, f: impl Fn([u8; 3]) -> [u8; 3]) -> NormalizedImage {
    let mut out = img.clone();
    let r = img.content_rect;
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            let i = (y * NORMALIZED_WIDTH + x) * 3;
            let q = f([out.pixels[i], out.pixels[i + 1], out.pixels[i + 2]]);
            out.pixels[i..i + 3].copy_from_slice(&q);
        }
    }
    out
}

fn content_mean_luma(img: &NormalizedImage) -> f64 {
    let r = img.content_rect;
    if r.w == 0 || r.h == 0 {
        return 0.0;
    }
    let mut sum = 0u64;
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            let i = (y * NORMALIZED_WIDTH + x) * 3;
            sum += luma_milli(&img.pixels[i..i + 3]) as u64;
        }
    }
    sum as f64 / (1000.0 * (r.w * r.h) as f64)
}

fn hue_rotate(p: [u8; 3], degrees: f64) -> [u8; 3] {
    let [r, g, b] = p.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return p;
    }
    let mut hue = if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    hue = (hue + degrees).rem_euclid(360.0);
    let s = delta / max;
    let v = max;
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r1 + m, g1 + m, b1 + m].map(|v| clamp_u8(v * 255.0))
}

fn margin_crop(img: &NormalizedImage, left: f64, right: f64, top: f64, bottom: f64) -> NormalizedImage {
    let r = img.content_rect;
    if r.w < 2 || r.h < 2 {
        return img.clone();
    }
    let cut = |frac: f64, len: usize| (frac.clamp(0.0, 0.1) * len as f64).floor() as usize;
    let (l, rt) = (cut(left, r.w), cut(right, r.w));
    let (t, b) = (cut(top, r.h), cut(bottom, r.h));
    let cw = r.w - l - rt;
    let ch = r.h - t - b;
    let mut crop = Vec::with_capacity(cw * ch * 3);
    for y in r.y + t..r.y + t + ch {
        let start = (y * NORMALIZED_WIDTH + r.x + l) * 3;
        crop.extend_from_slice(&img.pixels[start..start + cw * 3]);
    }
    let (nw, nh) = fit_within(cw, ch, NORMALIZED_WIDTH, NORMALIZED_HEIGHT);
    let resized = resize_area(&crop, cw, ch, nw, nh);
    let (pixels, ox, oy) = center_on_canvas(&resized, nw, nh, NORMALIZED_WIDTH, NORMALIZED_HEIGHT);
    NormalizedImage {
        pixels,
        scale_factor: img.scale_factor * nw as f64 / cw as f64,
        content_rect: Rect::new(ox, oy, nw, nh),
    }
}

/// Dense float view of a normalized image, channel-interleaved, values in
/// [0, 1]. Adversarial examples live in this representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn from_normalized(img: &NormalizedImage) -> Self {
        Self {
            width: NORMALIZED_WIDTH,
            height: NORMALIZED_HEIGHT,
            data: img.pixels.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    /// Quantizes back to RGB8 (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Largest absolute per-value difference.
    pub fn linf_distance(&self, other: &FloatImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
