//! License-plate reading: perspective rectification of a plate
//! quadrilateral, character segmentation (grayscale, Gaussian blur, Otsu
//! threshold, morphological opening, connected components, size/aspect
//! filters), and recognition through a pluggable classifier. The reference
//! classifier matches 80x80 binary crops against a template atlas.

use std::io::BufRead;
use std::path::Path;

use image::{GrayImage, RgbImage};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font;

pub const CHAR_CROP_SIZE: u32 = 80;

#[derive(Debug, Error)]
pub enum PlateError {
    #[error("quad is degenerate: {0}")]
    DegenerateQuad(&'static str),
    #[error("homography is singular for this quad")]
    SingularHomography,
    #[error("template atlas is empty")]
    EmptyAtlas,
    #[error("template {path}: {msg}")]
    BadTemplate { path: String, msg: String },
    #[error("line {line}: malformed quad record: {msg}")]
    MalformedQuad { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Plate quadrilateral in source-image pixels, corners ordered top-left,
/// top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [(f64, f64); 4],
}

impl Quad {
    pub fn new(corners: [(f64, f64); 4]) -> Self {
        Self { corners }
    }

    /// Axis-aligned rectangle as a quad.
    pub fn from_rect(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])
    }

    /// Shoelace area in the screen convention (y down); positive for the
    /// TL, TR, BR, BL corner order.
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        let mut sum = 0.0;
        for i in 0..4 {
            let (x0, y0) = c[i];
            let (x1, y1) = c[(i + 1) % 4];
            sum += x0 * y1 - x1 * y0;
        }
        sum / 2.0
    }

    pub fn validate(&self) -> Result<(), PlateError> {
        if self.corners.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(PlateError::DegenerateQuad("non-finite corner"));
        }
        if self.area().abs() < 1.0 {
            return Err(PlateError::DegenerateQuad("zero area"));
        }
        let c = &self.corners;
        if segments_intersect(c[0], c[1], c[2], c[3]) || segments_intersect(c[1], c[2], c[3], c[0])
        {
            return Err(PlateError::DegenerateQuad("self-intersecting"));
        }
        Ok(())
    }
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    fn orient(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> f64 {
        (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
    }
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// 3x3 row-major homography mapping output-rectangle coordinates onto the
/// quad, solved from the four corner correspondences.
fn homography_to_quad(out_dims: (u32, u32), quad: &Quad) -> Result<[f64; 9], PlateError> {
    let (w, h) = (out_dims.0 as f64, out_dims.1 as f64);
    let src = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let dst = quad.corners;

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        let r = i * 2;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        b[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = v;
    }
    let sol = a.lu().solve(&b).ok_or(PlateError::SingularHomography)?;
    Ok([sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0])
}

fn apply_homography(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let d = m[6] * x + m[7] * y + m[8];
    ((m[0] * x + m[1] * y + m[2]) / d, (m[3] * x + m[4] * y + m[5]) / d)
}

fn bilinear_rgb(img: &RgbImage, x: f64, y: f64) -> [u8; 3] {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0u8; 3];
    for (ch, slot) in out.iter_mut().enumerate() {
        let p00 = img.get_pixel(x0, y0).0[ch] as f64;
        let p10 = img.get_pixel(x1, y0).0[ch] as f64;
        let p01 = img.get_pixel(x0, y1).0[ch] as f64;
        let p11 = img.get_pixel(x1, y1).0[ch] as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        *slot = (top + (bottom - top) * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Output rectangle that preserves the quad's own aspect ratio at the given
/// target height, estimated from the mean lengths of opposite edges.
pub fn natural_out_dims(quad: &Quad, target_height: u32) -> (u32, u32) {
    let c = &quad.corners;
    let len = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let w_est = (len(c[0], c[1]) + len(c[3], c[2])) / 2.0;
    let h_est = ((len(c[0], c[3]) + len(c[1], c[2])) / 2.0).max(1.0);
    let w = (target_height as f64 * w_est / h_est).round() as u32;
    (w.clamp(16, 1024), target_height)
}

/// Perspective-rectifies the plate quad into an `out_dims` rectangle with
/// bilinear sampling. Samples outside the image clamp to the border.
pub fn rectify_plate(
    image: &RgbImage,
    quad: &Quad,
    out_dims: (u32, u32),
) -> Result<RgbImage, PlateError> {
    quad.validate()?;
    let m = homography_to_quad(out_dims, quad)?;
    let mut out = RgbImage::new(out_dims.0, out_dims.1);
    for y in 0..out_dims.1 {
        for x in 0..out_dims.0 {
            let (sx, sy) = apply_homography(&m, x as f64 + 0.5, y as f64 + 0.5);
            let px = bilinear_rgb(image, sx - 0.5, sy - 0.5);
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    /// Gaussian blur sigma before thresholding.
    pub blur_sigma: f64,
    /// Component height bounds, as fractions of the plate height.
    pub height_lo: f64,
    pub height_hi: f64,
    /// Component aspect (w/h) bounds.
    pub aspect_lo: f64,
    pub aspect_hi: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            height_lo: 0.35,
            height_hi: 0.95,
            aspect_lo: 0.15,
            aspect_hi: 1.2,
        }
    }
}

/// An 80x80 binary character image with its left-to-right position index.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCrop {
    pixels: Vec<u8>,
    pub source_index: usize,
}

impl CharCrop {
    fn from_bits(bits: &[bool], source_index: usize) -> Self {
        debug_assert_eq!(bits.len(), (CHAR_CROP_SIZE * CHAR_CROP_SIZE) as usize);
        Self {
            pixels: bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
            source_index,
        }
    }

    /// Row-major pixels, each 0 or 255.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * CHAR_CROP_SIZE + x) as usize]
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0 || p == 255)
    }
}

fn gaussian_blur(gray: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let src: Vec<f64> = gray.pixels().map(|p| p.0[0] as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x as i64 + ki as i64 - radius, w);
                acc += src[y * w + sx] * k;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y as i64 + ki as i64 - radius, h);
                acc += tmp[sy * w + x] * k;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Otsu's threshold over a 256-bin histogram of the blurred values.
fn otsu_threshold(values: &[f64]) -> f64 {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[(v.round().clamp(0.0, 255.0)) as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut sum_bg = 0.0;
    let mut weight_bg = 0.0;
    let mut best = (0.0, 127.0);
    for (t, &count) in hist.iter().enumerate() {
        weight_bg += count as f64;
        if weight_bg == 0.0 {
            continue;
        }
        let weight_fg = total - weight_bg;
        if weight_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * count as f64;
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (sum_all - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg).powi(2);
        if between > best.0 {
            best = (between, t as f64);
        }
    }
    best.1
}

struct Mask {
    w: usize,
    h: usize,
    bits: Vec<bool>,
}

impl Mask {
    fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.w + x]
    }
}

fn erode_dilate(mask: &Mask, dilate: bool) -> Mask {
    let mut out = vec![false; mask.w * mask.h];
    for y in 0..mask.h {
        for x in 0..mask.w {
            let mut all = true;
            let mut any = false;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    let v = if nx < 0 || ny < 0 || nx >= mask.w as i64 || ny >= mask.h as i64 {
                        false
                    } else {
                        mask.get(nx as usize, ny as usize)
                    };
                    all &= v;
                    any |= v;
                }
            }
            out[y * mask.w + x] = if dilate { any } else { all };
        }
    }
    Mask {
        w: mask.w,
        h: mask.h,
        bits: out,
    }
}

struct Component {
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
    pixels: Vec<(usize, usize)>,
}

fn connected_components(mask: &Mask) -> Vec<Component> {
    let mut visited = vec![false; mask.w * mask.h];
    let mut components = Vec::new();
    for start_y in 0..mask.h {
        for start_x in 0..mask.w {
            let idx = start_y * mask.w + start_x;
            if visited[idx] || !mask.bits[idx] {
                continue;
            }
            let mut comp = Component {
                min_x: start_x,
                min_y: start_y,
                max_x: start_x,
                max_y: start_y,
                pixels: Vec::new(),
            };
            let mut queue = vec![(start_x, start_y)];
            visited[idx] = true;
            while let Some((x, y)) = queue.pop() {
                comp.min_x = comp.min_x.min(x);
                comp.max_x = comp.max_x.max(x);
                comp.min_y = comp.min_y.min(y);
                comp.max_y = comp.max_y.max(y);
                comp.pixels.push((x, y));
                // 8-connectivity: diagonal strokes stay one component
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= mask.w as i64 || ny >= mask.h as i64 {
                            continue;
                        }
                        let nidx = ny as usize * mask.w + nx as usize;
                        if !visited[nidx] && mask.bits[nidx] {
                            visited[nidx] = true;
                            queue.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
            components.push(comp);
        }
    }
    components
}

/// Pads a boolean image to a square (centered, background fill) and resizes
/// it to the 80x80 crop grid with bilinear sampling re-binarized at 0.5.
fn normalize_to_crop(bits: &[bool], w: usize, h: usize, source_index: usize) -> CharCrop {
    let side = w.max(h);
    let off_x = (side - w) / 2;
    let off_y = (side - h) / 2;
    let mut square = vec![false; side * side];
    for y in 0..h {
        for x in 0..w {
            square[(y + off_y) * side + (x + off_x)] = bits[y * w + x];
        }
    }
    let size = CHAR_CROP_SIZE as usize;
    let mut out = vec![false; size * size];
    let scale = side as f64 / size as f64;
    for oy in 0..size {
        for ox in 0..size {
            let sx = ((ox as f64 + 0.5) * scale - 0.5).clamp(0.0, side as f64 - 1.0);
            let sy = ((oy as f64 + 0.5) * scale - 0.5).clamp(0.0, side as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(side - 1);
            let y1 = (y0 + 1).min(side - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let sample = |x: usize, y: usize| -> f64 {
                if square[y * side + x] {
                    1.0
                } else {
                    0.0
                }
            };
            let top = sample(x0, y0) + (sample(x1, y0) - sample(x0, y0)) * fx;
            let bottom = sample(x0, y1) + (sample(x1, y1) - sample(x0, y1)) * fx;
            out[oy * size + ox] = top + (bottom - top) * fy >= 0.5;
        }
    }
    CharCrop::from_bits(&out, source_index)
}

/// Segments a plate crop into per-character 80x80 binary crops, ordered left
/// to right. A plate with no surviving components yields an empty list.
pub fn segment_characters(plate: &RgbImage, cfg: &SegmentConfig) -> Vec<CharCrop> {
    let comps = filtered_components(plate, cfg);
    comps
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let cw = c.max_x - c.min_x + 1;
            let ch = c.max_y - c.min_y + 1;
            let mut bits = vec![false; cw * ch];
            for &(x, y) in &c.pixels {
                bits[(y - c.min_y) * cw + (x - c.min_x)] = true;
            }
            normalize_to_crop(&bits, cw, ch, i)
        })
        .collect()
}

/// Pixel boxes (x, y, w, h) of the surviving components in reading order,
/// under the same filtering as [`segment_characters`].
pub fn segment_component_boxes(plate: &RgbImage, cfg: &SegmentConfig) -> Vec<(u32, u32, u32, u32)> {
    filtered_components(plate, cfg)
        .iter()
        .map(|c| {
            (
                c.min_x as u32,
                c.min_y as u32,
                (c.max_x - c.min_x + 1) as u32,
                (c.max_y - c.min_y + 1) as u32,
            )
        })
        .collect()
}

fn filtered_components(plate: &RgbImage, cfg: &SegmentConfig) -> Vec<Component> {
    if plate.width() == 0 || plate.height() == 0 {
        return Vec::new();
    }
    let gray: GrayImage = image::imageops::grayscale(plate);
    let blurred = gaussian_blur(&gray, cfg.blur_sigma);
    let threshold = otsu_threshold(&blurred);

    let w = plate.width() as usize;
    let h = plate.height() as usize;
    let bright: Vec<bool> = blurred.iter().map(|&v| v > threshold).collect();

    // the border majority is the background; glyphs are the other class
    let mut border_bright = 0usize;
    let mut border_total = 0usize;
    for x in 0..w {
        for y in [0, h - 1] {
            border_total += 1;
            border_bright += bright[y * w + x] as usize;
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            border_total += 1;
            border_bright += bright[y * w + x] as usize;
        }
    }
    let background_bright = border_bright * 2 >= border_total;
    let mask = Mask {
        w,
        h,
        bits: bright
            .iter()
            .map(|&b| if background_bright { !b } else { b })
            .collect(),
    };

    let opened = erode_dilate(&erode_dilate(&mask, false), true);
    let mut comps: Vec<Component> = connected_components(&opened)
        .into_iter()
        .filter(|c| {
            let ch = (c.max_y - c.min_y + 1) as f64;
            let cw = (c.max_x - c.min_x + 1) as f64;
            let rel_h = ch / h as f64;
            let aspect = cw / ch;
            rel_h >= cfg.height_lo
                && rel_h <= cfg.height_hi
                && aspect >= cfg.aspect_lo
                && aspect <= cfg.aspect_hi
        })
        .collect();
    comps.sort_by_key(|c| c.min_x);
    comps
}

// ---------------------------------------------------------------------------
// recognition
// ---------------------------------------------------------------------------

/// Character string read off a plate, with one score per character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateReadout {
    pub text: String,
    pub scores: Vec<f64>,
}

impl PlateReadout {
    pub fn empty() -> Self {
        Self {
            text: String::new(),
            scores: Vec::new(),
        }
    }

    /// Minimum per-character score; 0 for an empty readout.
    pub fn confidence(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().copied().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0)
    }
}

pub trait CharClassifier {
    fn classify(&self, crop: &CharCrop) -> Result<(char, f64), PlateError>;
}

/// One 80x80 binary template per character, matched by pixel agreement.
pub struct TemplateAtlas {
    templates: Vec<(char, Vec<u8>)>,
}

const TEMPLATE_RENDER_SCALE: usize = 8;

impl TemplateAtlas {
    /// Atlas rendered from the built-in font, processed through the same
    /// tight-crop / pad / resize path as segmented characters.
    pub fn builtin() -> Self {
        let templates = font::ALPHABET
            .chars()
            .map(|c| {
                let crop = render_glyph_crop(c);
                (c, crop.pixels().to_vec())
            })
            .collect();
        Self { templates }
    }

    /// Loads `<CHAR>.png` 80x80 binary images from a directory. Characters
    /// outside [A-Z0-9] and other files are ignored.
    pub fn load_dir(dir: &Path) -> Result<Self, PlateError> {
        let mut templates = Vec::new();
        for c in font::ALPHABET.chars() {
            let path = dir.join(format!("{c}.png"));
            if !path.exists() {
                continue;
            }
            let img = image::open(&path)
                .map_err(|e| PlateError::BadTemplate {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?
                .to_luma8();
            if img.dimensions() != (CHAR_CROP_SIZE, CHAR_CROP_SIZE) {
                return Err(PlateError::BadTemplate {
                    path: path.display().to_string(),
                    msg: format!("expected 80x80, got {}x{}", img.width(), img.height()),
                });
            }
            templates.push((c, img.pixels().map(|p| if p.0[0] >= 128 { 255 } else { 0 }).collect()));
        }
        if templates.is_empty() {
            return Err(PlateError::EmptyAtlas);
        }
        Ok(Self { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

fn render_glyph_crop(c: char) -> CharCrop {
    let mask = font::glyph_mask(c).expect("alphabet glyph");
    let s = TEMPLATE_RENDER_SCALE;
    // tight cell bounds
    let mut min_x = font::GLYPH_WIDTH;
    let mut max_x = 0;
    for row in mask.iter() {
        for (x, &b) in row.iter().enumerate() {
            if b {
                min_x = min_x.min(x);
                max_x = max_x.max(x);
            }
        }
    }
    let cells_w = max_x - min_x + 1;
    let w = cells_w * s;
    let h = font::GLYPH_HEIGHT * s;
    let mut bits = vec![false; w * h];
    for (cy, row) in mask.iter().enumerate() {
        for cx in min_x..=max_x {
            if row[cx] {
                for dy in 0..s {
                    for dx in 0..s {
                        bits[(cy * s + dy) * w + (cx - min_x) * s + dx] = true;
                    }
                }
            }
        }
    }
    normalize_to_crop(&bits, w, h, 0)
}

/// Normalized pixel-agreement argmax over the atlas. Equal scores resolve to
/// the alphabetically first character.
pub fn template_classify(crop: &CharCrop, atlas: &TemplateAtlas) -> Result<(char, f64), PlateError> {
    if atlas.templates.is_empty() {
        return Err(PlateError::EmptyAtlas);
    }
    let total = (CHAR_CROP_SIZE * CHAR_CROP_SIZE) as f64;
    let mut best: Option<(char, f64)> = None;
    for (c, template) in &atlas.templates {
        let agree = crop
            .pixels()
            .iter()
            .zip(template.iter())
            .filter(|(a, b)| a == b)
            .count() as f64
            / total;
        if best.is_none_or(|(_, b)| agree > b) {
            best = Some((*c, agree));
        }
    }
    Ok(best.unwrap())
}

impl CharClassifier for TemplateAtlas {
    fn classify(&self, crop: &CharCrop) -> Result<(char, f64), PlateError> {
        template_classify(crop, self)
    }
}

/// Classifies each crop independently and concatenates in order. A failed
/// crop contributes '?' with score 0 rather than aborting the readout.
pub fn recognize_characters(crops: &[CharCrop], classifier: &dyn CharClassifier) -> PlateReadout {
    let mut text = String::with_capacity(crops.len());
    let mut scores = Vec::with_capacity(crops.len());
    for crop in crops {
        match classifier.classify(crop) {
            Ok((c, score)) => {
                text.push(c);
                scores.push(score);
            }
            Err(_) => {
                text.push('?');
                scores.push(0.0);
            }
        }
    }
    PlateReadout { text, scores }
}

// ---------------------------------------------------------------------------
// quad annotations
// ---------------------------------------------------------------------------

/// One line of a quad sidecar file: which frame, an opaque source id, and
/// the plate corners.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadAnnotation {
    pub frame_index: u64,
    pub source_id: u64,
    pub quad: Quad,
}

/// Parses the line format `frame_index, source_id, x1,y1,...,x4,y4`
/// (tab-separated, `#` comments).
pub fn parse_quad_file(reader: impl BufRead) -> Result<Vec<QuadAnnotation>, PlateError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 10 {
            return Err(PlateError::MalformedQuad {
                line: line_no,
                msg: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let bad = |msg: String| PlateError::MalformedQuad { line: line_no, msg };
        let frame_index: u64 = fields[0].parse().map_err(|e| bad(format!("frame: {e}")))?;
        let source_id: u64 = fields[1].parse().map_err(|e| bad(format!("id: {e}")))?;
        let mut nums = [0.0f64; 8];
        for (i, f) in fields[2..].iter().enumerate() {
            nums[i] = f.parse().map_err(|e| bad(format!("corner {}: {e}", i / 2 + 1)))?;
        }
        out.push(QuadAnnotation {
            frame_index,
            source_id,
            quad: Quad::new([
                (nums[0], nums[1]),
                (nums[2], nums[3]),
                (nums[4], nums[5]),
                (nums[6], nums[7]),
            ]),
        });
    }
    Ok(out)
}

/// Serializes quad annotations back to the line format.
pub fn serialize_quad_file(quads: &[QuadAnnotation]) -> String {
    let mut out = String::new();
    for q in quads {
        let c = q.quad.corners;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            q.frame_index, q.source_id, c[0].0, c[0].1, c[1].0, c[1].1, c[2].0, c[2].1, c[3].0,
            c[3].1
        ));
    }
    out
}
