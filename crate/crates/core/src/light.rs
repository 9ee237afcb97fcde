//! Traffic-light color classification from an RGB crop.
//!
//! The crop is split into three equal pieces along its long axis, one per
//! expected lamp (red, yellow, green in reading order). In each piece the two
//! non-dominant channels are divided by the expected lamp's dominant channel,
//! the ratio image is inverted so dominance reads bright, binarized at a
//! fixed intensity of 40, and white pixels counted. The piece with the most
//! white pixels wins if enough of it is lit; a 10-observation plurality vote
//! smooths the per-frame decision.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::BBox;

#[derive(Debug, Error)]
pub enum LightError {
    #[error("crop {w}x{h} too small to split into three along the {axis} axis")]
    DegenerateCrop { w: u32, h: u32, axis: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightColor {
    Red,
    Yellow,
    Green,
    Unknown,
}

impl LightColor {
    pub fn as_token(&self) -> &'static str {
        match self {
            LightColor::Red => "red",
            LightColor::Yellow => "yellow",
            LightColor::Green => "green",
            LightColor::Unknown => "unknown",
        }
    }
}

/// Per-frame classification result with the raw per-split white counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LightObservation {
    pub frame_index: u64,
    pub color: LightColor,
    pub white_counts: [u32; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LightConfig {
    /// Binarization threshold on the inverted ratio image (0-255).
    pub threshold: u8,
    /// Minimum lit fraction of the winning split's pixels.
    pub min_lit_fraction: f64,
    /// Temporal vote window, in observations.
    pub vote_window: usize,
    /// Minimum non-Unknown observations before the vote decides.
    pub vote_min_valid: usize,
}

impl Default for LightConfig {
    fn default() -> Self {
        Self {
            threshold: 40,
            min_lit_fraction: 0.05,
            vote_window: 10,
            vote_min_valid: 6,
        }
    }
}

/// Vertical if the box is at least as tall as it is wide (square ties go
/// vertical), horizontal otherwise.
pub fn orientation(b: &BBox) -> Orientation {
    if b.h >= b.w {
        Orientation::Vertical
    } else {
        Orientation::Horizontal
    }
}

/// Splits the crop into three contiguous equal pieces along the split axis,
/// top-to-bottom for vertical lights and left-to-right for horizontal ones.
/// Remainder pixels go to the last piece.
pub fn split_light(crop: &RgbImage, o: Orientation) -> Result<[RgbImage; 3], LightError> {
    let (w, h) = crop.dimensions();
    let along = match o {
        Orientation::Vertical => h,
        Orientation::Horizontal => w,
    };
    if along < 3 || w == 0 || h == 0 {
        return Err(LightError::DegenerateCrop {
            w,
            h,
            axis: match o {
                Orientation::Vertical => "y",
                Orientation::Horizontal => "x",
            },
        });
    }
    let piece = along / 3;
    let bounds = [
        (0, piece),
        (piece, 2 * piece),
        (2 * piece, along),
    ];
    let mut out = Vec::with_capacity(3);
    for (lo, hi) in bounds {
        let img = match o {
            Orientation::Vertical => {
                image::imageops::crop_imm(crop, 0, lo, w, hi - lo).to_image()
            }
            Orientation::Horizontal => {
                image::imageops::crop_imm(crop, lo, 0, hi - lo, h).to_image()
            }
        };
        out.push(img);
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Expected lamp color of each split index, in reading order.
const SPLIT_COLORS: [LightColor; 3] = [LightColor::Red, LightColor::Yellow, LightColor::Green];

/// Channel that should dominate when the split's lamp is lit.
fn dominant_channel(color: LightColor) -> usize {
    match color {
        LightColor::Red | LightColor::Yellow => 0,
        LightColor::Green => 1,
        LightColor::Unknown => unreachable!("no dominant channel for Unknown"),
    }
}

/// White-pixel count of one split: per pixel, non-dominant channels are
/// divided by the dominant one (guarded at >= 1), the mean ratio is mapped to
/// 0-255 and inverted so strong dominance reads bright, then thresholded.
fn lit_pixel_count(split: &RgbImage, expected: LightColor, threshold: u8) -> u32 {
    let dom = dominant_channel(expected);
    let mut count = 0u32;
    for px in split.pixels() {
        let d = f64::from(px.0[dom]).max(1.0);
        let mut ratio_sum = 0.0;
        for (ch, &v) in px.0.iter().enumerate() {
            if ch == dom {
                continue;
            }
            ratio_sum += (f64::from(v) / d * 255.0).min(255.0);
        }
        let gray = ratio_sum / 2.0;
        let lit = 255.0 - gray;
        if lit >= f64::from(threshold) {
            count += 1;
        }
    }
    count
}

/// Classifies one crop. The winner is the split with the most white pixels,
/// provided its lit fraction clears `min_lit_fraction`; ties and all-dark
/// crops yield Unknown.
pub fn classify_light_frame(
    frame_index: u64,
    crop: &RgbImage,
    o: Orientation,
    cfg: &LightConfig,
) -> Result<LightObservation, LightError> {
    let splits = split_light(crop, o)?;
    let mut white_counts = [0u32; 3];
    let mut split_pixels = [0u32; 3];
    for (i, split) in splits.iter().enumerate() {
        white_counts[i] = lit_pixel_count(split, SPLIT_COLORS[i], cfg.threshold);
        split_pixels[i] = split.width() * split.height();
    }

    let max = *white_counts.iter().max().unwrap();
    let winners: Vec<usize> = (0..3).filter(|&i| white_counts[i] == max).collect();
    let color = if winners.len() != 1 {
        LightColor::Unknown
    } else {
        let i = winners[0];
        let fraction = f64::from(white_counts[i]) / f64::from(split_pixels[i].max(1));
        if fraction >= cfg.min_lit_fraction {
            SPLIT_COLORS[i]
        } else {
            LightColor::Unknown
        }
    };
    Ok(LightObservation {
        frame_index,
        color,
        white_counts,
    })
}

/// Plurality vote over the last `vote_window` observations. Unknown when the
/// top colors tie or fewer than `vote_min_valid` observations carry a color.
pub fn classify_light_temporal(history: &[LightObservation], cfg: &LightConfig) -> LightColor {
    let start = history.len().saturating_sub(cfg.vote_window);
    let window = &history[start..];
    let mut counts = [0usize; 3];
    for obs in window {
        match obs.color {
            LightColor::Red => counts[0] += 1,
            LightColor::Yellow => counts[1] += 1,
            LightColor::Green => counts[2] += 1,
            LightColor::Unknown => {}
        }
    }
    let valid: usize = counts.iter().sum();
    if valid < cfg.vote_min_valid {
        return LightColor::Unknown;
    }
    let max = *counts.iter().max().unwrap();
    let winners: Vec<usize> = (0..3).filter(|&i| counts[i] == max).collect();
    if winners.len() != 1 {
        return LightColor::Unknown;
    }
    SPLIT_COLORS[winners[0]]
}

/// Per-frame voted color for a stream of observations: the vote at each
/// observation considers the window ending there, and frames between
/// observations inherit the latest vote.
pub fn vote_timeline(observations: &[LightObservation], cfg: &LightConfig) -> Vec<(u64, LightColor)> {
    let mut out = Vec::with_capacity(observations.len());
    for i in 0..observations.len() {
        let upto = &observations[..=i];
        let color = classify_light_temporal(upto, cfg);
        out.push((observations[i].frame_index, color));
    }
    out
}

/// Looks up the voted color effective at `frame_index` (latest vote at or
/// before the frame).
pub fn voted_color_at(timeline: &[(u64, LightColor)], frame_index: u64) -> LightColor {
    match timeline.binary_search_by_key(&frame_index, |&(f, _)| f) {
        Ok(i) => timeline[i].1,
        Err(0) => LightColor::Unknown,
        Err(i) => timeline[i - 1].1,
    }
}
