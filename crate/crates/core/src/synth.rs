//! Deterministic synthetic scene generator: scripted actors become detection
//! streams, frame images (traffic lights, plates), quad annotations, and
//! ground-truth violation labels. All randomness flows from one seeded
//! counter-based generator, so a seed pins every output byte.

pub mod table1;

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font;
use crate::ingest::{
    self, frame_image_name, validate_bbox, BBox, ClassLabel, Detection, Frame, FrameStream,
};
use crate::light::LightColor;
use crate::plate::{Quad, QuadAnnotation};
use crate::tracker::{TrackPoint, Trajectory};
use crate::violations::{self, ViolationConfig, ViolationEvent, ViolationKind};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("planted {kind} for actor {actor_id} fails the generator self-check: {msg}")]
    MarginCheck {
        kind: ViolationKind,
        actor_id: u32,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, msg: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// Scripted box keyframe; boxes interpolate linearly between waypoints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: u64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorSpec {
    pub id: u32,
    pub label: ClassLabel,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub plate: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LightScriptEntry {
    pub from_frame: u64,
    pub to_frame: u64,
    pub color: LightColor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedViolation {
    pub kind: ViolationKind,
    pub actor_id: u32,
    pub frame_range: (u64, u64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian jitter of the box center, px.
    pub center_jitter_px: f64,
    /// Multiplicative Gaussian jitter of each box dimension.
    pub size_jitter_frac: f64,
    /// Probability a detection is dropped.
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            center_jitter_px: 1.0,
            size_jitter_frac: 0.02,
            dropout: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scene_id: String,
    pub seed: u64,
    pub fps: f64,
    pub frame_dims: (u32, u32),
    pub duration_frames: u64,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub planted: Vec<PlantedViolation>,
    #[serde(default)]
    pub light_script: Vec<LightScriptEntry>,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Render frame images (needed by the red-light rule and evidence crops).
    #[serde(default)]
    pub render_frames: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub expected: Vec<PlantedViolation>,
    pub plates: Vec<(u32, String)>,
}

#[derive(Debug)]
pub struct GeneratedScene {
    pub spec: ScenarioSpec,
    pub stream: FrameStream,
    pub quads: Vec<QuadAnnotation>,
    pub truth: GroundTruth,
    /// Rendered frames, present only when the spec asks for them.
    pub frames: Vec<(u64, RgbImage)>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.fps <= 0.0 {
            return Err(invalid("fps", "must be positive"));
        }
        if self.frame_dims.0 == 0 || self.frame_dims.1 == 0 {
            return Err(invalid("frame_dims", "must be positive"));
        }
        if self.duration_frames == 0 {
            return Err(invalid("duration_frames", "must be positive"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for actor in &self.actors {
            if !ids.insert(actor.id) {
                return Err(invalid("actors", format!("duplicate actor id {}", actor.id)));
            }
            if actor.waypoints.is_empty() {
                return Err(invalid("actors", format!("actor {} has no waypoints", actor.id)));
            }
            let mut renderable = false;
            let mut last_frame = None;
            for wp in &actor.waypoints {
                if wp.w <= 0.0 || wp.h <= 0.0 {
                    return Err(invalid(
                        "actors",
                        format!("actor {} has a non-positive box", actor.id),
                    ));
                }
                if wp.frame >= self.duration_frames {
                    return Err(invalid(
                        "actors",
                        format!("actor {} waypoint frame {} beyond duration", actor.id, wp.frame),
                    ));
                }
                if let Some(last) = last_frame {
                    if wp.frame <= last {
                        return Err(invalid(
                            "actors",
                            format!("actor {} waypoints out of order", actor.id),
                        ));
                    }
                }
                last_frame = Some(wp.frame);
                let b = BBox::new(wp.cx - wp.w / 2.0, wp.cy - wp.h / 2.0, wp.w, wp.h);
                if validate_bbox(b, self.frame_dims).is_ok() {
                    renderable = true;
                }
            }
            if !renderable {
                return Err(invalid(
                    "actors",
                    format!("actor {} never intersects the frame", actor.id),
                ));
            }
            if let Some(text) = &actor.plate {
                if text.is_empty() || !text.chars().all(|c| font::ALPHABET.contains(c)) {
                    return Err(invalid(
                        "actors",
                        format!("actor {} plate `{text}` outside [A-Z0-9]", actor.id),
                    ));
                }
            }
        }
        for p in &self.planted {
            if !ids.contains(&p.actor_id) {
                return Err(invalid(
                    "planted",
                    format!("violation references unknown actor {}", p.actor_id),
                ));
            }
        }
        for entry in &self.light_script {
            if entry.from_frame > entry.to_frame {
                return Err(invalid("light_script", "from_frame after to_frame"));
            }
        }
        Ok(())
    }

    /// Scripted (noiseless) box of an actor at a frame, None outside its
    /// presence window.
    pub fn actor_bbox(&self, actor: &ActorSpec, frame: u64) -> Option<BBox> {
        let wps = &actor.waypoints;
        if frame < wps[0].frame || frame > wps[wps.len() - 1].frame {
            return None;
        }
        let seg = wps.windows(2).find(|w| frame <= w[1].frame);
        let (a, b) = match seg {
            Some(w) => (&w[0], &w[1]),
            None => (&wps[0], &wps[0]),
        };
        let t = if b.frame == a.frame {
            0.0
        } else {
            (frame - a.frame) as f64 / (b.frame - a.frame) as f64
        };
        let lerp = |x: f64, y: f64| x + (y - x) * t;
        let (cx, cy) = (lerp(a.cx, b.cx), lerp(a.cy, b.cy));
        let (w, h) = (lerp(a.w, b.w), lerp(a.h, b.h));
        Some(BBox::new(cx - w / 2.0, cy - h / 2.0, w, h))
    }

    pub fn light_color_at(&self, frame: u64) -> Option<LightColor> {
        self.light_script
            .iter()
            .find(|e| frame >= e.from_frame && frame <= e.to_frame)
            .map(|e| e.color)
    }

    pub fn timestamp_ms(&self, frame: u64) -> u64 {
        (frame as f64 * 1000.0 / self.fps).round() as u64
    }

    /// Noiseless trajectories keyed by actor id, the reference the
    /// self-check and evaluation run against.
    pub fn noiseless_trajectories(&self) -> Vec<Trajectory> {
        self.actors
            .iter()
            .map(|actor| {
                let points = (0..self.duration_frames)
                    .filter_map(|f| {
                        let b = self.actor_bbox(actor, f)?;
                        let clamped = validate_bbox(b, self.frame_dims).ok()?;
                        Some(TrackPoint {
                            frame_index: f,
                            timestamp_ms: self.timestamp_ms(f),
                            bbox: clamped,
                        })
                    })
                    .collect();
                Trajectory {
                    track_id: actor.id as u64,
                    label: actor.label,
                    points,
                }
            })
            .filter(|t| !t.points.is_empty())
            .collect()
    }
}

/// Plate geometry inside a vehicle box: centered horizontally in the lower
/// quarter, sized so the font grid keeps its cell aspect. Returns None when
/// the cell would be too small to render legibly.
pub fn plate_rect_in_vehicle(vehicle: &BBox, text_len: usize) -> Option<(f64, f64, f64, f64)> {
    let cells_w = (1 + 6 * text_len) as f64;
    let cells_h = (font::GLYPH_HEIGHT + 2) as f64;
    let plate_w = vehicle.w * 0.55;
    let cell = plate_w / cells_w;
    if cell < 2.0 {
        return None;
    }
    let plate_h = cell * cells_h;
    let x = vehicle.x + (vehicle.w - plate_w) / 2.0;
    let y = vehicle.y + vehicle.h * 0.72 - plate_h / 2.0;
    Some((x, y, plate_w, plate_h))
}

/// Order of random draws per candidate detection, which the dropout test
/// replays: center jitter x, center jitter y, width factor, height factor,
/// dropout uniform.
pub fn generate_scene(spec: &ScenarioSpec) -> Result<GeneratedScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center = Normal::new(0.0, spec.noise.center_jitter_px.max(1e-12)).unwrap();
    let size = Normal::new(1.0, spec.noise.size_jitter_frac.max(1e-12)).unwrap();
    let uniform = Uniform::new(0.0f64, 1.0).unwrap();

    let mut frames_out: Vec<Frame> = Vec::new();
    let mut quads = Vec::new();
    let mut images = Vec::new();

    for f in 0..spec.duration_frames {
        let ts = spec.timestamp_ms(f);
        let mut detections = Vec::new();
        for actor in &spec.actors {
            let Some(true_box) = spec.actor_bbox(actor, f) else {
                continue;
            };
            let jx = center.sample(&mut rng);
            let jy = center.sample(&mut rng);
            let sw = size.sample(&mut rng).max(0.2);
            let sh = size.sample(&mut rng).max(0.2);
            let drop = uniform.sample(&mut rng);
            if drop < spec.noise.dropout {
                continue;
            }
            let (cx, cy) = true_box.center();
            let w = true_box.w * sw;
            let h = true_box.h * sh;
            let noisy = BBox::new(cx + jx - w / 2.0, cy + jy - h / 2.0, w, h);
            let Ok(clamped) = validate_bbox(noisy, spec.frame_dims) else {
                continue;
            };
            detections.push(Detection {
                frame_index: f,
                timestamp_ms: ts,
                label: actor.label,
                bbox: clamped,
                confidence: 0.9,
            });
            if let Some(text) = &actor.plate {
                if let Some((px, py, pw, ph)) = plate_rect_in_vehicle(&true_box, text.len()) {
                    quads.push(QuadAnnotation {
                        frame_index: f,
                        source_id: actor.id as u64,
                        quad: Quad::from_rect(px, py, pw, ph),
                    });
                }
            }
        }
        if !detections.is_empty() {
            frames_out.push(Frame {
                frame_index: f,
                detections,
            });
        }
        if spec.render_frames {
            images.push((f, render_frame(spec, f)));
        }
    }

    let stream = FrameStream {
        fps: spec.fps,
        frame_dims: spec.frame_dims,
        frames: frames_out,
    };
    let truth = GroundTruth {
        expected: spec.planted.clone(),
        plates: spec
            .actors
            .iter()
            .filter_map(|a| a.plate.clone().map(|p| (a.id, p)))
            .collect(),
    };
    Ok(GeneratedScene {
        spec: spec.clone(),
        stream,
        quads,
        truth,
        frames: images,
    })
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

const BACKGROUND: Rgb<u8> = Rgb([112, 112, 116]);
const VEHICLE_PALETTE: [[u8; 3]; 6] = [
    [72, 84, 158],
    [152, 64, 52],
    [64, 128, 72],
    [124, 118, 46],
    [94, 66, 122],
    [52, 112, 128],
];

fn fill_rect(img: &mut RgbImage, x: f64, y: f64, w: f64, h: f64, color: Rgb<u8>) {
    let x0 = x.round().max(0.0) as i64;
    let y0 = y.round().max(0.0) as i64;
    let x1 = ((x + w).round() as i64).min(img.width() as i64);
    let y1 = ((y + h).round() as i64).min(img.height() as i64);
    for yy in y0..y1 {
        for xx in x0..x1 {
            img.put_pixel(xx as u32, yy as u32, color);
        }
    }
}

/// Draws `text` onto the plate rectangle with the built-in font: one cell of
/// margin, five cells per glyph, one cell of spacing.
fn draw_plate(img: &mut RgbImage, x: f64, y: f64, w: f64, text: &str) {
    let cells_w = (1 + 6 * text.len()) as f64;
    let cell = w / cells_w;
    let h = cell * (font::GLYPH_HEIGHT + 2) as f64;
    fill_rect(img, x, y, w, h, Rgb([232, 232, 228]));
    let ink = Rgb([24, 24, 28]);
    for (i, c) in text.chars().enumerate() {
        let Some(mask) = font::glyph_mask(c) else { continue };
        let gx = x + cell * (1 + 6 * i) as f64;
        let gy = y + cell;
        for (cy, row) in mask.iter().enumerate() {
            for (cx, &on) in row.iter().enumerate() {
                if on {
                    fill_rect(
                        img,
                        gx + cx as f64 * cell,
                        gy + cy as f64 * cell,
                        cell,
                        cell,
                        ink,
                    );
                }
            }
        }
    }
}

/// Standalone plate image at integer cell scale, plus the tight pixel box of
/// each glyph (the segmentation ground truth).
pub fn render_plate(text: &str, cell: u32) -> (RgbImage, Vec<(u32, u32, u32, u32)>) {
    let cells_w = (1 + 6 * text.len()) as u32;
    let cells_h = (font::GLYPH_HEIGHT + 2) as u32;
    let mut img = RgbImage::from_pixel(cells_w * cell, cells_h * cell, Rgb([232, 232, 228]));
    draw_plate(
        &mut img,
        0.0,
        0.0,
        (cells_w * cell) as f64,
        text,
    );
    let mut boxes = Vec::new();
    for (i, c) in text.chars().enumerate() {
        let Some(mask) = font::glyph_mask(c) else { continue };
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
        let gx = cell * (1 + 6 * i as u32);
        let gy = cell;
        boxes.push((
            gx + min_x as u32 * cell,
            gy,
            (max_x - min_x + 1) as u32 * cell,
            font::GLYPH_HEIGHT as u32 * cell,
        ));
    }
    (img, boxes)
}

fn render_frame(spec: &ScenarioSpec, frame: u64) -> RgbImage {
    let mut img = RgbImage::from_pixel(spec.frame_dims.0, spec.frame_dims.1, BACKGROUND);
    for actor in &spec.actors {
        let Some(b) = spec.actor_bbox(actor, frame) else {
            continue;
        };
        match actor.label {
            ClassLabel::TrafficLight => {
                render_traffic_light(&mut img, &b, spec.light_color_at(frame));
            }
            ClassLabel::Person => fill_rect(&mut img, b.x, b.y, b.w, b.h, Rgb([182, 142, 104])),
            ClassLabel::NoStoppingSign => {
                fill_rect(&mut img, b.x, b.y, b.w, b.h, Rgb([46, 64, 172]));
                // red band across the middle
                fill_rect(&mut img, b.x, b.y + b.h * 0.4, b.w, b.h * 0.2, Rgb([190, 40, 44]));
            }
            ClassLabel::CrosswalkSign => {
                fill_rect(&mut img, b.x, b.y, b.w, b.h, Rgb([38, 92, 168]));
                fill_rect(&mut img, b.x + b.w * 0.25, b.y + b.h * 0.55, b.w * 0.5, b.h * 0.3, Rgb([225, 225, 225]));
            }
            label if label.is_vehicle() => {
                let color = VEHICLE_PALETTE[actor.id as usize % VEHICLE_PALETTE.len()];
                fill_rect(&mut img, b.x, b.y, b.w, b.h, Rgb(color));
                // windshield band
                fill_rect(&mut img, b.x + b.w * 0.1, b.y + b.h * 0.12, b.w * 0.8, b.h * 0.2, Rgb([60, 66, 72]));
                if let Some(text) = &actor.plate {
                    if let Some((px, py, pw, _)) = plate_rect_in_vehicle(&b, text.len()) {
                        draw_plate(&mut img, px, py, pw, text);
                    }
                }
            }
            _ => fill_rect(&mut img, b.x, b.y, b.w, b.h, Rgb([140, 140, 140])),
        }
    }
    img
}

fn render_traffic_light(img: &mut RgbImage, b: &BBox, color: Option<LightColor>) {
    fill_rect(img, b.x, b.y, b.w, b.h, Rgb([45, 45, 45]));
    let vertical = b.h >= b.w;
    let lamp_off = Rgb([28, 28, 28]);
    let lamps = [
        (LightColor::Red, Rgb([235, 45, 35])),
        (LightColor::Yellow, Rgb([245, 210, 50])),
        (LightColor::Green, Rgb([45, 215, 70])),
    ];
    for (i, (lamp_color, lit)) in lamps.iter().enumerate() {
        let (lx, ly, lw, lh) = if vertical {
            let third = b.h / 3.0;
            (b.x + 2.0, b.y + third * i as f64 + 2.0, b.w - 4.0, third - 4.0)
        } else {
            let third = b.w / 3.0;
            (b.x + third * i as f64 + 2.0, b.y + 2.0, third - 4.0, b.h - 4.0)
        };
        let fill = if color == Some(*lamp_color) { *lit } else { lamp_off };
        fill_rect(img, lx, ly, lw.max(1.0), lh.max(1.0), fill);
    }
}

// ---------------------------------------------------------------------------
// self-check and evaluation
// ---------------------------------------------------------------------------

/// Violation config with every trigger threshold tightened by the margin
/// factor: a scripted violation that still fires under the tightened config
/// clears its trigger with at least that margin.
fn tightened(cfg: &ViolationConfig, margin: f64) -> ViolationConfig {
    let mut c = cfg.clone();
    c.shrink_frac *= margin;
    c.avg_mult *= margin;
    c.slow_traffic_cap /= margin;
    c.follow_threshold_secs /= margin;
    c.wait_frames = (c.wait_frames as f64 * margin).ceil() as u32;
    c.stop_eps *= margin;
    c.park_frames = (c.park_frames as f64 * margin).ceil() as u32;
    c
}

/// Checks that every planted violation's scripted (noiseless) kinematics
/// fires its detector with a 20% margin on the trigger thresholds, and that
/// a scene without planted violations fires nothing at the defaults.
pub fn self_check(spec: &ScenarioSpec, cfg: &ViolationConfig) -> Result<(), SynthError> {
    let trajs = spec.noiseless_trajectories();
    let timeline: Vec<(u64, LightColor)> = (0..spec.duration_frames)
        .filter_map(|f| spec.light_color_at(f).map(|c| (f, c)))
        .collect();
    let ctx = violations::SceneContext {
        trajectories: &trajs,
        light_timeline: if timeline.is_empty() {
            None
        } else {
            Some(&timeline)
        },
        frame_dims: spec.frame_dims,
    };

    if spec.planted.is_empty() {
        let fired = violations::run_rules(&ctx, &ViolationKind::ALL, cfg);
        if let Some(ev) = fired.first() {
            return Err(SynthError::MarginCheck {
                kind: ev.kind,
                actor_id: ev.track_id as u32,
                msg: "control scene fires at default thresholds".to_string(),
            });
        }
        return Ok(());
    }

    let strict = tightened(cfg, 1.2);
    let fired = violations::run_rules(&ctx, &ViolationKind::ALL, &strict);
    for planted in &spec.planted {
        let hit = fired
            .iter()
            .any(|e| e.kind == planted.kind && e.track_id == planted.actor_id as u64);
        if !hit {
            return Err(SynthError::MarginCheck {
                kind: planted.kind,
                actor_id: planted.actor_id,
                msg: "does not fire with 20% tightened thresholds".to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEvaluation {
    pub matched: Vec<(ViolationKind, u32)>,
    pub missed: Vec<(ViolationKind, u32)>,
    pub unexpected: Vec<ViolationEvent>,
}

impl SceneEvaluation {
    pub fn clean(&self) -> bool {
        self.missed.is_empty() && self.unexpected.is_empty()
    }
}

/// Matches detected events against the planted ground truth: an event
/// matches a planted violation when kinds agree and the event track's box
/// overlaps the scripted actor's box (IoU >= 0.3) at the event midpoint.
pub fn evaluate_scene(
    spec: &ScenarioSpec,
    trajectories: &[Trajectory],
    events: &[ViolationEvent],
) -> SceneEvaluation {
    let mut matched = Vec::new();
    let mut missed = Vec::new();
    let mut used = vec![false; events.len()];

    for planted in &spec.planted {
        let actor = spec
            .actors
            .iter()
            .find(|a| a.id == planted.actor_id)
            .expect("validated actor id");
        let mut hit = None;
        for (i, ev) in events.iter().enumerate() {
            if used[i] || ev.kind != planted.kind {
                continue;
            }
            let traj = trajectories.iter().find(|t| t.track_id == ev.track_id);
            let Some(traj) = traj else { continue };
            let probes = [
                (ev.frame_range.0 + ev.frame_range.1) / 2,
                ev.frame_range.0,
                ev.frame_range.1,
            ];
            let overlaps = probes.iter().any(|&f| {
                let track_box = traj
                    .points
                    .iter()
                    .find(|p| p.frame_index == f)
                    .map(|p| p.bbox);
                let actor_box = spec
                    .actor_bbox(actor, f)
                    .and_then(|b| validate_bbox(b, spec.frame_dims).ok());
                match (track_box, actor_box) {
                    (Some(a), Some(b)) => ingest::iou(&a, &b) >= 0.3,
                    _ => false,
                }
            });
            if overlaps {
                hit = Some(i);
                break;
            }
        }
        match hit {
            Some(i) => {
                used[i] = true;
                matched.push((planted.kind, planted.actor_id));
            }
            None => missed.push((planted.kind, planted.actor_id)),
        }
    }
    let unexpected = events
        .iter()
        .enumerate()
        .filter(|(i, _)| !used[*i])
        .map(|(_, e)| e.clone())
        .collect();
    SceneEvaluation {
        matched,
        missed,
        unexpected,
    }
}

// ---------------------------------------------------------------------------
// scene directories
// ---------------------------------------------------------------------------

/// Scene directory metadata, `meta.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub duration_frames: u64,
}

/// Writes a generated scene as a directory: `meta.toml`, `spec.toml`,
/// `detections.tsv`, `truth.tsv`, `plates.tsv`, optional `quads.tsv` and
/// `frames/frame_%06d.png`.
pub fn write_scene(scene: &GeneratedScene, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let spec = &scene.spec;
    let meta = SceneMeta {
        scene_id: spec.scene_id.clone(),
        fps: spec.fps,
        width: spec.frame_dims.0,
        height: spec.frame_dims.1,
        duration_frames: spec.duration_frames,
    };
    std::fs::write(
        dir.join("meta.toml"),
        toml::to_string(&meta).expect("meta serializes"),
    )?;
    std::fs::write(
        dir.join("spec.toml"),
        toml::to_string(spec).expect("spec serializes"),
    )?;
    std::fs::write(
        dir.join("detections.tsv"),
        ingest::serialize_detection_stream(&scene.stream),
    )?;

    let mut truth = String::new();
    for p in &scene.truth.expected {
        truth.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.kind, p.actor_id, p.frame_range.0, p.frame_range.1
        ));
    }
    std::fs::write(dir.join("truth.tsv"), truth)?;

    let mut plates = String::new();
    for (id, text) in &scene.truth.plates {
        plates.push_str(&format!("{id}\t{text}\n"));
    }
    std::fs::write(dir.join("plates.tsv"), plates)?;

    if !scene.quads.is_empty() {
        std::fs::write(
            dir.join("quads.tsv"),
            crate::plate::serialize_quad_file(&scene.quads),
        )?;
    }
    if !scene.frames.is_empty() {
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir)?;
        for (f, img) in &scene.frames {
            let path = frames_dir.join(frame_image_name(*f));
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let encoder = image::codecs::png::PngEncoder::new(&mut file);
            image::ImageEncoder::write_image(
                encoder,
                img.as_raw(),
                img.width(),
                img.height(),
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| std::io::Error::other(e.to_string()))?;
            file.flush()?;
        }
    }
    Ok(())
}

/// Reads a `truth.tsv` back (used by evaluation tooling and tests).
pub fn read_truth(path: &Path) -> Result<Vec<PlantedViolation>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || invalid("truth", format!("line {}", i + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        out.push(PlantedViolation {
            kind: ViolationKind::parse(fields[0]).ok_or_else(bad)?,
            actor_id: fields[1].parse().map_err(|_| bad())?,
            frame_range: (
                fields[2].parse().map_err(|_| bad())?,
                fields[3].parse().map_err(|_| bad())?,
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_spec() -> ScenarioSpec {
        ScenarioSpec {
            scene_id: "tiny".to_string(),
            seed: 7,
            fps: 10.0,
            frame_dims: (320, 200),
            duration_frames: 40,
            actors: vec![
                ActorSpec {
                    id: 1,
                    label: ClassLabel::Car,
                    waypoints: vec![
                        Waypoint { frame: 0, cx: 60.0, cy: 100.0, w: 40.0, h: 28.0 },
                        Waypoint { frame: 39, cx: 240.0, cy: 100.0, w: 40.0, h: 28.0 },
                    ],
                    plate: None,
                },
                ActorSpec {
                    id: 2,
                    label: ClassLabel::Person,
                    waypoints: vec![
                        Waypoint { frame: 0, cx: 160.0, cy: 60.0, w: 12.0, h: 30.0 },
                        Waypoint { frame: 39, cx: 160.0, cy: 60.0, w: 12.0, h: 30.0 },
                    ],
                    plate: None,
                },
                ActorSpec {
                    id: 3,
                    label: ClassLabel::Bus,
                    waypoints: vec![
                        Waypoint { frame: 0, cx: 260.0, cy: 150.0, w: 50.0, h: 36.0 },
                        Waypoint { frame: 39, cx: 260.0, cy: 150.0, w: 50.0, h: 36.0 },
                    ],
                    plate: None,
                },
            ],
            planted: Vec::new(),
            light_script: Vec::new(),
            noise: NoiseConfig::default(),
            render_frames: false,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = tiny_spec();
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(
            ingest::serialize_detection_stream(&a.stream),
            ingest::serialize_detection_stream(&b.stream)
        );
    }

    #[test]
    fn no_noise_yields_actor_times_duration_detections() {
        let mut spec = tiny_spec();
        spec.noise = NoiseConfig {
            center_jitter_px: 0.0,
            size_jitter_frac: 0.0,
            dropout: 0.0,
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.stream.detection_count(), 3 * 40);
    }

    #[test]
    fn dropout_removes_the_seeded_subset() {
        let mut spec = tiny_spec();
        spec.duration_frames = 334; // 3 actors -> 1002 candidate detections
        for a in &mut spec.actors {
            a.waypoints.last_mut().unwrap().frame = 333;
        }
        spec.noise = NoiseConfig {
            center_jitter_px: 1.0,
            size_jitter_frac: 0.02,
            dropout: 0.1,
        };
        let scene = generate_scene(&spec).unwrap();

        // oracle: replay the documented draw order against the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut expected = 0usize;
        let mut candidates = 0usize;
        for f in 0..spec.duration_frames {
            for actor in &spec.actors {
                if spec.actor_bbox(actor, f).is_none() {
                    continue;
                }
                candidates += 1;
                let _jx: f64 = rng.sample(rand_distr::StandardNormal);
                let _jy: f64 = rng.sample(rand_distr::StandardNormal);
                let _sw: f64 = rng.sample(rand_distr::StandardNormal);
                let _sh: f64 = rng.sample(rand_distr::StandardNormal);
                let u: f64 = rng.random_range(0.0..1.0);
                if u >= 0.1 {
                    expected += 1;
                }
            }
        }
        assert_eq!(candidates, 1002);
        assert_eq!(scene.stream.detection_count(), expected);
    }

    #[test]
    fn invalid_spec_names_offending_field() {
        let mut spec = tiny_spec();
        spec.planted.push(PlantedViolation {
            kind: ViolationKind::RedLight,
            actor_id: 99,
            frame_range: (0, 10),
        });
        let err = generate_scene(&spec).unwrap_err();
        assert!(matches!(err, SynthError::Invalid { ref field, .. } if field == "planted"));
    }

    #[test]
    fn generated_stream_reparses() {
        let scene = generate_scene(&tiny_spec()).unwrap();
        let text = ingest::serialize_detection_stream(&scene.stream);
        let parsed =
            ingest::parse_detection_stream(text.as_bytes(), 10.0, (320, 200)).unwrap();
        assert_eq!(parsed, scene.stream);
    }

    #[test]
    fn render_plate_boxes_match_text_order() {
        let (img, boxes) = render_plate("AB12", 6);
        assert_eq!(boxes.len(), 4);
        assert!(img.width() > 0);
        for pair in boxes.windows(2) {
            assert!(pair[0].0 < pair[1].0, "glyph boxes out of order");
        }
    }
}
