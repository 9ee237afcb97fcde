//! Scene-level orchestration: load a scene directory, run the tracker,
//! classify lights, run the rule engines, read plates, and emit notices.
//! The CLI is a thin layer over this module.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::config::RunConfig;
use crate::ingest::{self, frame_image_name, ClassLabel, FrameStream};
use crate::light::{self, LightColor, LightObservation};
use crate::plate::{self, PlateReadout, QuadAnnotation};
use crate::report::{self, DeliveryReceipt, Notice, Outbox};
use crate::synth::SceneMeta;
use crate::tracker::{Tracker, TrackSnapshot, Trajectory};
use crate::violations::{self, SceneContext, ViolationEvent, ViolationKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Tracker(#[from] crate::tracker::TrackerError),
    #[error(transparent)]
    Plate(#[from] plate::PlateError),
    #[error(transparent)]
    Light(#[from] light::LightError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("rule {rule} needs frame images but the scene has none")]
    MissingFrames { rule: ViolationKind },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Stable CLI exit code: 2 input error, 3 missing dependency, 4 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingFrames { .. } => 3,
            PipelineError::Meta(_) | PipelineError::Ingest(_) | PipelineError::Plate(_) => 2,
            PipelineError::Io(_) => 2,
            _ => 4,
        }
    }
}

/// A loaded scene directory: metadata, detections, optional quads and frames.
pub struct SceneInput {
    pub dir: PathBuf,
    pub meta: SceneMeta,
    pub stream: FrameStream,
    pub quads: Vec<QuadAnnotation>,
    pub frames_dir: Option<PathBuf>,
}

/// Reads `meta.toml`, `detections.tsv`, and the optional `quads.tsv` and
/// `frames/` entries of a scene directory.
pub fn load_scene(dir: &Path) -> Result<SceneInput, PipelineError> {
    let meta_text = std::fs::read_to_string(dir.join("meta.toml"))
        .map_err(|e| PipelineError::Meta(format!("{}: {e}", dir.display())))?;
    let meta: SceneMeta =
        toml::from_str(&meta_text).map_err(|e| PipelineError::Meta(e.to_string()))?;
    let detections = std::fs::File::open(dir.join("detections.tsv"))?;
    let stream = ingest::parse_detection_stream(
        BufReader::new(detections),
        meta.fps,
        (meta.width, meta.height),
    )?;
    let quads_path = dir.join("quads.tsv");
    let quads = if quads_path.exists() {
        plate::parse_quad_file(BufReader::new(std::fs::File::open(quads_path)?))?
    } else {
        Vec::new()
    };
    let frames_dir = dir.join("frames");
    let frames_dir = frames_dir.is_dir().then_some(frames_dir);
    Ok(SceneInput {
        dir: dir.to_path_buf(),
        meta,
        stream,
        quads,
        frames_dir,
    })
}

/// Runs the tracker over a stream; returns per-frame confirmed snapshots and
/// the measured trajectories of every track that ever confirmed.
pub fn run_tracker(
    stream: &FrameStream,
    cfg: &RunConfig,
) -> Result<(Vec<TrackSnapshot>, Vec<Trajectory>), PipelineError> {
    let mut tracker = Tracker::new(cfg.tracker.clone());
    let mut snapshots = Vec::new();
    for frame in &stream.frames {
        snapshots.extend(tracker.step(
            frame.frame_index,
            frame.timestamp_ms(),
            &frame.detections,
        )?);
    }
    Ok((snapshots, tracker.trajectories()))
}

/// Track output: `frame_index, track_id, label, x, y, w, h, status`.
pub fn write_tracks(path: &Path, snapshots: &[TrackSnapshot]) -> std::io::Result<()> {
    let mut out = String::new();
    for s in snapshots {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            s.frame_index,
            s.track_id,
            s.label,
            s.bbox.x,
            s.bbox.y,
            s.bbox.w,
            s.bbox.h,
            s.status.as_token()
        ));
    }
    std::fs::write(path, out)
}

/// Event output: `kind, track_id, start_frame, end_frame, score`.
pub fn write_events(path: &Path, events: &[ViolationEvent]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in events {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\n",
            e.kind, e.track_id, e.frame_range.0, e.frame_range.1, e.score
        ));
    }
    std::fs::write(path, out)
}

pub fn read_events(path: &Path) -> Result<Vec<ViolationEvent>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || PipelineError::Meta(format!("events line {}", i + 1));
        if fields.len() != 5 {
            return Err(bad());
        }
        let start = fields[2].parse().map_err(|_| bad())?;
        let end = fields[3].parse().map_err(|_| bad())?;
        out.push(ViolationEvent {
            kind: ViolationKind::parse(fields[0]).ok_or_else(bad)?,
            track_id: fields[1].parse().map_err(|_| bad())?,
            frame_range: (start, end),
            evidence: vec![start, (start + end) / 2, end],
            score: fields[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn load_frame(frames_dir: &Path, frame: u64) -> Option<RgbImage> {
    image::open(frames_dir.join(frame_image_name(frame)))
        .ok()
        .map(|i| i.to_rgb8())
}

/// Classifies every traffic-light detection frame by frame and folds the
/// observations through the temporal vote.
pub fn build_light_timeline(
    stream: &FrameStream,
    frames_dir: &Path,
    cfg: &RunConfig,
) -> Result<Vec<(u64, LightColor)>, PipelineError> {
    let mut observations: Vec<LightObservation> = Vec::new();
    for frame in &stream.frames {
        // largest light in frame wins when several are detected
        let light_det = frame
            .detections
            .iter()
            .filter(|d| d.label == ClassLabel::TrafficLight)
            .max_by(|a, b| a.bbox.area().total_cmp(&b.bbox.area()));
        let Some(det) = light_det else { continue };
        let Some(img) = load_frame(frames_dir, frame.frame_index) else {
            continue;
        };
        let x = det.bbox.x.round().max(0.0) as u32;
        let y = det.bbox.y.round().max(0.0) as u32;
        let w = (det.bbox.w.round() as u32).max(1).min(img.width().saturating_sub(x));
        let h = (det.bbox.h.round() as u32).max(1).min(img.height().saturating_sub(y));
        if w == 0 || h == 0 {
            continue;
        }
        let crop = image::imageops::crop_imm(&img, x, y, w, h).to_image();
        let orientation = light::orientation(&det.bbox);
        match light::classify_light_frame(frame.frame_index, &crop, orientation, &cfg.light) {
            Ok(obs) => observations.push(obs),
            Err(_) => continue, // degenerate crop: skip the frame
        }
    }
    Ok(light::vote_timeline(&observations, &cfg.light))
}

/// Best plate readout for an event: every quad annotation inside the event's
/// frame range that lands within the track's box is rectified, segmented,
/// and recognized; the highest-confidence readout wins.
fn best_readout(
    event: &ViolationEvent,
    trajectory: Option<&Trajectory>,
    quads: &[QuadAnnotation],
    frames_dir: Option<&Path>,
    cfg: &RunConfig,
) -> Option<(PlateReadout, RgbImage)> {
    let frames_dir = frames_dir?;
    let trajectory = trajectory?;
    let atlas = plate::TemplateAtlas::builtin();
    let mut best: Option<(PlateReadout, RgbImage)> = None;
    let mut frame_cache: BTreeMap<u64, Option<RgbImage>> = BTreeMap::new();
    for ann in quads {
        if ann.frame_index < event.frame_range.0 || ann.frame_index > event.frame_range.1 {
            continue;
        }
        let Some(point) = trajectory
            .points
            .iter()
            .find(|p| p.frame_index == ann.frame_index)
        else {
            continue;
        };
        let (qx, qy) = ann.quad.corners[0];
        let (bx, by) = (point.bbox, point.bbox);
        let inside = qx >= bx.x && qx <= bx.right() && qy >= by.y && qy <= by.bottom();
        if !inside {
            continue;
        }
        let img = frame_cache
            .entry(ann.frame_index)
            .or_insert_with(|| load_frame(frames_dir, ann.frame_index));
        let Some(img) = img else { continue };
        let out_dims = plate::natural_out_dims(&ann.quad, cfg.plate_rectify_height);
        let Ok(rectified) = plate::rectify_plate(img, &ann.quad, out_dims) else {
            continue;
        };
        let crops = plate::segment_characters(&rectified, &cfg.segment);
        if crops.is_empty() {
            continue;
        }
        let readout = plate::recognize_characters(&crops, &atlas);
        let better = best
            .as_ref()
            .is_none_or(|(b, _)| readout.confidence() > b.confidence());
        if better {
            best = Some((readout, rectified));
        }
    }
    best
}

/// Everything one analyzed scene produced.
#[derive(Debug)]
pub struct AnalyzeOutcome {
    pub scene_id: String,
    pub events: Vec<ViolationEvent>,
    pub notices: Vec<Notice>,
    pub receipts: Vec<DeliveryReceipt>,
    pub trajectories: Vec<Trajectory>,
}

impl AnalyzeOutcome {
    pub fn rule_counts(&self) -> Vec<(ViolationKind, usize)> {
        ViolationKind::ALL
            .iter()
            .map(|&k| (k, self.events.iter().filter(|e| e.kind == k).count()))
            .collect()
    }
}

/// Analyzes one scene end to end and writes `tracks.tsv`, `events.tsv`, and
/// the notice outbox under `out_dir`. `created_at` is stamped into notices
/// verbatim so reruns can be compared byte for byte.
pub fn analyze_scene(
    input: &SceneInput,
    rules: &[ViolationKind],
    cfg: &RunConfig,
    out_dir: &Path,
    created_at: &str,
) -> Result<AnalyzeOutcome, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let (snapshots, trajectories) = run_tracker(&input.stream, cfg)?;
    write_tracks(&out_dir.join("tracks.tsv"), &snapshots)?;

    let has_lights = input
        .stream
        .frames
        .iter()
        .any(|f| f.detections.iter().any(|d| d.label == ClassLabel::TrafficLight));
    let mut timeline = None;
    if rules.contains(&ViolationKind::RedLight) && has_lights {
        match &input.frames_dir {
            Some(frames_dir) => {
                timeline = Some(build_light_timeline(&input.stream, frames_dir, cfg)?);
            }
            None => {
                return Err(PipelineError::MissingFrames {
                    rule: ViolationKind::RedLight,
                })
            }
        }
    }

    let ctx = SceneContext {
        trajectories: &trajectories,
        light_timeline: timeline.as_deref(),
        frame_dims: (input.meta.width, input.meta.height),
    };
    let events = violations::run_rules(&ctx, rules, &cfg.violations);
    write_events(&out_dir.join("events.tsv"), &events)?;

    let outbox = Outbox::create(out_dir.join("outbox"))?;
    let mut notices = Vec::new();
    let mut receipts = Vec::new();
    for event in &events {
        let trajectory = trajectories.iter().find(|t| t.track_id == event.track_id);
        let readout = best_readout(
            event,
            trajectory,
            &input.quads,
            input.frames_dir.as_deref(),
            cfg,
        );
        let notice = report::build_notice(
            event,
            readout.as_ref().map(|(r, _)| r),
            readout.as_ref().map(|(_, img)| img),
            &input.meta.scene_id,
            trajectory,
            input.frames_dir.as_deref(),
            outbox.dir(),
            created_at.to_string(),
        )?;
        receipts.push(outbox.emit(&notice, &cfg.report)?);
        notices.push(notice);
    }

    Ok(AnalyzeOutcome {
        scene_id: input.meta.scene_id.clone(),
        events,
        notices,
        receipts,
        trajectories,
    })
}
