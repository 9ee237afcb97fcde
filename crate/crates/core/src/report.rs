//! Violation notices: assembly from events and plate readouts, evidence
//! crops, canonical JSON serialization, and delivery to an outbox directory
//! and an optional authority endpoint with retry bookkeeping.

use std::path::{Path, PathBuf};
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{frame_image_name, BBox};
use crate::plate::PlateReadout;
use crate::tracker::Trajectory;
use crate::violations::{ViolationEvent, ViolationKind};

/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "TVD_AUTHORITY_ENDPOINT";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt receipt {path}: {msg}")]
    CorruptReceipt { path: String, msg: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Authority webhook; `TVD_AUTHORITY_ENDPOINT` overrides this.
    pub endpoint: Option<String>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
    pub timeout_ms: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_factor: 2.0,
            timeout_ms: 2000,
        }
    }
}

impl ReportConfig {
    pub fn effective_endpoint(&self) -> Option<String> {
        std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()).or_else(|| self.endpoint.clone())
    }
}

/// The outbound report for one violation. Serialized field order is the wire
/// contract; `created_at` is injected by the caller and excluded from
/// determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notice {
    pub notice_id: String,
    pub kind: ViolationKind,
    pub scene_id: String,
    pub track_id: u64,
    pub frame_start: u64,
    pub frame_end: u64,
    pub plate_text: String,
    pub plate_confidence: f64,
    pub created_at: String,
    pub evidence_paths: Vec<String>,
    pub flags: Vec<String>,
}

/// Deterministic notice id: unique per run because events are deduplicated
/// per (kind, track) per scene.
pub fn notice_id(scene_id: &str, kind: ViolationKind, track_id: u64) -> String {
    format!("{scene_id}-{}-t{track_id:04}", kind.as_token())
}

fn crop_bbox(img: &RgbImage, bbox: &BBox) -> RgbImage {
    let x0 = bbox.x.max(0.0).round() as u32;
    let y0 = bbox.y.max(0.0).round() as u32;
    let x1 = (bbox.right().round() as u32).min(img.width());
    let y1 = (bbox.bottom().round() as u32).min(img.height());
    let w = x1.saturating_sub(x0).max(1);
    let h = y1.saturating_sub(y0).max(1);
    image::imageops::crop_imm(img, x0, y0, w, h).to_image()
}

fn save_png(img: &RgbImage, path: &Path) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let encoder = image::codecs::png::PngEncoder::new(&mut file);
    image::ImageEncoder::write_image(
        encoder,
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| std::io::Error::other(e.to_string()))?;
    std::io::Write::flush(&mut file)?;
    Ok(())
}

/// Builds a notice for one event: saves vehicle crops at the event's
/// evidence frames (plus the rectified plate when one was read) under
/// `outbox_dir/evidence/<notice_id>/` and fills the notice fields. Missing
/// frame images degrade to an evidence-less notice with a warning flag.
#[allow(clippy::too_many_arguments)]
pub fn build_notice(
    event: &ViolationEvent,
    readout: Option<&PlateReadout>,
    plate_crop: Option<&RgbImage>,
    scene_id: &str,
    trajectory: Option<&Trajectory>,
    frames_dir: Option<&Path>,
    outbox_dir: &Path,
    created_at: String,
) -> Result<Notice, ReportError> {
    let id = notice_id(scene_id, event.kind, event.track_id);
    let mut evidence_paths = Vec::new();
    let mut flags = Vec::new();

    let evidence_dir_rel = format!("evidence/{id}");
    let evidence_dir = outbox_dir.join(&evidence_dir_rel);

    let mut missing_frames = frames_dir.is_none();
    if let Some(frames_dir) = frames_dir {
        for &frame in &event.evidence {
            let frame_path = frames_dir.join(frame_image_name(frame));
            let bbox = trajectory.and_then(|t| {
                t.points
                    .iter()
                    .find(|p| p.frame_index == frame)
                    .map(|p| p.bbox)
            });
            let (Ok(img), Some(bbox)) = (image::open(&frame_path), bbox) else {
                missing_frames = true;
                continue;
            };
            std::fs::create_dir_all(&evidence_dir)?;
            let crop = crop_bbox(&img.to_rgb8(), &bbox);
            let rel = format!("{evidence_dir_rel}/{}", frame_image_name(frame));
            save_png(&crop, &outbox_dir.join(&rel))?;
            evidence_paths.push(rel);
        }
    }
    if let Some(plate) = plate_crop {
        std::fs::create_dir_all(&evidence_dir)?;
        let rel = format!("{evidence_dir_rel}/plate.png");
        save_png(plate, &outbox_dir.join(&rel))?;
        evidence_paths.push(rel);
    }
    if missing_frames {
        flags.push("missing_frames".to_string());
    }

    let plate_text = readout.map(|r| r.text.clone()).unwrap_or_default();
    let plate_confidence = readout.map(|r| r.confidence()).unwrap_or(0.0);
    if plate_text.is_empty() {
        flags.push("unidentified".to_string());
    }

    Ok(Notice {
        notice_id: id,
        kind: event.kind,
        scene_id: scene_id.to_string(),
        track_id: event.track_id,
        frame_start: event.frame_range.0,
        frame_end: event.frame_range.1,
        plate_text,
        plate_confidence,
        created_at,
        evidence_paths,
        flags,
    })
}

/// Canonical serialization: pretty JSON with fixed field order and a
/// trailing newline. Byte-stable for identical notices.
pub fn canonical_json(notice: &Notice) -> String {
    let mut s = serde_json::to_string_pretty(notice).expect("notice serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryState {
    /// Written to the outbox; no endpoint configured.
    Stored,
    /// Accepted by the endpoint (2xx).
    Delivered,
    /// Endpoint refused or unreachable; queued for retry.
    Queued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub notice_id: String,
    pub state: DeliveryState,
    pub attempts: u32,
    pub last_attempt_unix_ms: u64,
}

/// Directory of canonical notice files plus per-notice delivery receipts.
/// Emission is idempotent per notice id: files are written once and a
/// delivered notice is never posted twice.
pub struct Outbox {
    dir: PathBuf,
}

impl Outbox {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn notice_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("notice_{id}.json"))
    }

    fn receipt_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("notice_{id}.receipt.json"))
    }

    fn load_receipt(&self, id: &str) -> Result<Option<DeliveryReceipt>, ReportError> {
        let path = self.receipt_path(id);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| ReportError::CorruptReceipt {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
    }

    fn store_receipt(&self, receipt: &DeliveryReceipt) -> Result<(), ReportError> {
        let text = serde_json::to_string_pretty(receipt).expect("receipt serializes");
        std::fs::write(self.receipt_path(&receipt.notice_id), text)?;
        Ok(())
    }

    /// Writes the canonical notice (once) and attempts delivery when an
    /// endpoint is configured. Failed deliveries stay queued with retry
    /// metadata; already-delivered notices are not re-posted.
    pub fn emit(&self, notice: &Notice, cfg: &ReportConfig) -> Result<DeliveryReceipt, ReportError> {
        let id = &notice.notice_id;
        let path = self.notice_path(id);
        let payload = canonical_json(notice);
        if !path.exists() {
            std::fs::write(&path, &payload)?;
        }

        let mut receipt = self.load_receipt(id)?.unwrap_or(DeliveryReceipt {
            notice_id: id.clone(),
            state: DeliveryState::Stored,
            attempts: 0,
            last_attempt_unix_ms: 0,
        });
        if receipt.state == DeliveryState::Delivered {
            return Ok(receipt);
        }

        match cfg.effective_endpoint() {
            None => {
                receipt.state = DeliveryState::Stored;
            }
            Some(endpoint) => {
                receipt.attempts += 1;
                receipt.last_attempt_unix_ms = now_unix_ms();
                receipt.state = if post_json(&endpoint, &payload, cfg.timeout_ms) {
                    DeliveryState::Delivered
                } else {
                    DeliveryState::Queued
                };
            }
        }
        self.store_receipt(&receipt)?;
        Ok(receipt)
    }

    /// Re-attempts queued notices whose exponential backoff has elapsed and
    /// whose retry budget is not exhausted.
    pub fn retry_queued(&self, cfg: &ReportConfig) -> Result<Vec<DeliveryReceipt>, ReportError> {
        let Some(endpoint) = cfg.effective_endpoint() else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(".receipt.json"))
            })
            .collect();
        entries.sort();
        for path in entries {
            let text = std::fs::read_to_string(&path)?;
            let mut receipt: DeliveryReceipt =
                serde_json::from_str(&text).map_err(|e| ReportError::CorruptReceipt {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
            if receipt.state != DeliveryState::Queued || receipt.attempts > cfg.max_retries {
                continue;
            }
            let backoff = cfg.backoff_base_ms as f64
                * cfg.backoff_factor.powi(receipt.attempts.saturating_sub(1) as i32);
            if now_unix_ms() < receipt.last_attempt_unix_ms + backoff as u64 {
                continue;
            }
            let payload = std::fs::read_to_string(self.notice_path(&receipt.notice_id))?;
            receipt.attempts += 1;
            receipt.last_attempt_unix_ms = now_unix_ms();
            receipt.state = if post_json(&endpoint, &payload, cfg.timeout_ms) {
                DeliveryState::Delivered
            } else {
                DeliveryState::Queued
            };
            self.store_receipt(&receipt)?;
            out.push(receipt);
        }
        Ok(out)
    }
}

fn now_unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn post_json(endpoint: &str, payload: &str, timeout_ms: u64) -> bool {
    let config = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build();
    let agent: ureq::Agent = config.into();
    match agent
        .post(endpoint)
        .header("content-type", "application/json")
        .send(payload)
    {
        Ok(resp) => resp.status().is_success(),
        Err(_) => false,
    }
}
