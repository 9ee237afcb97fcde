//! Tracking-by-detection: Kalman prediction, per-class IoU association via
//! the Hungarian solver, and Tentative/Confirmed/Deleted track lifecycle.

pub mod assignment;
pub mod kalman;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{iou, BBox, ClassLabel, Detection};
use assignment::{solve, CostMatrix};
use kalman::{KalmanConfig, KalmanState};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame {frame_index} arrived out of order (last was {last})")]
    OutOfOrder { frame_index: u64, last: u64 },
    #[error(transparent)]
    Kalman(#[from] kalman::KalmanError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Associations with IoU below this are forbidden.
    pub iou_gate: f64,
    /// Matched updates required before a track is Confirmed.
    pub confirm_hits: u32,
    /// Consecutive misses beyond which a track is Deleted.
    pub max_age: u32,
    /// Blend weight: cost = lambda*(1-iou) + (1-lambda)*appearance.
    /// 1.0 means pure IoU; the appearance hook is only consulted below 1.0.
    pub appearance_lambda: f64,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_gate: 0.3,
            confirm_hits: 3,
            max_age: 30,
            appearance_lambda: 1.0,
            kalman: KalmanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

impl TrackStatus {
    pub fn as_token(&self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Deleted => "deleted",
        }
    }
}

/// One recorded position of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub bbox: BBox,
}

/// A persistent identity over frames.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub label: ClassLabel,
    pub state: KalmanState,
    pub status: TrackStatus,
    /// Total matched updates.
    pub hits: u32,
    /// Consecutive unmatched frames.
    pub misses: u32,
    /// State-estimated box per frame the track was alive, strictly
    /// increasing frame indices.
    pub history: Vec<TrackPoint>,
}

impl Track {
    /// History with any trailing coasted (unmatched) points removed, so
    /// consumers see measured motion, not extrapolation.
    pub fn measured_history(&self) -> &[TrackPoint] {
        let trim = (self.misses as usize).min(self.history.len());
        &self.history[..self.history.len() - trim]
    }
}

/// Result of associating tracks with one frame of detections. Indices refer
/// to the input slices; each index appears at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimum-cost assignment over an explicit cost matrix. Pairs whose cost
/// reaches [`FORBIDDEN_COST`] are reported unmatched.
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let m = solve(cost);
    Assignment {
        matches: m.pairs,
        unmatched_tracks: m.unmatched_rows,
        unmatched_detections: m.unmatched_cols,
    }
}

/// Optional appearance term blended into the association cost.
pub type AppearanceCost = dyn Fn(&Track, &Detection) -> f64 + Send + Sync;

/// Associates detections to tracks class by class: only same-label pairs are
/// candidates, cost is `lambda*(1-iou) + (1-lambda)*appearance`, and pairs
/// with IoU below `iou_gate` are forced unmatched.
pub fn associate(
    tracks: &[Track],
    detections: &[Detection],
    iou_gate: f64,
    lambda: f64,
    appearance: Option<&AppearanceCost>,
) -> Assignment {
    let mut matches = Vec::new();
    let mut matched_tracks = vec![false; tracks.len()];
    let mut matched_dets = vec![false; detections.len()];

    for label in ClassLabel::ALL {
        let t_idx: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].label == label).collect();
        let d_idx: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].label == label)
            .collect();
        if t_idx.is_empty() || d_idx.is_empty() {
            continue;
        }
        let mut cost = CostMatrix::forbidden(t_idx.len(), d_idx.len());
        for (r, &ti) in t_idx.iter().enumerate() {
            let predicted = tracks[ti].state.bbox();
            for (c, &di) in d_idx.iter().enumerate() {
                let overlap = iou(&predicted, &detections[di].bbox);
                if overlap < iou_gate {
                    continue;
                }
                let mut v = lambda * (1.0 - overlap);
                if lambda < 1.0 {
                    if let Some(app) = appearance {
                        v += (1.0 - lambda) * app(&tracks[ti], &detections[di]);
                    }
                }
                cost.set(r, c, v);
            }
        }
        let solved = solve(&cost);
        for (r, c) in solved.pairs {
            matches.push((t_idx[r], d_idx[c]));
            matched_tracks[t_idx[r]] = true;
            matched_dets[d_idx[c]] = true;
        }
    }
    matches.sort_unstable();
    Assignment {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !matched_tracks[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&i| !matched_dets[i]).collect(),
    }
}

/// Immutable view of a confirmed track at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub frame_index: u64,
    pub track_id: u64,
    pub label: ClassLabel,
    pub bbox: BBox,
    pub status: TrackStatus,
}

/// A completed track's measured path, the unit the rule engines consume.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub track_id: u64,
    pub label: ClassLabel,
    pub points: Vec<TrackPoint>,
}

pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    retired: Vec<Track>,
    next_id: u64,
    last_frame: Option<(u64, u64)>,
    appearance: Option<Box<AppearanceCost>>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            tracks: Vec::new(),
            retired: Vec::new(),
            next_id: 1,
            last_frame: None,
            appearance: None,
        }
    }

    pub fn with_appearance_cost(mut self, cost: Box<AppearanceCost>) -> Self {
        self.appearance = Some(cost);
        self
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances the tracker by one frame: predict, associate, update matched,
    /// age unmatched, spawn Tentative tracks, apply lifecycle transitions.
    /// Returns snapshots of Confirmed tracks only.
    pub fn step(
        &mut self,
        frame_index: u64,
        timestamp_ms: u64,
        detections: &[Detection],
    ) -> Result<Vec<TrackSnapshot>, TrackerError> {
        if let Some((last_fi, _)) = self.last_frame {
            if frame_index <= last_fi {
                return Err(TrackerError::OutOfOrder {
                    frame_index,
                    last: last_fi,
                });
            }
        }
        let dt = self
            .last_frame
            .map(|(_, ts)| ((timestamp_ms.saturating_sub(ts)) as f64 / 1000.0).max(1e-3));
        self.last_frame = Some((frame_index, timestamp_ms));

        if let Some(dt) = dt {
            for t in &mut self.tracks {
                t.state = kalman::predict(&t.state, dt, &self.cfg.kalman);
            }
        }

        let assignment = associate(
            &self.tracks,
            detections,
            self.cfg.iou_gate,
            self.cfg.appearance_lambda,
            self.appearance.as_deref(),
        );

        for &(ti, di) in &assignment.matches {
            let t = &mut self.tracks[ti];
            t.state = kalman::update(&t.state, &detections[di].bbox, &self.cfg.kalman)?;
            t.hits += 1;
            t.misses = 0;
            if t.status == TrackStatus::Tentative && t.hits >= self.cfg.confirm_hits {
                t.status = TrackStatus::Confirmed;
            }
        }
        for &ti in &assignment.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.misses += 1;
            if t.misses > self.cfg.max_age {
                t.status = TrackStatus::Deleted;
            }
        }
        for &di in &assignment.unmatched_detections {
            let d = &detections[di];
            let status = if self.cfg.confirm_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id: self.next_id,
                label: d.label,
                state: kalman::init(&d.bbox, &self.cfg.kalman),
                status,
                hits: 1,
                misses: 0,
                history: Vec::new(),
            });
            self.next_id += 1;
        }

        let mut snapshots = Vec::new();
        for t in &mut self.tracks {
            if t.status == TrackStatus::Deleted {
                continue;
            }
            t.history.push(TrackPoint {
                frame_index,
                timestamp_ms,
                bbox: t.state.bbox(),
            });
            if t.status == TrackStatus::Confirmed {
                snapshots.push(TrackSnapshot {
                    frame_index,
                    track_id: t.id,
                    label: t.label,
                    bbox: t.state.bbox(),
                    status: t.status,
                });
            }
        }
        let dead: Vec<Track> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Deleted)
            .cloned()
            .collect();
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);
        self.retired.extend(dead);

        snapshots.sort_by_key(|s| s.track_id);
        Ok(snapshots)
    }

    /// Measured paths of every track that ever confirmed, sorted by id.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        let mut out: Vec<Trajectory> = self
            .retired
            .iter()
            .chain(self.tracks.iter())
            .filter(|t| t.hits >= self.cfg.confirm_hits)
            .map(|t| Trajectory {
                track_id: t.id,
                label: t.label,
                points: t.measured_history().to_vec(),
            })
            .filter(|t| !t.points.is_empty())
            .collect();
        out.sort_by_key(|t| t.track_id);
        out
    }
}
