//! The six traffic-rule engines. Each detector is a pure function of the
//! scene snapshot (trajectories, voted light states, frame geometry) and the
//! config, and emits at most one event per (kind, track).
//!
//! Speed is proxied by the relative bbox-area rate (dimensionless per
//! second): monocular footage admits no calibrated speed, and area growth or
//! shrinkage tracks approach and recession directly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ClassLabel;
use crate::light::LightColor;
use crate::tracker::{TrackPoint, Trajectory};

#[derive(Debug, Error)]
pub enum SpeedError {
    #[error("track {track_id} has fewer than 2 history points at frame {at}")]
    InsufficientHistory { track_id: u64, at: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    RedLight,
    BreakdownLane,
    FollowingDistance,
    PedestrianCrossing,
    IllegalParking,
    CrosswalkParking,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 6] = [
        ViolationKind::RedLight,
        ViolationKind::BreakdownLane,
        ViolationKind::FollowingDistance,
        ViolationKind::PedestrianCrossing,
        ViolationKind::IllegalParking,
        ViolationKind::CrosswalkParking,
    ];

    pub fn as_token(&self) -> &'static str {
        match self {
            ViolationKind::RedLight => "red_light",
            ViolationKind::BreakdownLane => "breakdown_lane",
            ViolationKind::FollowingDistance => "following_distance",
            ViolationKind::PedestrianCrossing => "pedestrian_crossing",
            ViolationKind::IllegalParking => "illegal_parking",
            ViolationKind::CrosswalkParking => "crosswalk_parking",
        }
    }

    /// Parses both snake_case and hyphenated rule names; the short form
    /// `breakdown` is accepted for the lane rule.
    pub fn parse(s: &str) -> Option<ViolationKind> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "red_light" => Some(ViolationKind::RedLight),
            "breakdown_lane" | "breakdown" => Some(ViolationKind::BreakdownLane),
            "following_distance" => Some(ViolationKind::FollowingDistance),
            "pedestrian_crossing" => Some(ViolationKind::PedestrianCrossing),
            "illegal_parking" => Some(ViolationKind::IllegalParking),
            "crosswalk_parking" => Some(ViolationKind::CrosswalkParking),
            _ => None,
        }
    }

    /// Rules that cannot run without frame images.
    pub fn needs_frames(&self) -> bool {
        matches!(self, ViolationKind::RedLight)
    }
}

impl std::fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_token())
    }
}

/// A detected infraction tied to one track.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationEvent {
    pub kind: ViolationKind,
    pub track_id: u64,
    pub frame_range: (u64, u64),
    pub evidence: Vec<u64>,
    pub score: f64,
}

/// EMA-smoothed relative area rate of one track at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEstimate {
    pub track_id: u64,
    pub frame_index: u64,
    pub area_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ViolationConfig {
    /// Red light: fractional area shrink that must accumulate...
    pub shrink_frac: f64,
    /// ...over this many consecutive frames while the light votes Red.
    pub k_pass: u32,
    /// Breakdown lane: outlier factor over the scene-mean |area rate|.
    pub avg_mult: f64,
    /// Breakdown lane only applies while traffic is slow (scene mean below).
    pub slow_traffic_cap: f64,
    /// Noise floor under the scene mean before multiplying by `avg_mult`,
    /// so jitter in an all-static scene cannot manufacture outliers.
    pub breakdown_rate_floor: f64,
    /// Consecutive outlier frames required before the event fires.
    pub breakdown_sustain_frames: u32,
    /// Minimum vehicles with defined speed per evaluated frame.
    pub min_scene_vehicles: usize,
    /// Following distance: edge margin (fraction of frame width) where a
    /// merging vehicle is considered to enter the scene.
    pub edge_margin_frac: f64,
    /// Following distance threshold in seconds (strictly below triggers).
    pub follow_threshold_secs: f64,
    /// Tracks first seen within this many frames of the scene start are
    /// pre-existing objects, not entrants.
    pub entry_grace_frames: u64,
    /// Entrant-to-lead gap below this fraction of the frame width is not a
    /// meaningful following situation (filters edge-clipped fragments).
    pub follow_min_gap_frac: f64,
    /// Pedestrian proximity radius around the crosswalk sign, in sign widths.
    pub proximity_r: f64,
    /// Frames a pedestrian must stay near the sign to count as waiting.
    pub wait_frames: u32,
    /// Vertical band around the sign a vehicle must traverse, in sign widths.
    pub crossing_band_r: f64,
    /// A vehicle counts as stopped when its |area rate| over a window of
    /// `stop_frames` stays below `stop_eps`.
    pub stop_eps: f64,
    pub stop_frames: u32,
    /// Parking: minimum displacement correlation with the sign, and the
    /// window it must hold over.
    pub static_corr: f64,
    pub park_frames: u32,
    /// Correlation is shift-invariant, so a slow creep past the sign would
    /// still correlate; the mean residual |mean(dv) - mean(ds)| must also
    /// stay below this many px/frame for the vehicle to count as static.
    pub parked_residual_eps: f64,
    /// Crosswalk parking proximity, in sign widths.
    pub crosswalk_r: f64,
    /// Ego motion is evident when the sign center travels at least this many
    /// sign widths over its track.
    pub ego_min_disp_sign_widths: f64,
    /// EMA window (points) for the area-rate speed proxy.
    pub speed_ema_window: usize,
}

impl Default for ViolationConfig {
    fn default() -> Self {
        Self {
            shrink_frac: 0.20,
            k_pass: 10,
            avg_mult: 2.0,
            slow_traffic_cap: 0.05,
            breakdown_rate_floor: 0.04,
            breakdown_sustain_frames: 10,
            min_scene_vehicles: 3,
            edge_margin_frac: 0.05,
            follow_threshold_secs: 3.0,
            entry_grace_frames: 5,
            follow_min_gap_frac: 0.15,
            proximity_r: 3.0,
            wait_frames: 10,
            crossing_band_r: 3.0,
            stop_eps: 0.01,
            stop_frames: 10,
            static_corr: 0.9,
            park_frames: 20,
            parked_residual_eps: 0.75,
            crosswalk_r: 4.0,
            ego_min_disp_sign_widths: 1.0,
            speed_ema_window: 10,
        }
    }
}

/// Immutable scene snapshot the detectors run over.
#[derive(Debug, Clone, Copy)]
pub struct SceneContext<'a> {
    pub trajectories: &'a [Trajectory],
    /// Voted light color per observation frame; None when no frames/lights.
    pub light_timeline: Option<&'a [(u64, LightColor)]>,
    pub frame_dims: (u32, u32),
}

// ---------------------------------------------------------------------------
// speed proxy
// ---------------------------------------------------------------------------

/// Per-point EMA of the instantaneous relative area rate, aligned to
/// `points[1..]`. The instantaneous rate between consecutive points is
/// ((A_i - A_prev) / A_prev) / dt; the EMA folds the last
/// `speed_ema_window` rates with alpha = 2/(window+1).
pub fn area_rate_series(traj: &Trajectory, cfg: &ViolationConfig) -> Vec<(u64, f64)> {
    let pts = &traj.points;
    if pts.len() < 2 {
        return Vec::new();
    }
    let mut rates = Vec::with_capacity(pts.len() - 1);
    for i in 1..pts.len() {
        let prev = &pts[i - 1];
        let cur = &pts[i];
        let dt = ((cur.timestamp_ms - prev.timestamp_ms) as f64 / 1000.0).max(1e-6);
        let a0 = prev.bbox.area().max(1e-9);
        rates.push((cur.frame_index, (cur.bbox.area() - a0) / a0 / dt));
    }
    let k = cfg.speed_ema_window.max(1);
    let alpha = 2.0 / (k as f64 + 1.0);
    let mut out = Vec::with_capacity(rates.len());
    for i in 0..rates.len() {
        let lo = (i + 1).saturating_sub(k);
        let window = &rates[lo..=i];
        let mut ema = window[0].1;
        for &(_, r) in &window[1..] {
            ema = alpha * r + (1.0 - alpha) * ema;
        }
        out.push((rates[i].0, ema));
    }
    out
}

/// Speed estimate at the latest point at or before `at`. Errors when fewer
/// than two history points exist by then.
pub fn estimate_speed(
    traj: &Trajectory,
    at: u64,
    cfg: &ViolationConfig,
) -> Result<SpeedEstimate, SpeedError> {
    let series = area_rate_series(traj, cfg);
    series
        .iter()
        .rev()
        .find(|&&(f, _)| f <= at)
        .map(|&(f, rate)| SpeedEstimate {
            track_id: traj.track_id,
            frame_index: f,
            area_rate: rate,
        })
        .ok_or(SpeedError::InsufficientHistory {
            track_id: traj.track_id,
            at,
        })
}

fn point_at(traj: &Trajectory, frame: u64) -> Option<&TrackPoint> {
    traj.points
        .binary_search_by_key(&frame, |p| p.frame_index)
        .ok()
        .map(|i| &traj.points[i])
}

fn vehicles<'a>(ctx: &SceneContext<'a>) -> impl Iterator<Item = &'a Trajectory> {
    ctx.trajectories.iter().filter(|t| t.label.is_vehicle())
}

fn with_label<'a>(
    ctx: &SceneContext<'a>,
    label: ClassLabel,
) -> impl Iterator<Item = &'a Trajectory> {
    ctx.trajectories.iter().filter(move |t| t.label == label)
}

// ---------------------------------------------------------------------------
// red light
// ---------------------------------------------------------------------------

/// A vehicle whose box area shrinks by `shrink_frac` over `k_pass`
/// consecutive frames while the voted light is Red has passed the light.
pub fn detect_red_light(ctx: &SceneContext, cfg: &ViolationConfig) -> Vec<ViolationEvent> {
    let Some(timeline) = ctx.light_timeline else {
        return Vec::new();
    };
    let mut events = Vec::new();
    let k = cfg.k_pass.max(2) as usize;
    for traj in vehicles(ctx) {
        let pts = &traj.points;
        if pts.len() < k {
            continue;
        }
        'windows: for start in 0..=pts.len() - k {
            let window = &pts[start..start + k];
            for p in window {
                if crate::light::voted_color_at(timeline, p.frame_index) != LightColor::Red {
                    continue 'windows;
                }
            }
            let a0 = window[0].bbox.area();
            let a1 = window[k - 1].bbox.area();
            let shrink = (a0 - a1) / a0.max(1e-9);
            if shrink >= cfg.shrink_frac {
                let f0 = window[0].frame_index;
                let f1 = window[k - 1].frame_index;
                events.push(ViolationEvent {
                    kind: ViolationKind::RedLight,
                    track_id: traj.track_id,
                    frame_range: (f0, f1),
                    evidence: vec![f0, (f0 + f1) / 2, f1],
                    score: shrink.min(1.0),
                });
                break;
            }
        }
    }
    events
}

// ---------------------------------------------------------------------------
// breakdown lane
// ---------------------------------------------------------------------------

/// The frame splits into three equal vertical bands. In slow traffic (scene
/// mean |area rate| below `slow_traffic_cap`), a vehicle in band 2 or 3 whose
/// |area rate| exceeds `avg_mult` times the scene mean for
/// `breakdown_sustain_frames` consecutive frames is using the breakdown lane.
pub fn detect_breakdown_lane(ctx: &SceneContext, cfg: &ViolationConfig) -> Vec<ViolationEvent> {
    let band_edge = ctx.frame_dims.0 as f64 / 3.0;
    let vehicle_trajs: Vec<&Trajectory> = vehicles(ctx).collect();
    let series: Vec<std::collections::BTreeMap<u64, f64>> = vehicle_trajs
        .iter()
        .map(|t| area_rate_series(t, cfg).into_iter().collect())
        .collect();

    let mut events = Vec::new();
    for (vi, traj) in vehicle_trajs.iter().enumerate() {
        let mut run: Vec<u64> = Vec::new();
        let mut best_over = 0.0f64;
        for (&f, &rate) in &series[vi] {
            let defined: Vec<f64> = series.iter().filter_map(|s| s.get(&f).copied()).collect();
            let mut flagged = false;
            if defined.len() >= cfg.min_scene_vehicles {
                let mean = defined.iter().map(|r| r.abs()).sum::<f64>() / defined.len() as f64;
                if mean < cfg.slow_traffic_cap {
                    let threshold = cfg.avg_mult * mean.max(cfg.breakdown_rate_floor);
                    if let Some(p) = point_at(traj, f) {
                        if p.bbox.center().0 >= band_edge && rate.abs() > threshold {
                            flagged = true;
                            best_over = best_over.max(rate.abs() / threshold);
                        }
                    }
                }
            }
            if flagged && run.last().is_none_or(|&last| f == last + 1) {
                run.push(f);
            } else if flagged {
                run = vec![f];
            } else {
                run.clear();
            }
            if run.len() >= cfg.breakdown_sustain_frames as usize {
                let f0 = run[0];
                let f1 = *run.last().unwrap();
                events.push(ViolationEvent {
                    kind: ViolationKind::BreakdownLane,
                    track_id: traj.track_id,
                    frame_range: (f0, f1),
                    evidence: vec![f0, (f0 + f1) / 2, f1],
                    score: (best_over / 2.0).min(1.0),
                });
                break;
            }
        }
    }
    events
}

// ---------------------------------------------------------------------------
// following distance
// ---------------------------------------------------------------------------

/// A vehicle entering from a side edge that reaches the x-position its
/// nearest lead held at entry time in under `follow_threshold_secs` violated
/// the following-distance rule.
pub fn detect_following_distance(
    ctx: &SceneContext,
    cfg: &ViolationConfig,
) -> Vec<ViolationEvent> {
    let width = ctx.frame_dims.0 as f64;
    let margin = cfg.edge_margin_frac * width;
    let vehicle_trajs: Vec<&Trajectory> = vehicles(ctx).collect();
    let scene_start = ctx
        .trajectories
        .iter()
        .filter_map(|t| t.points.first().map(|p| p.frame_index))
        .min()
        .unwrap_or(0);

    let mut events = Vec::new();
    for traj in &vehicle_trajs {
        let Some(p0) = traj.points.first() else { continue };
        if p0.frame_index <= scene_start + cfg.entry_grace_frames {
            continue; // pre-existing object, not an entrant
        }
        let (cx0, _) = p0.bbox.center();
        let dir = if cx0 <= margin {
            1.0
        } else if cx0 >= width - margin {
            -1.0
        } else {
            continue;
        };

        // nearest lead ahead of the entrant, measured at entry time
        let mut ref_x: Option<f64> = None;
        let mut best_gap = f64::INFINITY;
        for lead in &vehicle_trajs {
            if lead.track_id == traj.track_id {
                continue;
            }
            let lead_x = lead
                .points
                .iter()
                .rev()
                .find(|p| p.frame_index <= p0.frame_index && p.frame_index + 3 >= p0.frame_index)
                .map(|p| p.bbox.center().0);
            if let Some(lx) = lead_x {
                let gap = dir * (lx - cx0);
                if gap >= cfg.follow_min_gap_frac * width && gap < best_gap {
                    best_gap = gap;
                    ref_x = Some(lx);
                }
            }
        }
        let Some(ref_x) = ref_x else { continue };

        for p in &traj.points[1..] {
            if dir * (p.bbox.center().0 - ref_x) >= 0.0 {
                let t_arrive = (p.timestamp_ms - p0.timestamp_ms) as f64 / 1000.0;
                if t_arrive < cfg.follow_threshold_secs {
                    events.push(ViolationEvent {
                        kind: ViolationKind::FollowingDistance,
                        track_id: traj.track_id,
                        frame_range: (p0.frame_index, p.frame_index),
                        evidence: vec![
                            p0.frame_index,
                            (p0.frame_index + p.frame_index) / 2,
                            p.frame_index,
                        ],
                        score: (1.0 - t_arrive / cfg.follow_threshold_secs).clamp(0.0, 1.0),
                    });
                }
                break;
            }
        }
    }
    events
}

// ---------------------------------------------------------------------------
// pedestrian crossing
// ---------------------------------------------------------------------------

/// Frames on which a pedestrian has been near the sign for at least
/// `wait_frames` consecutive frames.
fn pedestrian_waiting_frames(
    ctx: &SceneContext,
    sign: &Trajectory,
    cfg: &ViolationConfig,
) -> BTreeSet<u64> {
    let mut near: Vec<u64> = Vec::new();
    for sp in &sign.points {
        let (scx, scy) = sp.bbox.center();
        let radius = cfg.proximity_r * sp.bbox.w;
        for ped in with_label(ctx, ClassLabel::Person) {
            if let Some(pp) = point_at(ped, sp.frame_index) {
                let (px, py) = pp.bbox.center();
                if ((px - scx).powi(2) + (py - scy).powi(2)).sqrt() <= radius {
                    near.push(sp.frame_index);
                    break;
                }
            }
        }
    }
    // keep only consecutive runs long enough to count as waiting
    let mut qualified = BTreeSet::new();
    let mut run: Vec<u64> = Vec::new();
    for &f in &near {
        if run.last().is_some_and(|&last| f != last + 1) {
            if run.len() >= cfg.wait_frames as usize {
                qualified.extend(run.iter().copied());
            }
            run.clear();
        }
        run.push(f);
    }
    if run.len() >= cfg.wait_frames as usize {
        qualified.extend(run);
    }
    qualified
}

/// True when the points contain a `stop_frames`-wide window whose relative
/// area change rate stays below `stop_eps` — the vehicle effectively stopped.
fn contains_stop(points: &[TrackPoint], cfg: &ViolationConfig) -> bool {
    let w = cfg.stop_frames as usize;
    if points.len() < w {
        return false;
    }
    for start in 0..=points.len() - w {
        let a = &points[start];
        let b = &points[start + w - 1];
        let dt = ((b.timestamp_ms - a.timestamp_ms) as f64 / 1000.0).max(1e-6);
        let rate = (b.bbox.area() - a.bbox.area()).abs() / a.bbox.area().max(1e-9) / dt;
        if rate < cfg.stop_eps {
            return true;
        }
    }
    false
}

/// With a pedestrian waiting at a crosswalk sign, a vehicle that traverses
/// the sign's vertical band without ever stopping commits a violation.
pub fn detect_pedestrian_crossing(
    ctx: &SceneContext,
    cfg: &ViolationConfig,
) -> Vec<ViolationEvent> {
    let mut events = Vec::new();
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    for sign in with_label(ctx, ClassLabel::CrosswalkSign) {
        let waiting = pedestrian_waiting_frames(ctx, sign, cfg);
        if waiting.is_empty() {
            continue;
        }
        for traj in vehicles(ctx) {
            if seen.contains(&traj.track_id) {
                continue;
            }
            // maximal runs of consecutive frames inside the sign's band
            let mut runs: Vec<Vec<TrackPoint>> = Vec::new();
            let mut run: Vec<TrackPoint> = Vec::new();
            for p in &traj.points {
                let inside = point_at(sign, p.frame_index).is_some_and(|sp| {
                    (p.bbox.center().0 - sp.bbox.center().0).abs()
                        <= cfg.crossing_band_r * sp.bbox.w
                });
                let contiguous = run
                    .last()
                    .is_none_or(|l| p.frame_index == l.frame_index + 1);
                if !(inside && contiguous) {
                    if run.len() >= 2 {
                        runs.push(std::mem::take(&mut run));
                    } else {
                        run.clear();
                    }
                }
                if inside {
                    run.push(*p);
                }
            }
            if run.len() >= 2 {
                runs.push(run);
            }
            for run in runs {
                let overlaps = run.iter().any(|p| waiting.contains(&p.frame_index));
                if !overlaps || contains_stop(&run, cfg) {
                    continue;
                }
                let f0 = run[0].frame_index;
                let f1 = run.last().unwrap().frame_index;
                events.push(ViolationEvent {
                    kind: ViolationKind::PedestrianCrossing,
                    track_id: traj.track_id,
                    frame_range: (f0, f1),
                    evidence: vec![f0, (f0 + f1) / 2, f1],
                    score: 1.0,
                });
                seen.insert(traj.track_id);
                break;
            }
        }
    }
    events
}

// ---------------------------------------------------------------------------
// parking rules (static-world consistency under ego motion)
// ---------------------------------------------------------------------------

/// Pearson correlation of two equal-length series; None when either side has
/// (near) zero variance.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va < 1e-9 || vb < 1e-9 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

fn sign_shows_ego_motion(sign: &Trajectory, cfg: &ViolationConfig) -> bool {
    let (Some(first), Some(last)) = (sign.points.first(), sign.points.last()) else {
        return false;
    };
    let (x0, y0) = first.bbox.center();
    let (x1, y1) = last.bbox.center();
    let disp = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mean_w = sign.points.iter().map(|p| p.bbox.w).sum::<f64>() / sign.points.len() as f64;
    disp >= cfg.ego_min_disp_sign_widths * mean_w
}

/// Shared machinery of the two parking rules: a vehicle whose frame-to-frame
/// x-displacement correlates with the sign's (the known-static reference)
/// over `park_frames` frames is itself static, i.e. parked.
fn detect_parked(
    ctx: &SceneContext,
    cfg: &ViolationConfig,
    sign_label: ClassLabel,
    kind: ViolationKind,
    proximity_sign_widths: Option<f64>,
    restrict_to_sign_half: bool,
) -> Vec<ViolationEvent> {
    let width = ctx.frame_dims.0 as f64;
    let mut events = Vec::new();
    let mut seen: BTreeSet<u64> = BTreeSet::new();

    for sign in with_label(ctx, sign_label) {
        if !sign_shows_ego_motion(sign, cfg) {
            continue;
        }
        let mean_sign_x =
            sign.points.iter().map(|p| p.bbox.center().0).sum::<f64>() / sign.points.len() as f64;
        let sign_on_left = mean_sign_x < width / 2.0;

        for traj in vehicles(ctx) {
            if seen.contains(&traj.track_id) {
                continue;
            }
            // frames where both are present and every gate passes
            let mut frames: Vec<(u64, f64, f64)> = Vec::new(); // (frame, vehicle x, sign x)
            for p in &traj.points {
                let Some(sp) = point_at(sign, p.frame_index) else {
                    continue;
                };
                let (vx, vy) = p.bbox.center();
                let (sx, sy) = sp.bbox.center();
                if restrict_to_sign_half && ((vx < width / 2.0) != sign_on_left) {
                    continue;
                }
                if let Some(r) = proximity_sign_widths {
                    let dist = ((vx - sx).powi(2) + (vy - sy).powi(2)).sqrt();
                    if dist > r * sp.bbox.w {
                        continue;
                    }
                }
                frames.push((p.frame_index, vx, sx));
            }

            // consecutive-frame runs; correlate deltas over sliding windows
            let mut start = 0;
            while start < frames.len() {
                let mut end = start + 1;
                while end < frames.len() && frames[end].0 == frames[end - 1].0 + 1 {
                    end += 1;
                }
                if let Some(ev) = parked_event_in_run(&frames[start..end], traj.track_id, kind, cfg)
                {
                    events.push(ev);
                    seen.insert(traj.track_id);
                    break;
                }
                start = end;
            }
        }
    }
    events
}

fn parked_event_in_run(
    run: &[(u64, f64, f64)],
    track_id: u64,
    kind: ViolationKind,
    cfg: &ViolationConfig,
) -> Option<ViolationEvent> {
    let w = cfg.park_frames as usize;
    if run.len() < w + 1 {
        return None;
    }
    let dv: Vec<f64> = run.windows(2).map(|p| p[1].1 - p[0].1).collect();
    let ds: Vec<f64> = run.windows(2).map(|p| p[1].2 - p[0].2).collect();
    for start in 0..=dv.len() - w {
        let wv = &dv[start..start + w];
        let ws = &ds[start..start + w];
        let residual =
            (wv.iter().sum::<f64>() - ws.iter().sum::<f64>()).abs() / w as f64;
        if residual > cfg.parked_residual_eps {
            continue;
        }
        if let Some(r) = pearson(wv, ws) {
            if r >= cfg.static_corr {
                let f0 = run[start].0;
                let f1 = run[start + w].0;
                return Some(ViolationEvent {
                    kind,
                    track_id,
                    frame_range: (f0, f1),
                    evidence: vec![f0, (f0 + f1) / 2, f1],
                    score: ((r - cfg.static_corr) / (1.0 - cfg.static_corr)).clamp(0.0, 1.0),
                });
            }
        }
    }
    None
}

/// No-stopping sign: attention restricted to the vertical half of the frame
/// containing the sign; static-world-consistent vehicles there are parked.
pub fn detect_illegal_parking(ctx: &SceneContext, cfg: &ViolationConfig) -> Vec<ViolationEvent> {
    detect_parked(
        ctx,
        cfg,
        ClassLabel::NoStoppingSign,
        ViolationKind::IllegalParking,
        None,
        true,
    )
}

/// Crosswalk sign: same static test, gated on proximity to the sign instead
/// of the frame half.
pub fn detect_crosswalk_parking(ctx: &SceneContext, cfg: &ViolationConfig) -> Vec<ViolationEvent> {
    detect_parked(
        ctx,
        cfg,
        ClassLabel::CrosswalkSign,
        ViolationKind::CrosswalkParking,
        Some(cfg.crosswalk_r),
        false,
    )
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Runs the selected detectors and returns a deduplicated, deterministically
/// ordered event list: at most one event per (kind, track), sorted by kind,
/// track id, then start frame.
pub fn run_rules(
    ctx: &SceneContext,
    rules: &[ViolationKind],
    cfg: &ViolationConfig,
) -> Vec<ViolationEvent> {
    let mut events = Vec::new();
    for kind in ViolationKind::ALL {
        if !rules.contains(&kind) {
            continue;
        }
        let found = match kind {
            ViolationKind::RedLight => detect_red_light(ctx, cfg),
            ViolationKind::BreakdownLane => detect_breakdown_lane(ctx, cfg),
            ViolationKind::FollowingDistance => detect_following_distance(ctx, cfg),
            ViolationKind::PedestrianCrossing => detect_pedestrian_crossing(ctx, cfg),
            ViolationKind::IllegalParking => detect_illegal_parking(ctx, cfg),
            ViolationKind::CrosswalkParking => detect_crosswalk_parking(ctx, cfg),
        };
        events.extend(found);
    }
    let mut seen: BTreeSet<(ViolationKind, u64)> = BTreeSet::new();
    events.retain(|e| seen.insert((e.kind, e.track_id)));
    events.sort_by_key(|e| (e.kind, e.track_id, e.frame_range.0));
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BBox;

    const FPS: f64 = 10.0;

    fn pt(frame: u64, bbox: BBox) -> TrackPoint {
        TrackPoint {
            frame_index: frame,
            timestamp_ms: (frame as f64 * 1000.0 / FPS) as u64,
            bbox,
        }
    }

    fn traj(id: u64, label: ClassLabel, points: Vec<TrackPoint>) -> Trajectory {
        Trajectory {
            track_id: id,
            label,
            points,
        }
    }

    fn centered(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    fn ctx<'a>(trajs: &'a [Trajectory], tl: Option<&'a [(u64, LightColor)]>) -> SceneContext<'a> {
        SceneContext {
            trajectories: trajs,
            light_timeline: tl,
            frame_dims: (640, 360),
        }
    }

    fn cfg() -> ViolationConfig {
        ViolationConfig::default()
    }

    // -- speed --

    #[test]
    fn constant_bbox_has_zero_rate() {
        let t = traj(
            1,
            ClassLabel::Car,
            (0..10)
                .map(|f| pt(f, BBox::new(0.0, 0.0, 20.0, 10.0)))
                .collect(),
        );
        let s = estimate_speed(&t, 9, &cfg()).unwrap();
        assert_eq!(s.area_rate, 0.0);
    }

    #[test]
    fn area_doubling_in_one_second_is_rate_one() {
        // two points one second apart, area 100 -> 200
        let points = vec![
            TrackPoint {
                frame_index: 0,
                timestamp_ms: 0,
                bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            },
            TrackPoint {
                frame_index: 10,
                timestamp_ms: 1000,
                bbox: BBox::new(0.0, 0.0, 20.0, 10.0),
            },
        ];
        let t = traj(1, ClassLabel::Car, points);
        let s = estimate_speed(&t, 10, &cfg()).unwrap();
        assert!((s.area_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_is_undefined_speed() {
        let t = traj(1, ClassLabel::Car, vec![pt(0, BBox::new(0.0, 0.0, 5.0, 5.0))]);
        assert!(matches!(
            estimate_speed(&t, 0, &cfg()),
            Err(SpeedError::InsufficientHistory { .. })
        ));
    }

    // -- red light --

    /// 30% linear-dimension shrink across frames 20..=30 (area ~51% down).
    fn shrinking_vehicle(id: u64) -> Trajectory {
        let points = (0..60)
            .map(|f| {
                let scale = if f < 20 {
                    1.0
                } else if f <= 30 {
                    1.0 - 0.3 * (f - 20) as f64 / 10.0
                } else {
                    0.7
                };
                pt(f, centered(320.0, 200.0, 100.0 * scale, 70.0 * scale))
            })
            .collect();
        traj(id, ClassLabel::Car, points)
    }

    fn timeline(color: LightColor, frames: u64) -> Vec<(u64, LightColor)> {
        (0..frames).map(|f| (f, color)).collect()
    }

    #[test]
    fn red_light_pass_emits_one_event() {
        let trajs = vec![shrinking_vehicle(1)];
        let tl = timeline(LightColor::Red, 60);
        let events = detect_red_light(&ctx(&trajs, Some(&tl)), &cfg());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].track_id, 1);
        assert!(events[0].frame_range.0 >= 15 && events[0].frame_range.1 <= 35);
    }

    #[test]
    fn green_light_same_motion_no_event() {
        let trajs = vec![shrinking_vehicle(1)];
        let tl = timeline(LightColor::Green, 60);
        assert!(detect_red_light(&ctx(&trajs, Some(&tl)), &cfg()).is_empty());
    }

    #[test]
    fn stationary_vehicle_under_red_no_event() {
        let trajs = vec![traj(
            1,
            ClassLabel::Car,
            (0..60)
                .map(|f| pt(f, centered(320.0, 200.0, 100.0, 70.0)))
                .collect(),
        )];
        let tl = timeline(LightColor::Red, 60);
        assert!(detect_red_light(&ctx(&trajs, Some(&tl)), &cfg()).is_empty());
    }

    #[test]
    fn raising_shrink_frac_never_increases_red_light_events() {
        let trajs = vec![shrinking_vehicle(1)];
        let tl = timeline(LightColor::Red, 60);
        let mut last = usize::MAX;
        for frac in [0.05, 0.2, 0.4, 0.6, 0.9] {
            let mut c = cfg();
            c.shrink_frac = frac;
            let n = detect_red_light(&ctx(&trajs, Some(&tl)), &c).len();
            assert!(n <= last, "events increased when shrink_frac rose to {frac}");
            last = n;
        }
    }

    // -- breakdown lane --

    /// Eight near-constant cars in band 1 plus one growing car at `offender_cx`.
    fn breakdown_scene(offender_cx: f64) -> Vec<Trajectory> {
        let mut trajs = Vec::new();
        for i in 0..8u64 {
            trajs.push(traj(
                i + 1,
                ClassLabel::Car,
                (0..100)
                    .map(|f| pt(f, centered(60.0 + 18.0 * i as f64, 200.0, 26.0, 20.0)))
                    .collect(),
            ));
        }
        // offender: area grows exponentially at ~0.15/s
        trajs.push(traj(
            9,
            ClassLabel::Car,
            (0..100)
                .map(|f| {
                    let scale = (0.075 * f as f64 / FPS).exp();
                    pt(f, centered(offender_cx, 250.0, 30.0 * scale, 22.0 * scale))
                })
                .collect(),
        ));
        trajs
    }

    #[test]
    fn fast_vehicle_in_outer_band_is_flagged() {
        let trajs = breakdown_scene(520.0);
        let events = detect_breakdown_lane(&ctx(&trajs, None), &cfg());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].track_id, 9);
    }

    #[test]
    fn equal_speeds_no_outlier() {
        let trajs: Vec<Trajectory> = (0..6u64)
            .map(|i| {
                traj(
                    i + 1,
                    ClassLabel::Car,
                    (0..100)
                        .map(|f| pt(f, centered(80.0 + 90.0 * i as f64, 200.0, 26.0, 20.0)))
                        .collect(),
                )
            })
            .collect();
        assert!(detect_breakdown_lane(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn fast_vehicle_in_band_one_not_flagged() {
        let trajs = breakdown_scene(120.0);
        assert!(detect_breakdown_lane(&ctx(&trajs, None), &cfg()).is_empty());
    }

    // -- following distance --

    /// Entrant appears at the left edge at frame 10 and sweeps right at
    /// `speed` px/frame; lead sits at x = 320.
    fn merge_scene(speed: f64) -> Vec<Trajectory> {
        let lead = traj(
            1,
            ClassLabel::Car,
            (0..100)
                .map(|f| pt(f, centered(320.0, 150.0, 70.0, 50.0)))
                .collect(),
        );
        let entrant = traj(
            2,
            ClassLabel::Car,
            (10..100)
                .map(|f| pt(f, centered(10.0 + speed * (f - 10) as f64, 250.0, 40.0, 28.0)))
                .collect(),
        );
        vec![lead, entrant]
    }

    #[test]
    fn arrival_at_two_seconds_triggers() {
        // 310 px gap at 15.5 px/frame = 20 frames = 2.0 s
        let trajs = merge_scene(15.5);
        let events = detect_following_distance(&ctx(&trajs, None), &cfg());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].track_id, 2);
    }

    #[test]
    fn arrival_at_four_seconds_is_legal() {
        let trajs = merge_scene(7.75); // 40 frames = 4.0 s
        assert!(detect_following_distance(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn never_reaching_reference_is_legal() {
        let trajs = merge_scene(2.0); // reaches x=190 by frame 100
        assert!(detect_following_distance(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn boundary_2_9_triggers_3_1_does_not() {
        // gap 310 px, arrival after t seconds => speed = 310 / (10 t);
        // a hair of overshoot keeps the crossing on the intended frame
        for (t, expect) in [(2.9, 1usize), (3.1, 0usize)] {
            let trajs = merge_scene(310.0 / (10.0 * t) + 1e-9);
            let events = detect_following_distance(&ctx(&trajs, None), &cfg());
            assert_eq!(events.len(), expect, "arrival at {t}s");
        }
    }

    // -- pedestrian crossing --

    fn crossing_scene(vehicle_stops: bool, with_pedestrian: bool) -> Vec<Trajectory> {
        let mut trajs = Vec::new();
        // static sign (ego stopped at the crosswalk)
        trajs.push(traj(
            1,
            ClassLabel::CrosswalkSign,
            (0..120)
                .map(|f| pt(f, centered(495.0, 135.0, 30.0, 30.0)))
                .collect(),
        ));
        if with_pedestrian {
            trajs.push(traj(
                2,
                ClassLabel::Person,
                (5..115)
                    .map(|f| pt(f, centered(520.0, 200.0, 18.0, 40.0)))
                    .collect(),
            ));
        }
        // vehicle drives away through the band (area shrinking), optionally
        // halting for 15 frames inside it with only a residual creep
        let mut points = Vec::new();
        let mut x = 300.0;
        let mut scale = 1.0f64;
        for f in 0..120u64 {
            let moving = !(vehicle_stops && (28..43).contains(&f));
            if moving {
                x += 6.0;
                scale *= 0.99;
            } else {
                scale *= 0.9998;
            }
            if x > 660.0 {
                break;
            }
            points.push(pt(f, centered(x, 240.0, 80.0 * scale, 55.0 * scale)));
        }
        trajs.push(traj(3, ClassLabel::Car, points));
        trajs
    }

    #[test]
    fn non_stopping_vehicle_with_waiting_pedestrian_is_violation() {
        let trajs = crossing_scene(false, true);
        let events = detect_pedestrian_crossing(&ctx(&trajs, None), &cfg());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].track_id, 3);
    }

    #[test]
    fn no_pedestrian_near_sign_no_event() {
        let trajs = crossing_scene(false, false);
        assert!(detect_pedestrian_crossing(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn vehicle_halting_inside_band_is_legal() {
        let trajs = crossing_scene(true, true);
        assert!(detect_pedestrian_crossing(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn raising_stop_eps_never_increases_crossing_events() {
        // a stricter stop test (smaller eps) can only add violations; the
        // count is monotone non-increasing in stop_eps
        let trajs = crossing_scene(true, true);
        let mut last = usize::MAX;
        for eps in [1e-5, 1e-3, 0.01, 0.1] {
            let mut c = cfg();
            c.stop_eps = eps;
            let n = detect_pedestrian_crossing(&ctx(&trajs, None), &c).len();
            assert!(n <= last, "events increased when stop_eps rose to {eps}");
            last = n;
        }
    }

    // -- parking --

    /// Ego oscillating crawl: sign and parked cars share a displacement
    /// profile; a moving car does not.
    enum VehicleMotion {
        Parked,
        Oncoming,
        Creeping,
    }

    fn parking_scene(
        sign_label: ClassLabel,
        vehicle_near: bool,
        motion: VehicleMotion,
    ) -> Vec<Trajectory> {
        let flow = |f: u64| 120.0 * (1.0 - (f as f64 * 0.05).cos());
        let mut trajs = Vec::new();
        trajs.push(traj(
            1,
            sign_label,
            (0..100)
                .map(|f| {
                    let w = 22.0 + 0.1 * f as f64;
                    pt(f, centered(400.0 + flow(f), 120.0, w, w))
                })
                .collect(),
        ));
        let base_x = if vehicle_near { 430.0 } else { 40.0 };
        let points = (0..100)
            .map(|f| {
                let x = match motion {
                    VehicleMotion::Parked => base_x + flow(f),
                    VehicleMotion::Oncoming => base_x + 140.0 - 1.4 * f as f64,
                    // flow plus a constant 2 px/frame creep: perfectly
                    // correlated with the sign but not static
                    VehicleMotion::Creeping => base_x + flow(f) - 2.0 * f as f64,
                };
                pt(f, centered(x, 200.0, 40.0, 30.0))
            })
            .collect();
        trajs.push(traj(2, ClassLabel::Car, points));
        trajs
    }

    #[test]
    fn lockstep_vehicle_near_no_stopping_sign_is_illegal_parking() {
        let trajs = parking_scene(ClassLabel::NoStoppingSign, true, VehicleMotion::Parked);
        let events = detect_illegal_parking(&ctx(&trajs, None), &cfg());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].track_id, 2);
        assert_eq!(events[0].kind, ViolationKind::IllegalParking);
    }

    #[test]
    fn no_sign_no_illegal_parking() {
        let trajs = parking_scene(ClassLabel::CrosswalkSign, true, VehicleMotion::Parked);
        assert!(detect_illegal_parking(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn oncoming_vehicle_is_not_parked() {
        let trajs = parking_scene(ClassLabel::NoStoppingSign, true, VehicleMotion::Oncoming);
        assert!(detect_illegal_parking(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn creeping_vehicle_correlates_but_is_not_static() {
        let trajs = parking_scene(ClassLabel::NoStoppingSign, true, VehicleMotion::Creeping);
        assert!(detect_illegal_parking(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn static_vehicle_beside_crosswalk_sign_is_crosswalk_parking() {
        let trajs = parking_scene(ClassLabel::CrosswalkSign, true, VehicleMotion::Parked);
        let events = detect_crosswalk_parking(&ctx(&trajs, None), &cfg());
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, ViolationKind::CrosswalkParking);
    }

    #[test]
    fn distant_vehicle_is_outside_crosswalk_proximity() {
        let trajs = parking_scene(ClassLabel::CrosswalkSign, false, VehicleMotion::Parked);
        assert!(detect_crosswalk_parking(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn moving_vehicle_near_crosswalk_sign_is_not_parked() {
        let trajs = parking_scene(ClassLabel::CrosswalkSign, true, VehicleMotion::Creeping);
        assert!(detect_crosswalk_parking(&ctx(&trajs, None), &cfg()).is_empty());
    }

    #[test]
    fn no_ego_motion_disables_parking_rules() {
        // static sign means no ego motion evidence
        let mut trajs = parking_scene(ClassLabel::NoStoppingSign, true, VehicleMotion::Parked);
        trajs[0] = traj(
            1,
            ClassLabel::NoStoppingSign,
            (0..100)
                .map(|f| pt(f, centered(400.0, 120.0, 18.0, 18.0)))
                .collect(),
        );
        assert!(detect_illegal_parking(&ctx(&trajs, None), &cfg()).is_empty());
    }

    // -- dispatch --

    #[test]
    fn run_rules_dedupes_and_orders_deterministically() {
        let trajs = crossing_scene(false, true);
        let c = cfg();
        let context = ctx(&trajs, None);
        let a = run_rules(&context, &ViolationKind::ALL, &c);
        let b = run_rules(&context, &ViolationKind::ALL, &c);
        assert_eq!(a, b);
        let mut pairs: Vec<(ViolationKind, u64)> = a.iter().map(|e| (e.kind, e.track_id)).collect();
        pairs.dedup();
        assert_eq!(pairs.len(), a.len(), "duplicate (kind, track) events");
    }

    #[test]
    fn rule_filter_selects_detectors() {
        let trajs = crossing_scene(false, true);
        let context = ctx(&trajs, None);
        let only_breakdown = run_rules(&context, &[ViolationKind::BreakdownLane], &cfg());
        assert!(only_breakdown.is_empty());
        let only_crossing = run_rules(&context, &[ViolationKind::PedestrianCrossing], &cfg());
        assert_eq!(only_crossing.len(), 1);
    }
}
