//! Detection data model and detection-stream I/O.
//!
//! A detection stream is a line-delimited text file, one detection per line,
//! tab-separated fields in order:
//!
//! `frame_index  timestamp_ms  label  x  y  w  h  confidence`
//!
//! Lines starting with `#` are comments. A `-` in the timestamp column means
//! "derive from fps" (`frame_index * 1000 / fps`). Frame images, when present,
//! live in a sibling directory as `frame_%06d.png` keyed by frame index.

use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown class label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: timestamps must be non-decreasing with frame index")]
    NonMonotoneTimestamp { line: usize },
    #[error("line {line}: frame indices must be non-decreasing")]
    OutOfOrderFrame { line: usize },
    #[error("bounding box degenerate after clamping to {width}x{height}")]
    DegenerateBox { width: u32, height: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box in pixel coordinates, top-left origin. Continuous
/// (sub-pixel) coordinates are allowed; `w` and `h` must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Width over height.
    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w > 0.0 && self.h > 0.0
    }
}

/// The eight detector classes the engine accepts. Anything else is rejected
/// at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Car,
    Motorcycle,
    Bus,
    Truck,
    Person,
    TrafficLight,
    NoStoppingSign,
    CrosswalkSign,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 8] = [
        ClassLabel::Car,
        ClassLabel::Motorcycle,
        ClassLabel::Bus,
        ClassLabel::Truck,
        ClassLabel::Person,
        ClassLabel::TrafficLight,
        ClassLabel::NoStoppingSign,
        ClassLabel::CrosswalkSign,
    ];

    pub fn as_token(&self) -> &'static str {
        match self {
            ClassLabel::Car => "car",
            ClassLabel::Motorcycle => "motorcycle",
            ClassLabel::Bus => "bus",
            ClassLabel::Truck => "truck",
            ClassLabel::Person => "person",
            ClassLabel::TrafficLight => "traffic_light",
            ClassLabel::NoStoppingSign => "no_stopping_sign",
            ClassLabel::CrosswalkSign => "crosswalk_sign",
        }
    }

    pub fn is_vehicle(&self) -> bool {
        matches!(
            self,
            ClassLabel::Car | ClassLabel::Motorcycle | ClassLabel::Bus | ClassLabel::Truck
        )
    }
}

impl FromStr for ClassLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_token() == s)
            .ok_or(())
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_token())
    }
}

/// One detector output for one object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub label: ClassLabel,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Detections of one frame, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_index: u64,
    pub detections: Vec<Detection>,
}

impl Frame {
    /// Timestamp of the frame, taken from its first detection.
    pub fn timestamp_ms(&self) -> u64 {
        self.detections.first().map(|d| d.timestamp_ms).unwrap_or(0)
    }
}

/// A validated, frame-grouped detection stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub fps: f64,
    pub frame_dims: (u32, u32),
    pub frames: Vec<Frame>,
}

impl FrameStream {
    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }
}

/// Clamps a box to the frame rectangle. Boxes whose clamped area is zero are
/// rejected as degenerate.
pub fn validate_bbox(b: BBox, frame_dims: (u32, u32)) -> Result<BBox, IngestError> {
    let (fw, fh) = (frame_dims.0 as f64, frame_dims.1 as f64);
    if !b.is_valid() {
        return Err(IngestError::DegenerateBox {
            width: frame_dims.0,
            height: frame_dims.1,
        });
    }
    let x0 = b.x.clamp(0.0, fw);
    let y0 = b.y.clamp(0.0, fh);
    let x1 = b.right().clamp(0.0, fw);
    let y1 = b.bottom().clamp(0.0, fh);
    let clamped = BBox::new(x0, y0, x1 - x0, y1 - y0);
    if clamped.area() <= 0.0 {
        return Err(IngestError::DegenerateBox {
            width: frame_dims.0,
            height: frame_dims.1,
        });
    }
    Ok(clamped)
}

/// Intersection over union of two boxes, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = a.right().min(b.right());
    let y1 = a.bottom().min(b.bottom());
    let inter = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Parses a detection stream, grouping records by frame index. Records with
/// the same frame index keep their input order. Boxes are clamped to the
/// frame rectangle during validation.
pub fn parse_detection_stream(
    reader: impl BufRead,
    fps: f64,
    frame_dims: (u32, u32),
) -> Result<FrameStream, IngestError> {
    let mut frames: Vec<Frame> = Vec::new();
    let mut last_frame: Option<u64> = None;
    let mut last_ts: Option<u64> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 8 {
            return Err(IngestError::Malformed {
                line: line_no,
                msg: format!("expected 8 tab-separated fields, got {}", fields.len()),
            });
        }
        let malformed = |msg: String| IngestError::Malformed { line: line_no, msg };
        let frame_index: u64 = fields[0]
            .parse()
            .map_err(|e| malformed(format!("frame_index: {e}")))?;
        let timestamp_ms: u64 = if fields[1] == "-" {
            (frame_index as f64 * 1000.0 / fps).round() as u64
        } else {
            fields[1]
                .parse()
                .map_err(|e| malformed(format!("timestamp_ms: {e}")))?
        };
        let label = ClassLabel::from_str(fields[2]).map_err(|_| IngestError::UnknownLabel {
            line: line_no,
            label: fields[2].to_string(),
        })?;
        let mut nums = [0f64; 5];
        for (i, raw) in fields[3..8].iter().enumerate() {
            nums[i] = raw
                .parse()
                .map_err(|e| malformed(format!("field {}: {e}", i + 4)))?;
        }
        let confidence = nums[4];
        if !(0.0..=1.0).contains(&confidence) {
            return Err(malformed(format!("confidence {confidence} outside [0,1]")));
        }
        let bbox = validate_bbox(BBox::new(nums[0], nums[1], nums[2], nums[3]), frame_dims)
            .map_err(|e| malformed(e.to_string()))?;

        if let Some(last) = last_frame {
            if frame_index < last {
                return Err(IngestError::OutOfOrderFrame { line: line_no });
            }
        }
        if let Some(ts) = last_ts {
            if timestamp_ms < ts {
                return Err(IngestError::NonMonotoneTimestamp { line: line_no });
            }
        }
        last_ts = Some(timestamp_ms);

        let det = Detection {
            frame_index,
            timestamp_ms,
            label,
            bbox,
            confidence,
        };
        if last_frame == Some(frame_index) {
            frames.last_mut().unwrap().detections.push(det);
        } else {
            frames.push(Frame {
                frame_index,
                detections: vec![det],
            });
            last_frame = Some(frame_index);
        }
    }

    Ok(FrameStream {
        fps,
        frame_dims,
        frames,
    })
}

/// Serializes a stream back to the line format. `parse(serialize(s)) == s`
/// for any valid stream; floats use the shortest round-trip representation.
pub fn serialize_detection_stream(stream: &FrameStream) -> String {
    let mut out = String::new();
    for frame in &stream.frames {
        for d in &frame.detections {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                d.frame_index,
                d.timestamp_ms,
                d.label,
                d.bbox.x,
                d.bbox.y,
                d.bbox.w,
                d.bbox.h,
                d.confidence
            ));
        }
    }
    out
}

/// Frame image filename for a frame index (`frame_%06d.png`).
pub fn frame_image_name(frame_index: u64) -> String {
    format!("frame_{frame_index:06}.png")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<FrameStream, IngestError> {
        parse_detection_stream(text.as_bytes(), 30.0, (100, 100))
    }

    #[test]
    fn empty_input_gives_empty_stream() {
        let s = parse("").unwrap();
        assert_eq!(s.frames.len(), 0);
        let s = parse("# just a comment\n\n").unwrap();
        assert_eq!(s.frames.len(), 0);
    }

    #[test]
    fn groups_by_frame_index() {
        let text = "0\t0\tcar\t1\t1\t5\t5\t0.9\n\
                    0\t0\tcar\t10\t10\t5\t5\t0.8\n\
                    1\t33\tcar\t2\t2\t5\t5\t0.9\n";
        let s = parse(text).unwrap();
        assert_eq!(s.frames.len(), 2);
        assert_eq!(s.frames[0].detections.len(), 2);
        assert_eq!(s.frames[1].detections.len(), 1);
        // input order preserved inside a frame
        assert_eq!(s.frames[0].detections[0].bbox.x, 1.0);
        assert_eq!(s.frames[0].detections[1].bbox.x, 10.0);
    }

    #[test]
    fn unknown_label_is_vocabulary_error() {
        let err = parse("0\t0\tbicycle\t1\t1\t5\t5\t0.9\n").unwrap_err();
        assert!(matches!(err, IngestError::UnknownLabel { line: 1, .. }));
    }

    #[test]
    fn non_monotone_timestamp_is_error() {
        let text = "0\t100\tcar\t1\t1\t5\t5\t0.9\n1\t50\tcar\t1\t1\t5\t5\t0.9\n";
        let err = parse(text).unwrap_err();
        assert!(matches!(err, IngestError::NonMonotoneTimestamp { line: 2 }));
    }

    #[test]
    fn decreasing_frame_index_is_error() {
        let text = "2\t0\tcar\t1\t1\t5\t5\t0.9\n1\t0\tcar\t1\t1\t5\t5\t0.9\n";
        let err = parse(text).unwrap_err();
        assert!(matches!(err, IngestError::OutOfOrderFrame { line: 2 }));
    }

    #[test]
    fn dash_timestamp_derives_from_fps() {
        let s = parse_detection_stream(
            "6\t-\tcar\t1\t1\t5\t5\t0.9\n".as_bytes(),
            30.0,
            (100, 100),
        )
        .unwrap();
        assert_eq!(s.frames[0].detections[0].timestamp_ms, 200);
    }

    #[test]
    fn validate_bbox_interior_unchanged() {
        let b = validate_bbox(BBox::new(10.0, 10.0, 20.0, 20.0), (100, 100)).unwrap();
        assert_eq!(b, BBox::new(10.0, 10.0, 20.0, 20.0));
    }

    #[test]
    fn validate_bbox_clamps_overhang() {
        let b = validate_bbox(BBox::new(90.0, 90.0, 20.0, 20.0), (100, 100)).unwrap();
        assert_eq!(b, BBox::new(90.0, 90.0, 10.0, 10.0));
    }

    #[test]
    fn validate_bbox_rejects_fully_outside() {
        let err = validate_bbox(BBox::new(120.0, 10.0, 5.0, 5.0), (100, 100)).unwrap_err();
        assert!(matches!(err, IngestError::DegenerateBox { .. }));
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        let disjoint = BBox::new(10.0, 10.0, 2.0, 2.0);
        assert_eq!(iou(&a, &disjoint), 0.0);
        // inter = 1x2 = 2, union = 4 + 4 - 2 = 6
        let b = BBox::new(1.0, 0.0, 2.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    fn arb_bbox() -> impl Strategy<Value = BBox> {
        (0.0..500.0f64, 0.0..500.0f64, 0.1..200.0f64, 0.1..200.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_bbox(), b in arb_bbox()) {
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn validate_bbox_idempotent(b in arb_bbox()) {
            if let Ok(once) = validate_bbox(b, (400, 400)) {
                let twice = validate_bbox(once, (400, 400)).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn parse_serialize_roundtrip(
            frames in proptest::collection::vec(
                (proptest::collection::vec((arb_bbox(), 0.0..=1.0f64), 1..4), 1u64..40),
                0..6,
            )
        ) {
            // build a valid stream: strictly increasing frames, consistent timestamps
            let mut fs = Vec::new();
            let mut fi = 0u64;
            for (dets, step) in frames {
                fi += step;
                let detections: Vec<Detection> = dets
                    .into_iter()
                    .filter_map(|(b, c)| {
                        validate_bbox(b, (800, 800)).ok().map(|bbox| Detection {
                            frame_index: fi,
                            timestamp_ms: fi * 33,
                            label: ClassLabel::Car,
                            bbox,
                            confidence: c,
                        })
                    })
                    .collect();
                if !detections.is_empty() {
                    fs.push(Frame { frame_index: fi, detections });
                }
            }
            let stream = FrameStream { fps: 30.0, frame_dims: (800, 800), frames: fs };
            let text = serialize_detection_stream(&stream);
            let parsed = parse_detection_stream(text.as_bytes(), 30.0, (800, 800)).unwrap();
            prop_assert_eq!(parsed, stream);
        }
    }
}
