//! Bounding-box post-processing and detector evaluation.

mod eval;
mod io;
mod matching;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{
    eval_report, AreaRange, EvalConfig, EvalCorpus, EvalReport, SummaryStat, SUMMARY_STATS,
};
pub use io::{read_box_lines, write_box_lines, BoxLine};
pub use matching::{average_precision, match_detections, MatchLabel, MatchOutcome, ScoredMatch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("invalid box [{xmin}, {ymin}, {xmax}, {ymax}]")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("empty image id")]
    ImageId,
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Object class of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxClass {
    Roof,
    Pv,
}

impl BoxClass {
    pub const ALL: [BoxClass; 2] = [BoxClass::Roof, BoxClass::Pv];

    pub fn as_str(self) -> &'static str {
        match self {
            BoxClass::Roof => "roof",
            BoxClass::Pv => "pv",
        }
    }
}

impl std::fmt::Display for BoxClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BoxClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "roof" => Ok(BoxClass::Roof),
            "pv" => Ok(BoxClass::Pv),
            other => Err(format!("unknown class {other:?}")),
        }
    }
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, DetectError> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmax <= xmin || ymax <= ymin {
            return Err(DetectError::InvalidBox {
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Grows the rectangle by `eps` on every side.
    pub fn expanded(&self, eps: f64) -> Rect {
        Rect {
            xmin: self.xmin - eps,
            ymin: self.ymin - eps,
            xmax: self.xmax + eps,
            ymax: self.ymax + eps,
        }
    }

    /// Closed-set intersection test (touching edges count).
    pub fn touches(&self, other: &Rect) -> bool {
        self.xmin <= other.xmax
            && other.xmin <= self.xmax
            && self.ymin <= other.ymax
            && other.ymin <= self.ymax
    }
}

/// Intersection over union of two rectangles.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A scored, class-tagged detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub rect: Rect,
    pub cls: BoxClass,
    pub score: f64,
}

impl BBox {
    pub fn new(rect: Rect, cls: BoxClass, score: f64) -> Result<Self, DetectError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectError::Score(score));
        }
        Ok(Self { rect, cls, score })
    }
}

/// An annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub rect: Rect,
    pub cls: BoxClass,
}

/// All detections of one image tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub boxes: Vec<BBox>,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BBox>) -> Result<Self, DetectError> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(DetectError::ImageId);
        }
        Ok(Self { image_id, boxes })
    }
}

/// Per-class IoU cutoffs for suppression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsThresholds {
    pub roof: f64,
    pub pv: f64,
}

impl Default for NmsThresholds {
    fn default() -> Self {
        Self { roof: 0.2, pv: 0.1 }
    }
}

impl NmsThresholds {
    pub fn for_class(&self, cls: BoxClass) -> f64 {
        match cls {
            BoxClass::Roof => self.roof,
            BoxClass::Pv => self.pv,
        }
    }
}

/// Indices of `boxes` sorted by score descending; equal scores keep input order.
pub(crate) fn score_order(boxes: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score));
    order
}

/// Class-wise greedy non-maximum suppression. A box is suppressed when its
/// IoU with an already kept box of the same class exceeds that class's
/// threshold. Kept boxes are returned in keep (score) order.
pub fn nms(dets: &DetectionSet, thresholds: NmsThresholds) -> DetectionSet {
    let mut kept: Vec<BBox> = Vec::new();
    for i in score_order(&dets.boxes) {
        let b = dets.boxes[i];
        let thr = thresholds.for_class(b.cls);
        if kept
            .iter()
            .all(|k| k.cls != b.cls || iou(&k.rect, &b.rect) <= thr)
        {
            kept.push(b);
        }
    }
    DetectionSet {
        image_id: dets.image_id.clone(),
        boxes: kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        Rect::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_basic_cases() {
        let a = rect(0., 0., 2., 2.);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &rect(5., 5., 6., 6.)), 0.0);
        assert_eq!(iou(&a, &rect(2., 0., 3., 2.)), 0.0);
        assert!((iou(&a, &rect(1., 1., 3., 3.)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn rect_validation() {
        assert!(Rect::new(1., 0., 1., 2.).is_err());
        assert!(Rect::new(0., 3., 1., 2.).is_err());
        assert!(Rect::new(0., 0., f64::INFINITY, 2.).is_err());
        assert!(BBox::new(rect(0., 0., 1., 1.), BoxClass::Pv, 1.2).is_err());
        assert!(DetectionSet::new("", vec![]).is_err());
    }

    #[test]
    fn nms_single_box() {
        let b = BBox::new(rect(0., 0., 10., 10.), BoxClass::Roof, 0.3).unwrap();
        let out = nms(
            &DetectionSet::new("a", vec![b]).unwrap(),
            NmsThresholds::default(),
        );
        assert_eq!(out.boxes, vec![b]);
    }

    #[test]
    fn nms_roof_pair_above_cutoff() {
        // IoU of these two is exactly 0.5 (overlap 2/3 of the width).
        let a = BBox::new(rect(0., 0., 3., 1.), BoxClass::Roof, 0.8).unwrap();
        let b = BBox::new(rect(1., 0., 4., 1.), BoxClass::Roof, 0.9).unwrap();
        assert!((iou(&a.rect, &b.rect) - 0.5).abs() < 1e-12);
        let out = nms(
            &DetectionSet::new("a", vec![a, b]).unwrap(),
            NmsThresholds::default(),
        );
        assert_eq!(out.boxes, vec![b]);
    }

    #[test]
    fn nms_pv_pair_below_cutoff() {
        // Overlap 1 of union 20: IoU 0.05 < 0.1.
        let a = BBox::new(rect(0., 0., 10.5, 1.), BoxClass::Pv, 0.4).unwrap();
        let b = BBox::new(rect(9.5, 0., 20., 1.), BoxClass::Pv, 0.7).unwrap();
        assert!((iou(&a.rect, &b.rect) - 0.05).abs() < 1e-12);
        let out = nms(
            &DetectionSet::new("a", vec![a, b]).unwrap(),
            NmsThresholds::default(),
        );
        assert_eq!(out.boxes, vec![b, a]);
    }

    #[test]
    fn nms_classes_do_not_interact() {
        let roof = BBox::new(rect(0., 0., 10., 10.), BoxClass::Roof, 0.5).unwrap();
        let pv = BBox::new(rect(0., 0., 10., 10.), BoxClass::Pv, 0.9).unwrap();
        let out = nms(
            &DetectionSet::new("a", vec![roof, pv]).unwrap(),
            NmsThresholds::default(),
        );
        assert_eq!(out.boxes, vec![pv, roof]);
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let a = BBox::new(rect(0., 0., 10., 10.), BoxClass::Roof, 0.5).unwrap();
        let b = BBox::new(rect(1., 1., 10., 10.), BoxClass::Roof, 0.5).unwrap();
        let out = nms(
            &DetectionSet::new("a", vec![a, b]).unwrap(),
            NmsThresholds::default(),
        );
        assert_eq!(out.boxes, vec![a]);
        let out = nms(
            &DetectionSet::new("a", vec![b, a]).unwrap(),
            NmsThresholds::default(),
        );
        assert_eq!(out.boxes, vec![b]);
    }

    fn arb_rect() -> impl Strategy<Value = Rect> {
        (0.0f64..50.0, 0.0f64..50.0, 1.0f64..30.0, 1.0f64..30.0)
            .prop_map(|(x, y, w, h)| rect(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn nms_output_is_a_non_overlapping_subset(
            boxes in prop::collection::vec((arb_rect(), any::<bool>(), 0.0f64..1.0), 0..12)
        ) {
            let boxes: Vec<BBox> = boxes
                .into_iter()
                .map(|(r, roof, s)| BBox::new(r, if roof { BoxClass::Roof } else { BoxClass::Pv }, s).unwrap())
                .collect();
            let thr = NmsThresholds::default();
            let out = nms(&DetectionSet::new("p", boxes.clone()).unwrap(), thr);
            for b in &out.boxes {
                prop_assert!(boxes.contains(b));
            }
            for (i, a) in out.boxes.iter().enumerate() {
                for b in &out.boxes[i + 1..] {
                    if a.cls == b.cls {
                        prop_assert!(iou(&a.rect, &b.rect) <= thr.for_class(a.cls));
                    }
                }
            }
        }
    }
}
