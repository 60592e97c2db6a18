//! COCO-style AP/AR grid over a corpus of images.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::matching::{pr_summary, sort_by_score, ScoredMatch};
use super::{iou, score_order, BBox, BoxClass, DetectError, GroundTruthBox};

/// A named box-area bucket, `[min, max)` in square pixels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaRange {
    pub label: String,
    pub min: f64,
    pub max: f64,
}

impl AreaRange {
    fn new(label: &str, min: f64, max: f64) -> Self {
        Self {
            label: label.to_string(),
            min,
            max,
        }
    }

    pub fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub area_ranges: Vec<AreaRange>,
    pub max_dets: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            area_ranges: vec![
                AreaRange::new("all", 0.0, f64::INFINITY),
                AreaRange::new("small", 0.0, 32.0 * 32.0),
                AreaRange::new("medium", 32.0 * 32.0, 96.0 * 96.0),
                AreaRange::new("large", 96.0 * 96.0, f64::INFINITY),
            ],
            max_dets: vec![1, 10, 100],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(DetectError::Config(
                "IoU thresholds must lie in (0, 1]".into(),
            ));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DetectError::Config(
                "IoU thresholds must be strictly increasing".into(),
            ));
        }
        if self.area_ranges.is_empty() || self.max_dets.is_empty() {
            return Err(DetectError::Config(
                "need at least one area range and one detection cap".into(),
            ));
        }
        Ok(())
    }
}

/// Detections and ground truth keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct EvalCorpus {
    pub images: BTreeMap<String, (Vec<BBox>, Vec<GroundTruthBox>)>,
}

impl EvalCorpus {
    pub fn add_detection(&mut self, image_id: &str, b: BBox) {
        self.images
            .entry(image_id.to_string())
            .or_default()
            .0
            .push(b);
    }

    pub fn add_ground_truth(&mut self, image_id: &str, g: GroundTruthBox) {
        self.images
            .entry(image_id.to_string())
            .or_default()
            .1
            .push(g);
    }
}

/// Full AP/AR grid. `ap[k][t][a][m]` and `ar[k][t][a][m]` index class,
/// IoU threshold, area range and detection cap; `None` marks an empty bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub classes: Vec<BoxClass>,
    pub ap: Vec<Vec<Vec<Vec<Option<f64>>>>>,
    pub ar: Vec<Vec<Vec<Vec<Option<f64>>>>>,
}

/// One line of the standard 12-line summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStat {
    pub precision: bool,
    pub iou: Option<f64>,
    pub area: &'static str,
    pub max_dets: usize,
}

const fn stat(
    precision: bool,
    iou: Option<f64>,
    area: &'static str,
    max_dets: usize,
) -> SummaryStat {
    SummaryStat {
        precision,
        iou,
        area,
        max_dets,
    }
}

pub const SUMMARY_STATS: [SummaryStat; 12] = [
    stat(true, None, "all", 100),
    stat(true, Some(0.5), "all", 100),
    stat(true, Some(0.75), "all", 100),
    stat(true, None, "small", 100),
    stat(true, None, "medium", 100),
    stat(true, None, "large", 100),
    stat(false, None, "all", 1),
    stat(false, None, "all", 10),
    stat(false, None, "all", 100),
    stat(false, None, "small", 100),
    stat(false, None, "medium", 100),
    stat(false, None, "large", 100),
];

impl EvalReport {
    /// Mean of the defined cells selected by `s`, over the given classes.
    /// Returns -1 when nothing is defined (or the selector is not part of
    /// the config).
    pub fn summary_value(&self, s: &SummaryStat, classes: &[BoxClass]) -> f64 {
        let c = &self.config;
        let Some(a) = c.area_ranges.iter().position(|r| r.label == s.area) else {
            return -1.0;
        };
        let Some(m) = c.max_dets.iter().position(|&d| d == s.max_dets) else {
            return -1.0;
        };
        let ts: Vec<usize> = match s.iou {
            None => (0..c.iou_thresholds.len()).collect(),
            Some(v) => c
                .iou_thresholds
                .iter()
                .position(|&t| (t - v).abs() < 1e-9)
                .into_iter()
                .collect(),
        };
        let grid = if s.precision { &self.ap } else { &self.ar };
        let mut vals = Vec::new();
        for (k, cls) in self.classes.iter().enumerate() {
            if !classes.contains(cls) {
                continue;
            }
            for &t in &ts {
                if let Some(v) = grid[k][t][a][m] {
                    vals.push(v);
                }
            }
        }
        if vals.is_empty() {
            -1.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn summary(&self, classes: &[BoxClass]) -> [f64; 12] {
        SUMMARY_STATS.map(|s| self.summary_value(&s, classes))
    }

    /// Mean over classes of AP at IoU 0.5 (area all, largest cap).
    pub fn map50(&self) -> f64 {
        let s = stat(
            true,
            Some(0.5),
            "all",
            *self.config.max_dets.last().unwrap_or(&100),
        );
        let per: Vec<f64> = self
            .classes
            .iter()
            .map(|&c| self.summary_value(&s, &[c]))
            .filter(|&v| v >= 0.0)
            .collect();
        if per.is_empty() {
            -1.0
        } else {
            per.iter().sum::<f64>() / per.len() as f64
        }
    }

    /// The 12-line fixed-width summary block.
    pub fn coco_text(&self, classes: &[BoxClass]) -> String {
        let t = &self.config.iou_thresholds;
        let range = format!("{:0.2}:{:0.2}", t[0], t[t.len() - 1]);
        let mut out = String::new();
        for s in SUMMARY_STATS.iter() {
            let (title, kind) = if s.precision {
                ("Average Precision", "(AP)")
            } else {
                ("Average Recall", "(AR)")
            };
            let iou = match s.iou {
                Some(v) => format!("{v:0.2}"),
                None => range.clone(),
            };
            let v = self.summary_value(s, classes);
            let _ = writeln!(
                out,
                " {:<18} {} @[ IoU={:<9} | area={:>6} | maxDets={:>3} ] = {:0.3}",
                title, kind, iou, s.area, s.max_dets, v
            );
        }
        out
    }

    /// Summary stats as CSV rows for each class and for the class mean.
    pub fn summary_csv(&self) -> String {
        let t = &self.config.iou_thresholds;
        let range = format!("{:0.2}:{:0.2}", t[0], t[t.len() - 1]);
        let mut out = String::from("metric,iou,area,max_dets,class,value\n");
        let mut groups: Vec<(String, Vec<BoxClass>)> = self
            .classes
            .iter()
            .map(|c| (c.to_string(), vec![*c]))
            .collect();
        groups.push(("mean".into(), self.classes.clone()));
        for (name, cls) in &groups {
            for s in SUMMARY_STATS.iter() {
                let iou = s
                    .iou
                    .map(|v| format!("{v:0.2}"))
                    .unwrap_or_else(|| range.clone());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{:.6}",
                    if s.precision { "AP" } else { "AR" },
                    iou,
                    s.area,
                    s.max_dets,
                    name,
                    self.summary_value(s, cls)
                );
            }
        }
        out
    }
}

/// Per-image evaluation of one class and area range at every threshold:
/// detections (top `max_det` by score) with match flags, plus the count of
/// in-range ground truth.
struct ImageEval {
    scores: Vec<f64>,
    /// [threshold][det]: (matched, ignored)
    flags: Vec<Vec<(bool, bool)>>,
    num_gt: usize,
}

fn evaluate_image(
    dets: &[BBox],
    gts: &[GroundTruthBox],
    cls: BoxClass,
    range: &AreaRange,
    thresholds: &[f64],
    max_det: usize,
) -> ImageEval {
    let dets: Vec<BBox> = dets.iter().filter(|d| d.cls == cls).copied().collect();
    let gts: Vec<GroundTruthBox> = gts.iter().filter(|g| g.cls == cls).copied().collect();
    let order: Vec<usize> = score_order(&dets).into_iter().take(max_det).collect();
    let gt_ignored: Vec<bool> = gts.iter().map(|g| !range.contains(g.rect.area())).collect();
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&d| gts.iter().map(|g| iou(&dets[d].rect, &g.rect)).collect())
        .collect();
    let mut flags = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut taken = vec![false; gts.len()];
        let mut per_det = Vec::with_capacity(order.len());
        for (row, &d) in order.iter().enumerate() {
            // In-range ground truth first; an out-of-range match only
            // neutralizes the detection.
            let mut matched = None;
            for want_ignored in [false, true] {
                let mut best: Option<(usize, f64)> = None;
                for g in 0..gts.len() {
                    if taken[g] || gt_ignored[g] != want_ignored {
                        continue;
                    }
                    let v = ious[row][g];
                    if v >= thr && best.is_none_or(|(_, b)| v > b) {
                        best = Some((g, v));
                    }
                }
                if let Some((g, _)) = best {
                    matched = Some(g);
                    break;
                }
            }
            match matched {
                Some(g) => {
                    taken[g] = true;
                    per_det.push((true, gt_ignored[g]));
                }
                None => per_det.push((false, !range.contains(dets[d].rect.area()))),
            }
        }
        flags.push(per_det);
    }
    ImageEval {
        scores: order.iter().map(|&d| dets[d].score).collect(),
        flags,
        num_gt: gt_ignored.iter().filter(|i| !**i).count(),
    }
}

/// Evaluates the corpus over the full grid of classes, IoU thresholds,
/// area ranges and detection caps.
pub fn eval_report(corpus: &EvalCorpus, config: &EvalConfig) -> Result<EvalReport, DetectError> {
    config.validate()?;
    let any_box = corpus
        .images
        .values()
        .any(|(d, g)| !d.is_empty() || !g.is_empty());
    if !any_box {
        return Err(DetectError::EmptyCorpus);
    }
    let classes = BoxClass::ALL.to_vec();
    let max_cap = *config.max_dets.iter().max().expect("validated");
    let nt = config.iou_thresholds.len();

    let cells: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|k| (0..config.area_ranges.len()).map(move |a| (k, a)))
        .collect();
    // Images iterate in id order, so the concatenation below is ordered by
    // (image id, in-image score rank) before the stable corpus-wide sort.
    let results: Vec<Vec<Vec<(Option<f64>, Option<f64>)>>> = cells
        .par_iter()
        .map(|&(k, a)| {
            let per_image: Vec<ImageEval> = corpus
                .images
                .values()
                .map(|(d, g)| {
                    evaluate_image(
                        d,
                        g,
                        classes[k],
                        &config.area_ranges[a],
                        &config.iou_thresholds,
                        max_cap,
                    )
                })
                .collect();
            let num_gt: usize = per_image.iter().map(|e| e.num_gt).sum();
            (0..nt)
                .map(|t| {
                    config
                        .max_dets
                        .iter()
                        .map(|&cap| {
                            let mut matches: Vec<ScoredMatch> = Vec::new();
                            for e in &per_image {
                                for (i, &(matched, ignored)) in
                                    e.flags[t].iter().enumerate().take(cap)
                                {
                                    if !ignored {
                                        matches.push(ScoredMatch {
                                            score: e.scores[i],
                                            true_positive: matched,
                                        });
                                    }
                                }
                            }
                            sort_by_score(&mut matches);
                            match pr_summary(&matches, num_gt) {
                                Some((recall, ap)) => (Some(ap), Some(recall)),
                                None => (None, None),
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let na = config.area_ranges.len();
    let nm = config.max_dets.len();
    let mut ap = vec![vec![vec![vec![None; nm]; na]; nt]; classes.len()];
    let mut ar = ap.clone();
    for (idx, &(k, a)) in cells.iter().enumerate() {
        for t in 0..nt {
            for m in 0..nm {
                let (p, r) = results[idx][t][m];
                ap[k][t][a][m] = p;
                ar[k][t][a][m] = r;
            }
        }
    }
    Ok(EvalReport {
        config: config.clone(),
        classes,
        ap,
        ar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Rect;

    fn corpus_perfect() -> EvalCorpus {
        let mut c = EvalCorpus::default();
        let sizes = [10.0, 50.0, 120.0];
        for img in 0..3 {
            let id = format!("img{img}");
            for (j, &s) in sizes.iter().enumerate() {
                let x = 200.0 * j as f64;
                let rect = Rect::new(x, 0.0, x + s, s).unwrap();
                let cls = if j % 2 == 0 {
                    BoxClass::Roof
                } else {
                    BoxClass::Pv
                };
                c.add_ground_truth(&id, GroundTruthBox { rect, cls });
                c.add_detection(&id, BBox::new(rect, cls, 1.0).unwrap());
            }
        }
        c
    }

    #[test]
    fn perfect_detector_scores_one_everywhere_defined() {
        let r = eval_report(&corpus_perfect(), &EvalConfig::default()).unwrap();
        let s = r.summary(&BoxClass::ALL);
        // AR with one detection per image cannot reach full recall (3 objects, 2 roofs).
        for (i, v) in s.iter().enumerate() {
            if i == 6 {
                continue;
            }
            assert!(*v == 1.0 || *v == -1.0, "stat {i} = {v}");
        }
        assert_eq!(r.map50(), 1.0);
    }

    #[test]
    fn silent_detector_scores_zero() {
        let mut c = corpus_perfect();
        for (d, _) in c.images.values_mut() {
            d.clear();
        }
        let r = eval_report(&c, &EvalConfig::default()).unwrap();
        assert_eq!(r.summary(&BoxClass::ALL)[0], 0.0);
        assert_eq!(r.summary(&BoxClass::ALL)[1], 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(
            eval_report(&EvalCorpus::default(), &EvalConfig::default()),
            Err(DetectError::EmptyCorpus)
        );
    }

    #[test]
    fn config_validation() {
        let mut c = EvalConfig::default();
        c.iou_thresholds = vec![0.5, 0.5];
        assert!(c.validate().is_err());
        c.iou_thresholds = vec![0.0, 0.5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_block_layout() {
        let r = eval_report(&corpus_perfect(), &EvalConfig::default()).unwrap();
        let text = r.coco_text(&BoxClass::ALL);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(
            lines[0],
            " Average Precision  (AP) @[ IoU=0.50:0.95 | area=   all | maxDets=100 ] = 1.000"
        );
        assert!(lines[4].contains("area=medium"));
        assert!(lines[6].starts_with(
            " Average Recall     (AR) @[ IoU=0.50:0.95 | area=   all | maxDets=  1 ]"
        ));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }

    #[test]
    fn recall_grows_with_detection_cap() {
        let mut c = corpus_perfect();
        for (d, _) in c.images.values_mut() {
            for (i, b) in d.iter_mut().enumerate() {
                b.score = 0.9 - 0.1 * i as f64;
            }
        }
        let r = eval_report(&c, &EvalConfig::default()).unwrap();
        let s = r.summary(&BoxClass::ALL);
        assert!(s[6] <= s[7] && s[7] <= s[8]);
    }
}
