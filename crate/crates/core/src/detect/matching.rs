use super::{iou, score_order, BBox, GroundTruthBox};

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive { gt: usize },
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// One label per detection, in input order.
    pub labels: Vec<MatchLabel>,
    /// Ground-truth boxes left unmatched.
    pub missed: usize,
}

impl MatchOutcome {
    pub fn true_positives(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, MatchLabel::TruePositive { .. }))
            .count()
    }

    pub fn false_positives(&self) -> usize {
        self.labels.len() - self.true_positives()
    }
}

/// Greedy one-to-one matching. Detections are visited by descending score;
/// each takes the unmatched same-class ground truth with the highest IoU,
/// provided that IoU reaches `iou_thr`. Equal IoUs go to the lower gt index.
pub fn match_detections(dets: &[BBox], gts: &[GroundTruthBox], iou_thr: f64) -> MatchOutcome {
    let mut taken = vec![false; gts.len()];
    let mut labels = vec![MatchLabel::FalsePositive; dets.len()];
    for d in score_order(dets) {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.cls != det.cls {
                continue;
            }
            let v = iou(&det.rect, &gt.rect);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            labels[d] = MatchLabel::TruePositive { gt: g };
        }
    }
    let missed = taken.iter().filter(|t| !**t).count();
    MatchOutcome { labels, missed }
}

/// A detection's score and whether it matched, as accumulated corpus-wide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub true_positive: bool,
}

/// Sorts descending by score; the sort is stable, so callers control how
/// equal scores are ordered.
pub(crate) fn sort_by_score(matches: &mut [ScoredMatch]) {
    matches.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// 101-point interpolated average precision. `None` when there is no ground
/// truth to recall.
pub fn average_precision(matches: &[ScoredMatch], num_gt: usize) -> Option<f64> {
    let mut sorted = matches.to_vec();
    sort_by_score(&mut sorted);
    let (_, ap) = pr_summary(&sorted, num_gt)?;
    Some(ap)
}

/// (final recall, AP) for matches already in score order.
pub(crate) fn pr_summary(sorted: &[ScoredMatch], num_gt: usize) -> Option<(f64, f64)> {
    if num_gt == 0 {
        return None;
    }
    let n = sorted.len();
    let mut recall = Vec::with_capacity(n);
    let mut precision = Vec::with_capacity(n);
    let (mut tp, mut fp) = (0usize, 0usize);
    for m in sorted {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // Precision envelope: running maximum from the right.
    for i in (0..n.saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < n {
            sum += precision[idx];
        }
    }
    let final_recall = recall.last().copied().unwrap_or(0.0);
    Some((final_recall, sum / 101.0))
}
