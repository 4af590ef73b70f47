//! IoU, greedy matching, average recall and scale buckets.

use crate::error::{Error, Result};
use crate::mask::{BBox, Bitmap, Rle};

/// `|a ∩ b| / |a ∪ b|`, zero when both masks are empty.
pub fn iou_mask(a: &Rle, b: &Rle) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Usage(format!(
            "mask IoU of {}x{} and {}x{} masks",
            a.width, a.height, b.width, b.height
        )));
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

pub fn iou_bitmap(a: &Bitmap, b: &Bitmap) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Usage("mask IoU of differently sized masks".into()));
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

pub fn iou_box(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let inter = (ix * iy) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One-to-one assignment between ranked proposals and ground truths.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Per ground truth: matched proposal index, if any.
    pub gt_match: Vec<Option<usize>>,
    /// Per ground truth: IoU with its match, 0 when unmatched.
    pub gt_iou: Vec<f64>,
    pub proposal_used: Vec<bool>,
}

/// Candidate pairs with positive IoU in greedy order: IoU descending, then proposal
/// rank, then ground-truth id.
pub fn greedy_order(ious: &[Vec<f64>], gt_ids: &[u64]) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = ious
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().enumerate().map(move |(g, &v)| (p, g, v)))
        .filter(|&(_, _, v)| v > 0.0)
        .collect();
    pairs.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(a.0.cmp(&b.0))
            .then(gt_ids[a.1].cmp(&gt_ids[b.1]))
    });
    pairs
}

/// Greedy matching restricted to the first `budget` proposals, given pairs from
/// [`greedy_order`].
pub fn match_ordered(
    pairs: &[(usize, usize, f64)],
    proposals: usize,
    gts: usize,
    budget: usize,
) -> MatchResult {
    let n = proposals.min(budget);
    let mut r = MatchResult {
        gt_match: vec![None; gts],
        gt_iou: vec![0.0; gts],
        proposal_used: vec![false; n],
    };
    for &(p, g, v) in pairs {
        if p >= n || r.proposal_used[p] || r.gt_match[g].is_some() {
            continue;
        }
        r.proposal_used[p] = true;
        r.gt_match[g] = Some(p);
        r.gt_iou[g] = v;
    }
    r
}

/// Greedy one-to-one matching over an IoU matrix indexed `[proposal][gt]`.
pub fn greedy_match(ious: &[Vec<f64>], gt_ids: &[u64]) -> MatchResult {
    match_ordered(&greedy_order(ious, gt_ids), ious.len(), gt_ids.len(), usize::MAX)
}

/// Greedy matching of ranked proposals against ground truths under any IoU.
pub fn match_with<P, G>(
    proposals: &[P],
    gts: &[G],
    gt_ids: &[u64],
    mut iou: impl FnMut(&P, &G) -> f64,
) -> MatchResult {
    let m: Vec<Vec<f64>> = proposals
        .iter()
        .map(|p| gts.iter().map(|g| iou(p, g)).collect())
        .collect();
    match_ordered(&greedy_order(&m, gt_ids), proposals.len(), gts.len(), usize::MAX)
}

/// `0.50, 0.55, ..., 0.95`.
pub fn ar_thresholds() -> Vec<f64> {
    (0..10).map(|k| f64::from(50 + 5 * k) / 100.0).collect()
}

pub const AUC_BUDGETS: [usize; 13] = [1, 2, 3, 5, 10, 20, 30, 50, 100, 200, 300, 500, 1000];
pub const REPORT_BUDGETS: [usize; 3] = [10, 100, 1000];

pub fn recall_at(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v >= threshold).count() as f64 / ious.len() as f64
}

/// Recall averaged over [`ar_thresholds`]; `None` without ground truths.
pub fn average_recall(ious: &[f64]) -> Option<f64> {
    if ious.is_empty() {
        return None;
    }
    let t = ar_thresholds();
    Some(t.iter().map(|&th| recall_at(ious, th)).sum::<f64>() / t.len() as f64)
}

/// Mean of AR over a budget grid.
pub fn auc(ars: &[f64]) -> f64 {
    if ars.is_empty() {
        0.0
    } else {
        ars.iter().sum::<f64>() / ars.len() as f64
    }
}

pub fn recall_vs_iou(ious: &[f64], thresholds: &[f64]) -> Vec<f64> {
    thresholds.iter().map(|&t| recall_at(ious, t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScaleBucket {
    Small,
    Medium,
    Large,
}

impl ScaleBucket {
    pub const ALL: [ScaleBucket; 3] = [ScaleBucket::Small, ScaleBucket::Medium, ScaleBucket::Large];

    pub fn of(area: usize) -> ScaleBucket {
        if area < 32 * 32 {
            ScaleBucket::Small
        } else if area <= 96 * 96 {
            ScaleBucket::Medium
        } else {
            ScaleBucket::Large
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleBucket::Small => "small",
            ScaleBucket::Medium => "medium",
            ScaleBucket::Large => "large",
        }
    }
}

/// Indices of `areas` per bucket, small then medium then large.
pub fn stratify_by_scale(areas: &[usize]) -> [Vec<usize>; 3] {
    let mut out: [Vec<usize>; 3] = Default::default();
    for (i, &a) in areas.iter().enumerate() {
        out[ScaleBucket::of(a) as usize].push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_examples() {
        let a = BBox { x: 0, y: 0, w: 2, h: 2 };
        let b = BBox { x: 1, y: 1, w: 2, h: 2 };
        assert!((iou_box(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        let big = BBox { x: 0, y: 0, w: 4, h: 4 };
        let inner = BBox { x: 1, y: 1, w: 2, h: 2 };
        assert_eq!(iou_box(&big, &inner), 0.25);
    }

    #[test]
    fn ar_single_gt() {
        assert_eq!(average_recall(&[0.72]), Some(0.5));
        assert_eq!(average_recall(&[0.4, 0.4]), Some(0.0));
        assert_eq!(average_recall(&[]), None);
    }

    #[test]
    fn one_proposal_two_gts() {
        let m = greedy_match(&[vec![0.3, 0.6]], &[1, 2]);
        assert_eq!(m.gt_match, vec![None, Some(0)]);
    }

    #[test]
    fn buckets() {
        assert_eq!(ScaleBucket::of(1023), ScaleBucket::Small);
        assert_eq!(ScaleBucket::of(1024), ScaleBucket::Medium);
        assert_eq!(ScaleBucket::of(9216), ScaleBucket::Medium);
        assert_eq!(ScaleBucket::of(9217), ScaleBucket::Large);
    }
}
