//! Recall metrics for ranked proposals: IoU, greedy matching, AR, AUC and scale buckets.

mod metrics;
mod plot;
mod report;

pub use metrics::{
    ar_thresholds, auc, average_recall, greedy_match, greedy_order, iou_bitmap, iou_box, iou_mask,
    match_ordered, match_with, recall_at, recall_vs_iou, stratify_by_scale, MatchResult,
    ScaleBucket, AUC_BUDGETS, REPORT_BUDGETS,
};
pub use plot::{line_plot, Series};
pub use report::{
    evaluate, EvalConfig, EvalReport, GtImage, GtInstance, IouKind, RecallCurve, ScaleCounts,
    ScaleValues,
};
