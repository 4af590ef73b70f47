//! Dataset-level evaluation of a proposal file against annotations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{
    auc, average_recall, greedy_order, iou_box, iou_mask, match_ordered, recall_vs_iou,
    ScaleBucket, AUC_BUDGETS, REPORT_BUDGETS,
};
use crate::eval::plot::{line_plot, Series};
use crate::fsutil;
use crate::inference::ProposalRecord;
use crate::mask::{BBox, Rle};
use crate::sampler::SceneRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    #[default]
    Mask,
    Box,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub id: u64,
    pub mask: Rle,
    pub bbox: BBox,
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtImage {
    pub image_id: u64,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<GtInstance>,
}

impl GtImage {
    pub fn from_records(records: &[SceneRecord], categories: Option<&[u32]>) -> Vec<GtImage> {
        records
            .iter()
            .map(|r| GtImage {
                image_id: r.id,
                width: r.width,
                height: r.height,
                instances: r
                    .annotations
                    .iter()
                    .filter(|a| categories.is_none_or(|c| c.contains(&a.category_id)))
                    .map(|a| GtInstance {
                        id: a.id,
                        mask: Rle {
                            width: r.width,
                            height: r.height,
                            counts: a.rle.clone(),
                        },
                        bbox: a.bbox,
                        area: a.area,
                    })
                    .collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub report_budgets: Vec<usize>,
    pub auc_budgets: Vec<usize>,
    pub curve_thresholds: Vec<f64>,
    pub iou: IouKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            report_budgets: REPORT_BUDGETS.to_vec(),
            auc_budgets: AUC_BUDGETS.to_vec(),
            curve_thresholds: (0..=10).map(|k| f64::from(50 + 5 * k) / 100.0).collect(),
            iou: IouKind::Mask,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleCounts {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleValues {
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

impl ScaleValues {
    fn get(&self, b: ScaleBucket) -> Option<f64> {
        match b {
            ScaleBucket::Small => self.small,
            ScaleBucket::Medium => self.medium,
            ScaleBucket::Large => self.large,
        }
    }

    fn set(&mut self, b: ScaleBucket, v: Option<f64>) {
        match b {
            ScaleBucket::Small => self.small = v,
            ScaleBucket::Medium => self.medium = v,
            ScaleBucket::Large => self.large = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub budget: usize,
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou: IouKind,
    pub images: usize,
    pub proposals: usize,
    pub gt_counts: ScaleCounts,
    /// AR per budget; absent when there are no ground truths.
    pub ar_at: BTreeMap<usize, f64>,
    pub ar_by_scale: BTreeMap<usize, ScaleValues>,
    pub report_budgets: Vec<usize>,
    pub auc_budgets: Vec<usize>,
    pub auc: Option<f64>,
    pub auc_by_scale: ScaleValues,
    pub recall_vs_iou: Vec<RecallCurve>,
}

/// Matches every image's ranked proposals at every budget and aggregates recall.
pub fn evaluate(gts: &[GtImage], proposals: &[ProposalRecord], config: &EvalConfig) -> Result<EvalReport> {
    let by_id: HashMap<u64, usize> = gts.iter().enumerate().map(|(i, g)| (g.image_id, i)).collect();
    if by_id.len() != gts.len() {
        return Err(Error::Data("annotation file repeats an image id".into()));
    }
    let missing: BTreeSet<u64> = proposals
        .iter()
        .map(|p| p.image_id)
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "proposals reference image ids absent from the annotations: {missing:?}"
        )));
    }
    let mut grouped: Vec<Vec<&ProposalRecord>> = vec![Vec::new(); gts.len()];
    for p in proposals {
        grouped[by_id[&p.image_id]].push(p);
    }
    let budgets: BTreeSet<usize> = config
        .report_budgets
        .iter()
        .chain(&config.auc_budgets)
        .copied()
        .collect();
    let max_budget = budgets.iter().next_back().copied().unwrap_or(0);

    let mut ious: BTreeMap<usize, Vec<f64>> = budgets.iter().map(|&b| (b, Vec::new())).collect();
    let mut areas = Vec::new();
    for (g, props) in gts.iter().zip(grouped.iter_mut()) {
        props.sort_by(|a, b| b.score.total_cmp(&a.score));
        props.truncate(max_budget);
        let masks: Vec<Rle> = props
            .iter()
            .map(|p| {
                Rle::from_counts(g.width, g.height, p.rle.clone()).map_err(|e| {
                    Error::Data(format!("proposal for image {}: {e}", g.image_id))
                })
            })
            .collect::<Result<_>>()?;
        let matrix: Vec<Vec<f64>> = props
            .iter()
            .zip(&masks)
            .map(|(p, m)| {
                g.instances
                    .iter()
                    .map(|gt| match config.iou {
                        IouKind::Mask => iou_mask(m, &gt.mask),
                        IouKind::Box => Ok(iou_box(&p.bbox, &gt.bbox)),
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let ids: Vec<u64> = g.instances.iter().map(|i| i.id).collect();
        let order = greedy_order(&matrix, &ids);
        for &b in &budgets {
            let m = match_ordered(&order, props.len(), ids.len(), b);
            ious.get_mut(&b).expect("budget present").extend(m.gt_iou);
        }
        areas.extend(g.instances.iter().map(|i| i.area));
    }

    let mut counts = ScaleCounts {
        total: areas.len(),
        ..Default::default()
    };
    for &a in &areas {
        match ScaleBucket::of(a) {
            ScaleBucket::Small => counts.small += 1,
            ScaleBucket::Medium => counts.medium += 1,
            ScaleBucket::Large => counts.large += 1,
        }
    }
    let bucket_of: Vec<ScaleBucket> = areas.iter().map(|&a| ScaleBucket::of(a)).collect();
    let mut ar_at = BTreeMap::new();
    let mut ar_by_scale = BTreeMap::new();
    for (&b, v) in &ious {
        if let Some(ar) = average_recall(v) {
            ar_at.insert(b, ar);
        }
        let mut sv = ScaleValues::default();
        for bucket in ScaleBucket::ALL {
            let sub: Vec<f64> = v
                .iter()
                .zip(&bucket_of)
                .filter(|(_, k)| **k == bucket)
                .map(|(x, _)| *x)
                .collect();
            sv.set(bucket, average_recall(&sub));
        }
        ar_by_scale.insert(b, sv);
    }
    let auc_of = |f: &dyn Fn(usize) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = config.auc_budgets.iter().map(|&b| f(b)).collect();
        vals.filter(|v| !v.is_empty()).map(|v| auc(&v))
    };
    let total_auc = auc_of(&|b| ar_at.get(&b).copied());
    let mut auc_by_scale = ScaleValues::default();
    for bucket in ScaleBucket::ALL {
        auc_by_scale.set(bucket, auc_of(&|b| ar_by_scale[&b].get(bucket)));
    }
    let recall_curves = config
        .report_budgets
        .iter()
        .map(|&b| RecallCurve {
            budget: b,
            thresholds: config.curve_thresholds.clone(),
            recall: recall_vs_iou(&ious[&b], &config.curve_thresholds),
        })
        .collect();
    Ok(EvalReport {
        iou: config.iou,
        images: gts.len(),
        proposals: proposals.len(),
        gt_counts: counts,
        ar_at,
        ar_by_scale,
        report_budgets: config.report_budgets.clone(),
        auc_budgets: config.auc_budgets.clone(),
        auc: total_auc,
        auc_by_scale,
        recall_vs_iou: recall_curves,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn ar(&self, budget: usize) -> Option<f64> {
        self.ar_at.get(&budget).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn from_json(text: &str, location: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("{location} line {} column {}", e.line(), e.column()), e.to_string())
        })
    }

    /// `budget,ar,ar_small,ar_medium,ar_large` for every evaluated budget.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("budget,ar,ar_small,ar_medium,ar_large\n");
        for (&b, sv) in &self.ar_by_scale {
            out.push_str(&format!(
                "{b},{},{},{},{}\n",
                fmt_opt(self.ar(b)),
                fmt_opt(sv.small),
                fmt_opt(sv.medium),
                fmt_opt(sv.large)
            ));
        }
        out
    }

    /// AR against budget on a log axis, overall and per scale bucket.
    pub fn ar_plot(&self) -> String {
        let mut series = vec![Series {
            name: "all".into(),
            points: self.ar_at.iter().map(|(&b, &v)| (b as f64, v)).collect(),
        }];
        for bucket in ScaleBucket::ALL {
            let pts: Vec<(f64, f64)> = self
                .ar_by_scale
                .iter()
                .filter_map(|(&b, sv)| sv.get(bucket).map(|v| (b as f64, v)))
                .collect();
            if !pts.is_empty() {
                series.push(Series {
                    name: bucket.name().into(),
                    points: pts,
                });
            }
        }
        line_plot("Average recall", "proposals", "AR", &series, true)
    }

    pub fn recall_plot(&self) -> String {
        let series: Vec<Series> = self
            .recall_vs_iou
            .iter()
            .map(|c| Series {
                name: format!("{} proposals", c.budget),
                points: c.thresholds.iter().copied().zip(c.recall.iter().copied()).collect(),
            })
            .collect();
        line_plot("Recall vs IoU", "IoU", "recall", &series, false)
    }

    /// Writes `eval.json`, `eval.csv`, `ar_vs_budget.svg` and `recall_vs_iou.svg`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fsutil::create_dir_all(dir)?;
        fsutil::write_atomic(&dir.join("eval.json"), self.to_json().as_bytes())?;
        fsutil::write_atomic(&dir.join("eval.csv"), self.to_csv().as_bytes())?;
        self.write_plots(dir)
    }

    pub fn write_plots(&self, dir: &Path) -> Result<()> {
        fsutil::write_atomic(&dir.join("ar_vs_budget.svg"), self.ar_plot().as_bytes())?;
        fsutil::write_atomic(&dir.join("recall_vs_iou.svg"), self.recall_plot().as_bytes())
    }
}
