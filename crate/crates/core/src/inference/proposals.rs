//! Proposals from dense outputs: paste, binarise, rank.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::Image;
use crate::inference::dense::{DenseModel, DenseOutput};
use crate::inference::pyramid::{build_pyramid, PyramidConfig};
use crate::mask::{BBox, Bitmap, Rle};
use crate::scalar::{sigmoid, Scalar};

/// Dense output of one level with its resampling factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutput<T> {
    pub scale: f64,
    pub sx: f64,
    pub sy: f64,
    pub output: DenseOutput<T>,
}

/// A binary mask in original image coordinates with its score and source cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub image_id: u64,
    pub score: f64,
    pub mask: Rle,
    pub bbox: BBox,
    pub scale: f64,
    pub cell: (usize, usize),
}

/// Centre of grid cell `g` in level pixels.
pub fn cell_center(g: usize, stride: usize) -> f64 {
    (g * stride) as f64 + stride as f64 / 2.0
}

/// Interpolation taps along one axis: for each original pixel in the patch footprint,
/// `(pixel, t0, t1, weight)` into the `mask_out` grid.
fn axis_taps(
    origin: f64,
    factor: f64,
    patch: usize,
    mask_out: usize,
    extent: usize,
) -> Vec<(usize, usize, usize, f64)> {
    let lo = ((origin / factor) - 0.5).floor().max(0.0) as usize;
    let hi = (((origin + patch as f64) / factor) + 0.5).ceil().min(extent as f64) as usize;
    let ratio = if patch > 1 {
        (mask_out - 1) as f64 / (patch - 1) as f64
    } else {
        0.0
    };
    let mut taps = Vec::new();
    for x in lo..hi {
        let p = (x as f64 + 0.5) * factor - origin - 0.5;
        if p < -0.5 || p >= patch as f64 - 0.5 {
            continue;
        }
        let t = p.clamp(0.0, (patch - 1) as f64) * ratio;
        let t0 = (t.floor() as usize).min(mask_out - 1);
        let t1 = (t0 + 1).min(mask_out - 1);
        taps.push((x, t0, t1, t - t0 as f64));
    }
    taps
}

/// Probability mask of one cell pasted into a `width x height` image and thresholded.
#[allow(clippy::too_many_arguments)]
pub fn paste_cell<T: Scalar>(
    logits: &[T],
    mask_out: usize,
    patch: usize,
    cell: (usize, usize),
    sx: f64,
    sy: f64,
    width: usize,
    height: usize,
    threshold: f64,
) -> Bitmap {
    let prob: Vec<f64> = logits.iter().map(|&v| sigmoid(v.to_f64_lossy())).collect();
    let half = patch as f64 / 2.0;
    let ox = cell_center(cell.1, 16) - half;
    let oy = cell_center(cell.0, 16) - half;
    let cols = axis_taps(ox, sx, patch, mask_out, width);
    let rows = axis_taps(oy, sy, patch, mask_out, height);
    let mut m = Bitmap::new(width, height);
    for &(y, r0, r1, ay) in &rows {
        for &(x, c0, c1, ax) in &cols {
            let top = prob[r0 * mask_out + c0] * (1.0 - ax) + prob[r0 * mask_out + c1] * ax;
            let bot = prob[r1 * mask_out + c0] * (1.0 - ax) + prob[r1 * mask_out + c1] * ax;
            if top * (1.0 - ay) + bot * ay >= threshold {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// Every non-empty proposal of every level, in level then row-major cell order.
pub fn extract_proposals<T: Scalar>(
    levels: &[LevelOutput<T>],
    width: usize,
    height: usize,
    patch: usize,
    threshold: f64,
    image_id: u64,
) -> Vec<Proposal> {
    let mut out = Vec::new();
    for level in levels {
        let (gh, gw) = level.output.grid();
        let m = level.output.mask_logits.shape()[2];
        for gi in 0..gh {
            for gj in 0..gw {
                let mask = paste_cell(
                    level.output.cell_mask(gi, gj),
                    m,
                    patch,
                    (gi, gj),
                    level.sx,
                    level.sy,
                    width,
                    height,
                    threshold,
                );
                let Some(bbox) = mask.bbox() else { continue };
                out.push(Proposal {
                    image_id,
                    score: level.output.cell_score(gi, gj).to_f64_lossy(),
                    mask: mask.to_rle(),
                    bbox,
                    scale: level.scale,
                    cell: (gi, gj),
                });
            }
        }
    }
    out
}

fn rank_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.scale.total_cmp(&b.scale))
        .then(a.cell.cmp(&b.cell))
}

/// Top `n` by descending score; ties go to the smaller `(scale, gi, gj)`.
pub fn rank_proposals(mut proposals: Vec<Proposal>, n: usize) -> Vec<Proposal> {
    proposals.sort_by(rank_order);
    proposals.truncate(n);
    proposals
}

pub fn mask_to_box(mask: &Rle) -> Result<BBox> {
    mask.bbox()
        .ok_or_else(|| Error::Usage("cannot box an empty mask".into()))
}

/// Pyramid, dense evaluation, pasting and ranking for one image.
pub fn propose<T: Scalar>(
    model: &DenseModel<'_, T>,
    image: &Image,
    config: &PyramidConfig,
    image_id: u64,
) -> Result<Vec<Proposal>> {
    let patch = model.params().config().patch_size;
    let levels = build_pyramid(image, config, patch)?;
    let outputs = levels
        .iter()
        .map(|l| {
            Ok(LevelOutput {
                scale: l.scale,
                sx: l.sx,
                sy: l.sy,
                output: model.apply(&l.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all = extract_proposals(
        &outputs,
        image.width(),
        image.height(),
        patch,
        config.mask_threshold,
        image_id,
    );
    Ok(rank_proposals(all, config.max_proposals))
}

/// One entry of the proposal file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub image_id: u64,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub rle: Vec<u32>,
    pub scale: f64,
    pub cell: [usize; 2],
}

impl From<&Proposal> for ProposalRecord {
    fn from(p: &Proposal) -> Self {
        ProposalRecord {
            image_id: p.image_id,
            score: p.score,
            bbox: p.bbox,
            rle: p.mask.counts.clone(),
            scale: p.scale,
            cell: [p.cell.0, p.cell.1],
        }
    }
}

pub fn save_proposals(records: &[ProposalRecord], path: &Path) -> Result<()> {
    let text = serde_json::to_string(records).expect("records serialise");
    fsutil::write_atomic(path, text.as_bytes())
}

pub fn load_proposals(path: &Path) -> Result<Vec<ProposalRecord>> {
    let text = fsutil::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::parse(
            format!("{} line {} column {}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    })
}
