//! Whole-level evaluation with every fully connected layer run as a convolution.
//!
//! A level of side `L` (a multiple of 32) is normalised and padded on each side by
//! `(patch_size - 16) / 2 + context` pixels of the mean colour, so cell `g` of the
//! `L / 16` grid sees the patch whose top-left corner sits at level pixel
//! `16 g - (patch_size - 16) / 2` and whose centre is at `16 g + 8`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{ModelParams, SegClassifier};
use crate::nn::{conv2d, maxpool2x2, relu_in_place, LayerParams};
use crate::sampler::normalize;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-cell outputs of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOutput<T> {
    /// `rows x cols x mask_out x mask_out` mask logits.
    pub mask_logits: Tensor<T>,
    /// `rows x cols` score logits.
    pub scores: Tensor<T>,
}

impl<T: Scalar> DenseOutput<T> {
    pub fn grid(&self) -> (usize, usize) {
        (self.scores.shape()[0], self.scores.shape()[1])
    }

    /// Mask logits of one cell, row-major `mask_out x mask_out`.
    pub fn cell_mask(&self, gi: usize, gj: usize) -> &[T] {
        let (_, cols) = self.grid();
        let m2 = self.mask_logits.shape()[2] * self.mask_logits.shape()[3];
        let at = (gi * cols + gj) * m2;
        &self.mask_logits.data()[at..at + m2]
    }

    pub fn cell_score(&self, gi: usize, gj: usize) -> T {
        self.scores.data()[gi * self.grid().1 + gj]
    }
}

/// Heads reshaped into convolution kernels, built once per model.
#[derive(Clone, Debug)]
pub struct DenseModel<'a, T> {
    params: &'a ModelParams<T>,
    seg_layers: Vec<LayerParams<T>>,
    fc1: LayerParams<T>,
    fc2: LayerParams<T>,
    out: LayerParams<T>,
}

fn as_conv<T: Scalar>(l: &LayerParams<T>, cin: usize, k: usize) -> Result<LayerParams<T>> {
    let cout = l.outputs();
    Ok(LayerParams::new(l.weight.clone().reshape(&[cout, cin, k, k])?, l.bias.clone()))
}

/// Moves channels last: `C x H x W` to `H x W x C`.
fn channels_last<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = t.dims3()?;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(src[(ch * h + y) * w + x]);
            }
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}

impl<'a, T: Scalar> DenseModel<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Result<Self> {
        let cfg = params.config();
        let g = params.geometry();
        let n = g.feature_size;
        let seg_layers = match &params.seg_classifier {
            SegClassifier::LowRank { reduce, expand } => vec![
                as_conv(reduce, cfg.seg_channels, n)?,
                as_conv(expand, cfg.rank, 1)?,
            ],
            SegClassifier::Full(full) => vec![as_conv(full, cfg.seg_channels, n)?],
        };
        Ok(DenseModel {
            params,
            seg_layers,
            fc1: as_conv(&params.score_fc1, g.trunk_channels, n / 2)?,
            fc2: as_conv(&params.score_fc2, cfg.score_hidden.0, 1)?,
            out: as_conv(&params.score_out, cfg.score_hidden.1, 1)?,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params
    }

    /// `mask_out^2 x rows x cols` logits from a trunk feature map.
    fn seg_grid(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = conv2d(features, &self.params.seg_conv, 1, 0)?;
        relu_in_place(&mut x);
        for l in &self.seg_layers {
            x = conv2d(&x, l, 1, 0)?;
        }
        Ok(x)
    }

    /// Score logits at every cell of the mask grid.
    ///
    /// The 2x2 pooling is run at each of the four offsets of the feature map and the
    /// four half-resolution results are interleaved: cell `g` comes from offset `g % 2`,
    /// position `g / 2`.
    pub fn interleave_scores(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, fh, fw) = features.dims3()?;
        let n = self.params.geometry().feature_size;
        if fh < n || fw < n {
            return Err(Error::Config(format!(
                "feature map {fh}x{fw} is smaller than one {n}x{n} patch window"
            )));
        }
        let (gh, gw) = (fh - n + 1, fw - n + 1);
        let mut grid = vec![T::zero(); gh * gw];
        for oi in 0..2.min(gh) {
            for oj in 0..2.min(gw) {
                let h = (fh - oi) / 2 * 2;
                let w = (fw - oj) / 2 * 2;
                let crop = features.crop3(oi, oj, h, w)?;
                let (pooled, _) = maxpool2x2(&crop)?;
                let mut x = conv2d(&pooled, &self.fc1, 1, 0)?;
                relu_in_place(&mut x);
                x = conv2d(&x, &self.fc2, 1, 0)?;
                relu_in_place(&mut x);
                let s = conv2d(&x, &self.out, 1, 0)?;
                let (_, sh, sw) = s.dims3()?;
                for qi in 0..sh {
                    for qj in 0..sw {
                        let (gi, gj) = (2 * qi + oi, 2 * qj + oj);
                        if gi < gh && gj < gw {
                            grid[gi * gw + gj] = s.data()[qi * sw + qj];
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[gh, gw], grid)
    }

    /// Both grids for a context-included input; an input exactly one model window in
    /// size gives a 1x1 grid.
    pub fn grids(&self, input: &Tensor<T>) -> Result<DenseOutput<T>> {
        let features = self.params.trunk_forward(input)?;
        let seg = self.seg_grid(&features)?;
        let scores = self.interleave_scores(&features)?;
        let (gh, gw) = (scores.shape()[0], scores.shape()[1]);
        let m = self.params.config().mask_out;
        let mask_logits = channels_last(&seg)?.reshape(&[gh, gw, m, m])?;
        mask_logits.ensure_finite("dense mask logits")?;
        scores.ensure_finite("dense scores")?;
        Ok(DenseOutput { mask_logits, scores })
    }

    /// Grids for a pyramid level.
    pub fn apply(&self, level: &Image) -> Result<DenseOutput<T>> {
        self.grids(&pad_level(self.params, level)?)
    }
}

/// Normalised level with the border that centres one cell per 16 level pixels.
pub fn pad_level<T: Scalar>(params: &ModelParams<T>, level: &Image) -> Result<Tensor<T>> {
    let (w, h) = (level.width(), level.height());
    if w == 0 || h == 0 || w % 32 != 0 || h % 32 != 0 {
        return Err(Error::Config(format!(
            "pyramid level {w}x{h} must have sides that are positive multiples of 32"
        )));
    }
    let border = level_border(params);
    let cfg = params.config();
    let mut t = level.to_tensor::<T>();
    normalize(&mut t, cfg.input_mean, cfg.input_std);
    let (pw, ph) = (w + 2 * border, h + 2 * border);
    let mut out = vec![T::zero(); 3 * pw * ph];
    for c in 0..3 {
        for y in 0..h {
            let src = &t.data()[(c * h + y) * w..(c * h + y + 1) * w];
            let at = (c * ph + y + border) * pw + border;
            out[at..at + w].copy_from_slice(src);
        }
    }
    Tensor::from_vec(&[3, ph, pw], out)
}

/// Padding added around a level: the patch margin plus the trunk context.
pub fn level_border<T: Scalar>(params: &ModelParams<T>) -> usize {
    let g = params.geometry();
    (g.patch_size - 16) / 2 + g.context
}

/// Dense evaluation of one pyramid level.
pub fn dense_apply<T: Scalar>(params: &ModelParams<T>, level: &Image) -> Result<DenseOutput<T>> {
    DenseModel::new(params)?.apply(level)
}

/// Dense evaluation of a context-included input tensor.
pub fn dense_grids<T: Scalar>(params: &ModelParams<T>, input: &Tensor<T>) -> Result<DenseOutput<T>> {
    DenseModel::new(params)?.grids(input)
}

/// Reference evaluation: crops every `stride`-aligned model window of `input` and runs
/// the per-patch model on it.
pub fn patchwise_grids<T: Scalar>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    stride: usize,
) -> Result<DenseOutput<T>> {
    let (_, h, w) = input.dims3()?;
    let size = params.geometry().input_size;
    if h < size || w < size || stride == 0 {
        return Err(Error::Config(format!(
            "input {h}x{w} holds no {size}x{size} window at stride {stride}"
        )));
    }
    let (gh, gw) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let m = params.config().mask_out;
    let mut masks = Vec::with_capacity(gh * gw * m * m);
    let mut scores = Vec::with_capacity(gh * gw);
    // dropout is off, so this generator is never drawn from
    let mut rng = crate::rng::stream(0, "patchwise", 0);
    for gi in 0..gh {
        for gj in 0..gw {
            let window = input.crop3(gi * stride, gj * stride, size, size)?;
            let features = params.trunk_forward(&window)?;
            masks.extend_from_slice(params.segmentation_logits(&features)?.data());
            scores.push(params.scoring_head(&features, false, &mut rng)?);
        }
    }
    Ok(DenseOutput {
        mask_logits: Tensor::from_vec(&[gh, gw, m, m], masks)?,
        scores: Tensor::from_vec(&[gh, gw], scores)?,
    })
}

/// [`patchwise_grids`] on a padded pyramid level.
pub fn patchwise_oracle<T: Scalar>(params: &ModelParams<T>, level: &Image, stride: usize) -> Result<DenseOutput<T>> {
    patchwise_grids(params, &pad_level(params, level)?, stride)
}
