//! Per-patch forward and backward passes of the trunk and both heads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::TrunkLayer;
use crate::model::params::{ModelGrads, ModelParams, SegClassifier};
use crate::nn::conv::conv2d_backward_with;
use crate::nn::{
    bilinear_upsample, conv2d, conv2d_backward, dropout, dropout_backward, linear, linear_backward,
    maxpool2x2, maxpool2x2_backward, relu_backward, relu_in_place, LayerGrads, PoolIndices,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum TrunkStep<T> {
    Conv { input: Tensor<T>, output: Tensor<T> },
    Pool(PoolIndices),
}

/// Saved trunk activations.
#[derive(Clone, Debug)]
pub struct TrunkTrace<T> {
    steps: Vec<TrunkStep<T>>,
}

/// Saved segmentation-branch activations.
#[derive(Clone, Debug)]
pub struct SegTrace<T> {
    features: Tensor<T>,
    /// ReLU output of the 1x1 convolution.
    conv_out: Tensor<T>,
    /// Bottleneck activations (low-rank variant only).
    hidden: Option<Tensor<T>>,
}

/// Saved scoring-branch activations.
#[derive(Clone, Debug)]
pub struct ScoreTrace<T> {
    pool: PoolIndices,
    pooled: Tensor<T>,
    act1: Tensor<T>,
    mask1: Option<Tensor<T>>,
    drop1: Tensor<T>,
    act2: Tensor<T>,
    mask2: Option<Tensor<T>>,
    drop2: Tensor<T>,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub features: Tensor<T>,
    /// `mask_out x mask_out` logits, present when the segmentation branch ran.
    pub mask_logits: Option<Tensor<T>>,
    pub score_logit: Option<T>,
    trunk: Option<TrunkTrace<T>>,
    seg: Option<SegTrace<T>>,
    score: Option<ScoreTrace<T>>,
}

/// Heads to evaluate in [`ModelParams::forward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub segmentation: bool,
    pub scoring: bool,
}

impl Heads {
    pub const BOTH: Heads = Heads {
        segmentation: true,
        scoring: true,
    };
    pub const SEGMENTATION: Heads = Heads {
        segmentation: true,
        scoring: false,
    };
    pub const SCORING: Heads = Heads {
        segmentation: false,
        scoring: true,
    };
}

impl<T: Scalar> ModelParams<T> {
    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (c, h, w) = input.dims3()?;
        let g = self.geometry();
        if c != self.config().input_channels {
            return Err(Error::Config(format!(
                "model takes {} input channels, got {c}",
                self.config().input_channels
            )));
        }
        for side in [h, w] {
            let inner = side.checked_sub(2 * g.context).unwrap_or(0);
            if inner == 0 || inner % 16 != 0 {
                return Err(Error::Usage(format!(
                    "input side {side} must be 2*{} context plus a positive multiple of 16",
                    g.context
                )));
            }
        }
        Ok(())
    }

    fn trunk_run(&self, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<TrunkTrace<T>>)> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut steps = Vec::new();
        let mut conv_idx = 0;
        for layer in &self.config().trunk {
            match layer {
                TrunkLayer::Conv(_) => {
                    let mut y = conv2d(&x, &self.trunk[conv_idx], 1, 0)?;
                    relu_in_place(&mut y);
                    conv_idx += 1;
                    if keep {
                        steps.push(TrunkStep::Conv {
                            input: std::mem::replace(&mut x, y.clone()),
                            output: y,
                        });
                    } else {
                        x = y;
                    }
                }
                TrunkLayer::Pool => {
                    let (y, idx) = maxpool2x2(&x)?;
                    if keep {
                        steps.push(TrunkStep::Pool(idx));
                    }
                    x = y;
                }
            }
        }
        x.ensure_finite("trunk features")?;
        Ok((x, keep.then_some(TrunkTrace { steps })))
    }

    /// Shared trunk: maps a `3 x (16n + 2c) x (16m + 2c)` input to `C x n x m` features.
    pub fn trunk_forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trunk_run(input, false)?.0)
    }

    pub fn trunk_forward_traced(&self, input: &Tensor<T>) -> Result<(Tensor<T>, TrunkTrace<T>)> {
        let (x, t) = self.trunk_run(input, true)?;
        Ok((x, t.expect("trace kept")))
    }

    /// Gradients of the trunk layers, in order, given the gradient at its output.
    pub fn trunk_backward(&self, trace: &TrunkTrace<T>, grad_features: &Tensor<T>) -> Result<Vec<LayerGrads<T>>> {
        let mut g = grad_features.clone();
        let mut grads = Vec::with_capacity(self.trunk.len());
        let mut conv_idx = self.trunk.len();
        let first_conv = trace
            .steps
            .iter()
            .position(|s| matches!(s, TrunkStep::Conv { .. }));
        for (pos, step) in trace.steps.iter().enumerate().rev() {
            match step {
                TrunkStep::Pool(idx) => g = maxpool2x2_backward(&g, idx)?,
                TrunkStep::Conv { input, output } => {
                    conv_idx -= 1;
                    let gz = relu_backward(&g, output)?;
                    let need_input = Some(pos) != first_conv;
                    let (gi, gp) = conv2d_backward_with(&gz, input, &self.trunk[conv_idx], 1, 0, need_input)?;
                    grads.push(gp);
                    if let Some(gi) = gi {
                        g = gi;
                    }
                }
            }
        }
        grads.reverse();
        Ok(grads)
    }

    fn seg_run(&self, features: &Tensor<T>) -> Result<(Tensor<T>, SegTrace<T>)> {
        let mut conv_out = conv2d(features, &self.seg_conv, 1, 0)?;
        relu_in_place(&mut conv_out);
        let m = self.config().mask_out;
        let (logits, hidden) = match &self.seg_classifier {
            SegClassifier::LowRank { reduce, expand } => {
                let h = linear(&conv_out, reduce)?;
                (linear(&h, expand)?, Some(h))
            }
            SegClassifier::Full(full) => (linear(&conv_out, full)?, None),
        };
        let logits = logits.reshape(&[m, m])?;
        logits.ensure_finite("mask logits")?;
        Ok((
            logits,
            SegTrace {
                features: features.clone(),
                conv_out,
                hidden,
            },
        ))
    }

    /// `mask_out x mask_out` segmentation logits for one patch's features.
    pub fn segmentation_logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.seg_run(features)?.0)
    }

    /// Segmentation logits bilinearly upsampled to `patch_size x patch_size`.
    pub fn segmentation_head(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.config().patch_size;
        bilinear_upsample(&self.segmentation_logits(features)?, p, p)
    }

    fn seg_backward(&self, trace: &SegTrace<T>, grad_logits: &Tensor<T>) -> Result<(Tensor<T>, Vec<LayerGrads<T>>)> {
        let m = self.config().mask_out;
        if grad_logits.shape() != [m, m] {
            return Err(Error::Config(format!(
                "mask gradient must be {m}x{m}, got {:?}",
                grad_logits.shape()
            )));
        }
        let flat = grad_logits.clone().reshape(&[m * m])?;
        let mut grads = Vec::new();
        let g_conv_out = match &self.seg_classifier {
            SegClassifier::LowRank { reduce, expand } => {
                let hidden = trace.hidden.as_ref().ok_or_else(|| {
                    Error::Usage("segmentation trace lacks bottleneck activations".into())
                })?;
                let ge = linear_backward(&flat, hidden, expand)?;
                let gr = linear_backward(&ge.input, &trace.conv_out, reduce)?;
                grads.push(gr.params);
                grads.push(ge.params);
                gr.input
            }
            SegClassifier::Full(full) => {
                let gf = linear_backward(&flat, &trace.conv_out, full)?;
                grads.push(gf.params);
                gf.input
            }
        };
        let gz = relu_backward(&g_conv_out, &trace.conv_out)?;
        let gc = conv2d_backward(&gz, &trace.features, &self.seg_conv, 1, 0)?;
        grads.insert(0, gc.params);
        Ok((gc.input, grads))
    }

    fn score_run<R: Rng + ?Sized>(
        &self,
        features: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<(T, ScoreTrace<T>)> {
        let rate = self.config().dropout_rate;
        let (pooled, pool) = maxpool2x2(features)?;
        let mut act1 = linear(&pooled, &self.score_fc1)?;
        relu_in_place(&mut act1);
        let (drop1, mask1) = dropout(&act1, rate, rng, training)?;
        let mut act2 = linear(&drop1, &self.score_fc2)?;
        relu_in_place(&mut act2);
        let (drop2, mask2) = dropout(&act2, rate, rng, training)?;
        let out = linear(&drop2, &self.score_out)?;
        let logit = out.data()[0];
        if !logit.is_finite() {
            return Err(Error::NonFinite("score logit".into()));
        }
        Ok((
            logit,
            ScoreTrace {
                pool,
                pooled,
                act1,
                mask1,
                drop1,
                act2,
                mask2,
                drop2,
            },
        ))
    }

    /// Objectness logit for one patch's features. Dropout is active only when `training`.
    pub fn scoring_head<R: Rng + ?Sized>(&self, features: &Tensor<T>, training: bool, rng: &mut R) -> Result<T> {
        Ok(self.score_run(features, training, rng)?.0)
    }

    fn score_backward(&self, trace: &ScoreTrace<T>, grad: T) -> Result<(Tensor<T>, Vec<LayerGrads<T>>)> {
        let g = Tensor::from_vec(&[1], vec![grad])?;
        let go = linear_backward(&g, &trace.drop2, &self.score_out)?;
        let g = dropout_backward(&go.input, trace.mask2.as_ref())?;
        let g = relu_backward(&g, &trace.act2)?;
        let g2 = linear_backward(&g, &trace.drop1, &self.score_fc2)?;
        let g = dropout_backward(&g2.input, trace.mask1.as_ref())?;
        let g = relu_backward(&g, &trace.act1)?;
        let g1 = linear_backward(&g, &trace.pooled, &self.score_fc1)?;
        let g_feat = maxpool2x2_backward(&g1.input, &trace.pool)?;
        Ok((g_feat, vec![g1.params, g2.params, go.params]))
    }

    /// Runs the trunk and the requested heads on one model input window.
    ///
    /// With `keep_trace` the activations needed by [`backward`](Self::backward) are saved.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        heads: Heads,
        training: bool,
        keep_trace: bool,
        rng: &mut R,
    ) -> Result<Forward<T>> {
        let (features, trunk) = self.trunk_run(input, keep_trace)?;
        let (mask_logits, seg) = if heads.segmentation {
            let (l, t) = self.seg_run(&features)?;
            (Some(l), keep_trace.then_some(t))
        } else {
            (None, None)
        };
        let (score_logit, score) = if heads.scoring {
            let (s, t) = self.score_run(&features, training, rng)?;
            (Some(s), keep_trace.then_some(t))
        } else {
            (None, None)
        };
        Ok(Forward {
            features,
            mask_logits,
            score_logit,
            trunk,
            seg,
            score,
        })
    }

    /// Backpropagates head gradients to every parameter they reach.
    ///
    /// Heads without an upstream gradient get zero gradients; asking for a gradient
    /// through a head whose activations were not saved is a usage error.
    pub fn backward(
        &self,
        fwd: &Forward<T>,
        grad_mask_logits: Option<&Tensor<T>>,
        grad_score: Option<T>,
    ) -> Result<ModelGrads<T>> {
        let trunk = fwd
            .trunk
            .as_ref()
            .ok_or_else(|| Error::Usage("backward called without saved forward state".into()))?;
        let mut grads = self.zero_grads();
        let n_trunk = self.trunk.len();
        let n_seg = match self.seg_classifier {
            SegClassifier::LowRank { .. } => 3,
            SegClassifier::Full(_) => 2,
        };
        let mut g_features = Tensor::zeros(fwd.features.shape());
        if let Some(gm) = grad_mask_logits {
            let trace = fwd
                .seg
                .as_ref()
                .ok_or_else(|| Error::Usage("segmentation branch has no saved forward state".into()))?;
            let (gf, seg) = self.seg_backward(trace, gm)?;
            g_features.add_assign(&gf)?;
            for (i, g) in seg.into_iter().enumerate() {
                grads.layers[n_trunk + i] = g;
            }
        }
        if let Some(gs) = grad_score {
            let trace = fwd
                .score
                .as_ref()
                .ok_or_else(|| Error::Usage("scoring branch has no saved forward state".into()))?;
            let (gf, score) = self.score_backward(trace, gs)?;
            g_features.add_assign(&gf)?;
            for (i, g) in score.into_iter().enumerate() {
                grads.layers[n_trunk + n_seg + i] = g;
            }
        }
        if grad_mask_logits.is_some() || grad_score.is_some() {
            for (i, g) in self.trunk_backward(trunk, &g_features)?.into_iter().enumerate() {
                grads.layers[i] = g;
            }
        }
        Ok(grads)
    }
}

impl<T: Scalar> Forward<T> {
    /// Hash of every ReLU sign and pooling argmax in the pass; two inputs with the same
    /// fingerprint lie in the same linear region of the network.
    pub fn region_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        let positive = |t: &Tensor<T>, mix: &mut dyn FnMut(u64)| {
            for v in t.data() {
                mix(u64::from(*v > T::zero()));
            }
        };
        if let Some(tr) = &self.trunk {
            for s in &tr.steps {
                match s {
                    TrunkStep::Conv { output, .. } => positive(output, &mut mix),
                    TrunkStep::Pool(idx) => idx.argmax.iter().for_each(|&i| mix(i as u64)),
                }
            }
        }
        if let Some(s) = &self.seg {
            positive(&s.conv_out, &mut mix);
        }
        if let Some(s) = &self.score {
            s.pool.argmax.iter().for_each(|&i| mix(i as u64));
            positive(&s.act1, &mut mix);
            positive(&s.act2, &mut mix);
        }
        h
    }
}
