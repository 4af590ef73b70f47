//! Built-in verification suite: gradient checks, loss structure, dense/patchwise
//! agreement and metric oracles. Used by the `selftest` command and the test suite.

use std::fmt;

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::eval::{
    auc, average_recall, evaluate, greedy_match, iou_bitmap, iou_box, EvalConfig, GtImage, GtInstance,
    AUC_BUDGETS,
};
use crate::image::Image;
use crate::inference::{dense_apply, pad_level, patchwise_oracle, DenseModel, ProposalRecord};
use crate::mask::{BBox, Bitmap};
use crate::model::{
    joint_loss, joint_loss_gradients, joint_loss_value, mask_loss, score_loss, Heads, ModelConfig,
    ModelParams, TrainingTriplet,
};
use crate::nn::{
    conv2d, conv2d_backward, dropout, dropout_backward, grad_check, linear, linear_backward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, GradCheckReport, LayerParams, Objective,
};
use crate::rng::stream;
use crate::tensor::Tensor;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const DENSE_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-12;
const EPSILON: f64 = 1e-5;

/// Deliberate defects for exercising the suite itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the convolution weight gradient by 1.01.
    Conv2d,
}

impl Fault {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "conv2d" => Some(Fault::Conv2d),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOptions {
    pub seeds: u64,
    pub dense_seeds: u64,
    pub dense_sizes: Vec<(usize, usize)>,
    pub metric_cases: usize,
    pub fault: Option<Fault>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seeds: 20,
            dense_seeds: 20,
            dense_sizes: vec![(64, 64), (96, 64), (128, 160)],
            metric_cases: 1000,
            fault: None,
        }
    }
}

pub fn run_all(options: &CheckOptions) -> Vec<CheckOutcome> {
    let s = options.seeds;
    vec![
        check_conv2d(s, options.fault),
        check_linear(s),
        check_relu(s),
        check_maxpool(s),
        check_dropout(s),
        check_losses(s),
        check_joint_loss(s),
        check_loss_structure(),
        check_dense_equivalence(options.dense_seeds, &options.dense_sizes),
        check_interleave(options.dense_seeds, &options.dense_sizes),
        check_metrics(options.metric_cases, 0),
    ]
}

fn outcome_from(name: &str, result: Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome {
            name: name.into(),
            passed,
            detail,
        },
        Err(e) => CheckOutcome {
            name: name.into(),
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Worst gradient-check result over seeds.
struct GradSummary {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl GradSummary {
    fn new() -> Self {
        GradSummary {
            worst: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    fn add(&mut self, r: &GradCheckReport) {
        self.worst = self.worst.max(r.max_relative_error);
        self.checked += r.checked;
        self.skipped += r.skipped_kinks;
    }

    fn finish(self, seeds: u64) -> (bool, String) {
        (
            self.checked > 0 && self.worst < GRAD_TOLERANCE,
            format!(
                "max relative error {:.3e} over {} coordinates, {} seeds ({} kink skips)",
                self.worst, self.checked, seeds, self.skipped
            ),
        )
    }
}

fn random_tensor(shape: &[usize], rng: &mut impl RngCore) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Splits a flat vector into consecutive tensors of the given shapes.
fn unflatten(x: &[f64], shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_vec(s, x[off..off + n].to_vec()).expect("shape matches");
            off += n;
            t
        })
        .collect()
}

fn concat(parts: &[&Tensor<f64>]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

struct Layered<V, G, R> {
    value: V,
    gradient: G,
    region: R,
}

impl<V, G, R> Objective for Layered<V, G, R>
where
    V: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
    R: FnMut(&[f64]) -> Option<u64>,
{
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    fn region(&mut self, x: &[f64]) -> Option<u64> {
        (self.region)(x)
    }
}

fn hash_bits(bits: impl Iterator<Item = u64>) -> u64 {
    bits.fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v).wrapping_mul(0x0100_0000_01b3))
}

/// Convolution over random shapes, strides and paddings; input, weight and bias gradients.
pub fn check_conv2d(seeds: u64, fault: Option<Fault>) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.conv2d", 0);
            let cin = rng.random_range(1..=3);
            let cout = rng.random_range(1..=3);
            let k = [1, 3][rng.random_range(0..2)];
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=1);
            let h = rng.random_range(k..k + 5);
            let w = rng.random_range(k..k + 5);
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (w + 2 * pad - k) / stride + 1;
            let in_shape = [cin, h, w];
            let w_shape = [cout, cin, k, k];
            let b_shape = [cout];
            let x0 = random_tensor(&in_shape, &mut rng);
            let w0 = random_tensor(&w_shape, &mut rng);
            let b0 = random_tensor(&b_shape, &mut rng);
            let r = random_tensor(&[cout, ho, wo], &mut rng);
            let shapes: [&[usize]; 3] = [&in_shape, &w_shape, &b_shape];
            let split = |x: &[f64]| {
                let mut v = unflatten(x, &shapes);
                let b = v.pop().expect("bias");
                let w = v.pop().expect("weight");
                (v.pop().expect("input"), LayerParams::new(w, b))
            };
            let mut obj = Layered {
                value: |x: &[f64]| {
                    let (inp, p) = split(x);
                    dot(&conv2d(&inp, &p, stride, pad).expect("conv"), &r)
                },
                gradient: |x: &[f64]| {
                    let (inp, p) = split(x);
                    let mut g = conv2d_backward(&r, &inp, &p, stride, pad).expect("conv backward");
                    if fault == Some(Fault::Conv2d) {
                        g.params.weight.scale(1.01);
                    }
                    concat(&[&g.input, &g.params.weight, &g.params.bias])
                },
                region: |_: &[f64]| None,
            };
            let x = concat(&[&x0, &w0, &b0]);
            sum.add(&grad_check(&mut obj, &x, EPSILON, None));
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("conv2d", run())
}

pub fn check_linear(seeds: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.linear", 0);
            let n_in = rng.random_range(1..=12);
            let n_out = rng.random_range(1..=6);
            let shapes: [&[usize]; 3] = [&[n_in], &[n_out, n_in], &[n_out]];
            let x: Vec<f64> = (0..n_in + n_out * n_in + n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = random_tensor(&[n_out], &mut rng);
            let split = |x: &[f64]| {
                let mut v = unflatten(x, &shapes);
                let b = v.pop().expect("bias");
                let w = v.pop().expect("weight");
                (v.pop().expect("input"), LayerParams::new(w, b))
            };
            let mut obj = Layered {
                value: |x: &[f64]| {
                    let (inp, p) = split(x);
                    dot(&linear(&inp, &p).expect("linear"), &r)
                },
                gradient: |x: &[f64]| {
                    let (inp, p) = split(x);
                    let g = linear_backward(&r, &inp, &p).expect("linear backward");
                    concat(&[&g.input, &g.params.weight, &g.params.bias])
                },
                region: |_: &[f64]| None,
            };
            sum.add(&grad_check(&mut obj, &x, EPSILON, None));
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("linear", run())
}

pub fn check_relu(seeds: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.relu", 0);
            let shape = [2, rng.random_range(1..=4), rng.random_range(1..=4)];
            let x0 = random_tensor(&shape, &mut rng);
            let r = random_tensor(&shape, &mut rng);
            let t = |x: &[f64]| Tensor::from_vec(&shape, x.to_vec()).expect("shape");
            let mut obj = Layered {
                value: |x: &[f64]| dot(&relu(&t(x)), &r),
                gradient: |x: &[f64]| {
                    relu_backward(&r, &t(x)).expect("relu backward").data().to_vec()
                },
                region: |x: &[f64]| Some(hash_bits(x.iter().map(|&v| u64::from(v > 0.0)))),
            };
            sum.add(&grad_check(&mut obj, x0.data(), EPSILON, None));
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("relu", run())
}

pub fn check_maxpool(seeds: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.maxpool", 0);
            let shape = [rng.random_range(1..=2), 2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3)];
            let x0 = random_tensor(&shape, &mut rng);
            let r = random_tensor(&[shape[0], shape[1] / 2, shape[2] / 2], &mut rng);
            let t = |x: &[f64]| Tensor::from_vec(&shape, x.to_vec()).expect("shape");
            let mut obj = Layered {
                value: |x: &[f64]| dot(&maxpool2x2(&t(x)).expect("pool").0, &r),
                gradient: |x: &[f64]| {
                    let (_, idx) = maxpool2x2(&t(x)).expect("pool");
                    maxpool2x2_backward(&r, &idx).expect("pool backward").data().to_vec()
                },
                region: |x: &[f64]| {
                    let (_, idx) = maxpool2x2(&t(x)).expect("pool");
                    Some(hash_bits(idx.argmax.iter().map(|&i| i as u64)))
                },
            };
            sum.add(&grad_check(&mut obj, x0.data(), EPSILON, None));
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("maxpool2x2", run())
}

pub fn check_dropout(seeds: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.dropout", 0);
            let shape = [rng.random_range(1..=16)];
            let x0 = random_tensor(&shape, &mut rng);
            let r = random_tensor(&shape, &mut rng);
            let t = |x: &[f64]| Tensor::from_vec(&shape, x.to_vec()).expect("shape");
            let apply = |x: &[f64]| {
                dropout(&t(x), 0.5, &mut stream(seed, "check.dropout.mask", 0), true).expect("dropout")
            };
            let mut obj = Layered {
                value: |x: &[f64]| dot(&apply(x).0, &r),
                gradient: |x: &[f64]| {
                    let (_, mask) = apply(x);
                    dropout_backward(&r, mask.as_ref()).expect("dropout backward").data().to_vec()
                },
                region: |_: &[f64]| None,
            };
            sum.add(&grad_check(&mut obj, x0.data(), EPSILON, None));
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("dropout", run())
}

/// Per-pixel mask loss and the weighted score loss with respect to their logits.
pub fn check_losses(seeds: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.losses", 0);
            let side = rng.random_range(1..=4);
            let target: Vec<i8> = (0..side * side).map(|_| if rng.random() { 1 } else { -1 }).collect();
            let x0: Vec<f64> = (0..side * side).map(|_| rng.random_range(-4.0..4.0)).collect();
            let t = |x: &[f64]| Tensor::from_vec(&[side, side], x.to_vec()).expect("shape");
            let mut obj = Layered {
                value: |x: &[f64]| mask_loss(&t(x), &target).expect("mask loss").0,
                gradient: |x: &[f64]| mask_loss(&t(x), &target).expect("mask loss").1.data().to_vec(),
                region: |_: &[f64]| None,
            };
            sum.add(&grad_check(&mut obj, &x0, EPSILON, None));
            let label = if rng.random() { 1 } else { -1 };
            let lambda = 1.0 / 32.0;
            let mut obj = Layered {
                value: |x: &[f64]| score_loss(x[0], label, lambda).expect("score loss").0,
                gradient: |x: &[f64]| vec![score_loss(x[0], label, lambda).expect("score loss").1],
                region: |_: &[f64]| None,
            };
            sum.add(&grad_check(&mut obj, &[rng.random_range(-4.0..4.0)], EPSILON, None));
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("losses", run())
}

/// Small architecture with the same layer types as the presets, for end-to-end checks.
pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::desk();
    c.patch_size = 32;
    c.set("trunk", "c3,c3,p,c4,p,c4,p,c4,p").expect("valid trunk");
    c.seg_channels = 3;
    c.rank = 4;
    c.mask_out = 4;
    c.score_hidden = (4, 3);
    c
}

/// Random triplet for `params`; positives carry a random +-1 mask.
pub fn random_triplet(params: &ModelParams<f64>, positive: bool, rng: &mut impl RngCore) -> TrainingTriplet<f64> {
    let g = params.geometry();
    let patch = Tensor::uniform(&[3, g.input_size, g.input_size], 1.0, rng);
    if positive {
        let mask = (0..g.patch_size * g.patch_size)
            .map(|_| if rng.random() { 1 } else { -1 })
            .collect();
        TrainingTriplet::positive(patch, mask)
    } else {
        TrainingTriplet::negative(patch)
    }
}

/// Up to `weights` weight and `biases` bias coordinates of every layer, in flat order.
fn layer_sample(params: &ModelParams<f64>, weights: usize, biases: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let mut out = Vec::new();
    let mut off = 0;
    for l in params.layers() {
        for (len, take) in [(l.weight.len(), weights), (l.bias.len(), biases)] {
            let mut idx: Vec<usize> = (0..len).collect();
            for i in (1..len).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            idx.truncate(take);
            idx.sort_unstable();
            out.extend(idx.into_iter().map(|i| off + i));
            off += len;
        }
    }
    out
}

struct JointObjective {
    params: ModelParams<f64>,
    triplet: TrainingTriplet<f64>,
    lambda: f64,
}

impl Objective for JointObjective {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.params.set_flat(x);
        joint_loss_value(&self.params, &self.triplet, self.lambda, &mut stream(0, "check.joint", 0))
            .expect("joint loss")
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        self.params.set_flat(x);
        joint_loss_gradients(&self.params, &self.triplet, self.lambda, &mut stream(0, "check.joint", 0))
            .expect("joint gradient")
            .1
            .flatten()
    }

    fn region(&mut self, x: &[f64]) -> Option<u64> {
        self.params.set_flat(x);
        let fwd = self
            .params
            .forward(&self.triplet.patch, Heads::BOTH, false, true, &mut stream(0, "check.joint", 0))
            .expect("forward");
        Some(fwd.region_fingerprint())
    }
}

/// The full joint loss through every layer of a small model, both labels.
pub fn check_joint_loss(seeds: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let config = tiny_config();
        let mut sum = GradSummary::new();
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.joint", 1);
            let params = ModelParams::<f64>::build(&config, &mut rng)?;
            for positive in [true, false] {
                let triplet = random_triplet(&params, positive, &mut rng);
                let x = params.flatten();
                let mut obj = JointObjective {
                    params: params.clone(),
                    triplet,
                    lambda: 1.0 / 32.0,
                };
                let coords = layer_sample(&params, 16, 4, &mut rng);
                let r = grad_check(&mut obj, &x, EPSILON, Some(&coords));
                sum.add(&r);
            }
        }
        Ok(sum.finish(seeds))
    };
    outcome_from("joint_loss", run())
}

/// Negatives never reach the segmentation head; zero logits give `log 2` terms.
pub fn check_loss_structure() -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let lambda = 1.0 / 32.0;
        let ln2 = std::f64::consts::LN_2;
        let side = 4;
        let zeros = Tensor::<f64>::zeros(&[side, side]);
        let patch = Tensor::<f64>::zeros(&[3, 1, 1]);
        let full = 8;
        let mask = (0..full * full).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let pos = joint_loss(&zeros, 0.0, &TrainingTriplet::positive(patch.clone(), mask), lambda)?;
        let neg = joint_loss(&zeros, 0.0, &TrainingTriplet::negative(patch), lambda)?;
        let pos_err = (pos.loss - (ln2 + lambda * ln2)).abs();
        let neg_err = (neg.loss - lambda * ln2).abs();
        let neg_grad_zero = neg.grad_mask.data().iter().all(|v| v.to_bits() == 0);
        let mut rng = stream(0, "check.structure", 0);
        let logits = Tensor::<f64>::uniform(&[side, side], 3.0, &mut rng);
        let neg_rand = joint_loss(&logits, 0.7, &TrainingTriplet::negative(Tensor::zeros(&[3, 1, 1])), lambda)?;
        let rand_zero = neg_rand.grad_mask.data().iter().all(|v| v.to_bits() == 0);
        let passed = pos_err <= LOSS_TOLERANCE && neg_err <= LOSS_TOLERANCE && neg_grad_zero && rand_zero;
        Ok((
            passed,
            format!(
                "|L+ - (1+lambda)ln2| = {pos_err:.1e}, |L- - lambda ln2| = {neg_err:.1e}, negative mask gradient bitwise zero: {}",
                neg_grad_zero && rand_zero
            ),
        ))
    };
    outcome_from("loss_structure", run())
}

/// Random image with values in `[0, 1)`.
pub fn random_image(width: usize, height: usize, rng: &mut impl RngCore) -> Image {
    let data = (0..3 * width * height).map(|_| rng.random::<f32>()).collect();
    Image::from_planar(width, height, data).expect("planar size")
}

/// Dense evaluation against explicit patch crops on desk-preset models in `f32`.
pub fn check_dense_equivalence(seeds: u64, sizes: &[(usize, usize)]) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let config = ModelConfig::desk();
        let (mut worst, mut magnitude, mut cells) = (0.0f64, 0.0f64, 0usize);
        let mut shapes_ok = true;
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.dense", 0);
            let params = ModelParams::<f32>::build(&config, &mut rng)?;
            for &(w, h) in sizes {
                let img = random_image(w, h, &mut rng);
                let dense = dense_apply(&params, &img)?;
                let oracle = patchwise_oracle(&params, &img, 16)?;
                shapes_ok &= dense.mask_logits.shape() == oracle.mask_logits.shape()
                    && dense.scores.shape() == oracle.scores.shape();
                if !shapes_ok {
                    break;
                }
                worst = worst
                    .max(dense.mask_logits.max_abs_diff(&oracle.mask_logits))
                    .max(dense.scores.max_abs_diff(&oracle.scores));
                magnitude = oracle
                    .mask_logits
                    .data()
                    .iter()
                    .chain(oracle.scores.data())
                    .fold(magnitude, |m, v| m.max(f64::from(v.abs())));
                cells += oracle.scores.len();
            }
        }
        Ok((
            shapes_ok && worst <= DENSE_TOLERANCE,
            format!(
                "max |dense - patchwise| = {worst:.3e} over {cells} cells, {seeds} seeds x {} sizes (max |logit| {magnitude:.3})",
                sizes.len()
            ),
        ))
    };
    outcome_from("dense_equivalence", run())
}

/// Random square-ish bitmap on a tiny canvas.
fn random_bitmap(w: usize, h: usize, rng: &mut impl RngCore) -> Bitmap {
    let density: f64 = rng.random_range(0.1..0.7);
    Bitmap::from_fn(w, h, |_, _| rng.random::<f64>() < density)
}

fn brute_iou(a: &Bitmap, b: &Bitmap) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            inter += usize::from(p && q);
            union += usize::from(p || q);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn brute_box_iou(a: &BBox, b: &BBox) -> f64 {
    let mut inter = 0usize;
    for y in a.y..a.y + a.h {
        for x in a.x..a.x + a.w {
            inter += usize::from(x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h);
        }
    }
    let union = a.w * a.h + b.w * b.h - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Repeatedly takes the best remaining pair; ties go to the earlier proposal, then lower id.
fn brute_greedy(ious: &[Vec<f64>], ids: &[u64]) -> Vec<f64> {
    let mut p_used = vec![false; ious.len()];
    let mut g_used = vec![false; ids.len()];
    let mut out = vec![0.0; ids.len()];
    loop {
        let mut best: Option<(usize, usize)> = None;
        for (p, row) in ious.iter().enumerate() {
            for (g, &v) in row.iter().enumerate() {
                if p_used[p] || g_used[g] || v <= 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bg)) => {
                        let bv = ious[bp][bg];
                        v > bv || (v == bv && (p < bp || (p == bp && ids[g] < ids[bg])))
                    }
                };
                if better {
                    best = Some((p, g));
                }
            }
        }
        let Some((p, g)) = best else { break };
        p_used[p] = true;
        g_used[g] = true;
        out[g] = ious[p][g];
    }
    out
}

fn brute_ar(ious: &[f64]) -> Option<f64> {
    if ious.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for k in 0..10 {
        let t = f64::from(50 + 5 * k) / 100.0;
        total += ious.iter().filter(|&&v| v >= t).count() as f64 / ious.len() as f64;
    }
    Some(total / 10.0)
}

/// Randomised tiny cases against independent brute-force metrics, plus the
/// perfect-proposal oracle.
pub fn check_metrics(cases: usize, seed: u64) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let mut failures = Vec::new();
        for case in 0..cases {
            let mut rng = stream(seed, "check.metrics", case as u64);
            let (w, h) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let np = rng.random_range(0..=5);
            let ng = rng.random_range(0..=4);
            let props: Vec<Bitmap> = (0..np).map(|_| random_bitmap(w, h, &mut rng)).collect();
            let gts: Vec<Bitmap> = (0..ng).map(|_| random_bitmap(w, h, &mut rng)).collect();
            let mut ids: Vec<u64> = (1..=ng as u64).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.random_range(0..=i));
            }
            let mut ious = Vec::with_capacity(np);
            for p in &props {
                let mut row = Vec::with_capacity(ng);
                for g in &gts {
                    let v = iou_bitmap(p, g)?;
                    if v != brute_iou(p, g) || v != iou_bitmap(g, p)? {
                        failures.push(format!("case {case}: mask iou"));
                    }
                    let rle = iou_mask_rle(p, g)?;
                    if rle != v {
                        failures.push(format!("case {case}: rle iou"));
                    }
                    row.push(v);
                }
                ious.push(row);
            }
            let ba = random_box(w, h, &mut rng);
            let bb = random_box(w, h, &mut rng);
            if iou_box(&ba, &bb) != brute_box_iou(&ba, &bb) || iou_box(&ba, &bb) != iou_box(&bb, &ba) {
                failures.push(format!("case {case}: box iou"));
            }
            let m = greedy_match(&ious, &ids);
            let expect = brute_greedy(&ious, &ids);
            if m.gt_iou != expect {
                failures.push(format!("case {case}: matching {:?} vs {:?}", m.gt_iou, expect));
            }
            if average_recall(&m.gt_iou) != brute_ar(&expect) {
                failures.push(format!("case {case}: average recall"));
            }
            let ars: Vec<f64> = (1..=np.max(1))
                .map(|b| {
                    let truncated: Vec<Vec<f64>> = ious.iter().take(b).cloned().collect();
                    brute_ar(&brute_greedy(&truncated, &ids)).unwrap_or(0.0)
                })
                .collect();
            let mean = ars.iter().sum::<f64>() / ars.len() as f64;
            if (auc(&ars) - mean).abs() > 0.0 {
                failures.push(format!("case {case}: auc"));
            }
            if ars.windows(2).any(|p| p[1] < p[0]) {
                failures.push(format!("case {case}: AR decreased with budget"));
            }
        }
        let perfect = perfect_proposal_ar()?;
        let passed = failures.is_empty() && perfect;
        let detail = if passed {
            format!("{cases} randomized cases agree exactly; ground truth as proposals gives AR 1.0")
        } else {
            format!(
                "{} disagreements (first: {}); perfect-proposal oracle {}",
                failures.len(),
                failures.first().map(String::as_str).unwrap_or("none"),
                if perfect { "ok" } else { "failed" }
            )
        };
        Ok((passed, detail))
    };
    outcome_from("metrics", run())
}

fn iou_mask_rle(a: &Bitmap, b: &Bitmap) -> Result<f64> {
    crate::eval::iou_mask(&a.to_rle(), &b.to_rle())
}

fn random_box(w: usize, h: usize, rng: &mut impl RngCore) -> BBox {
    let x = rng.random_range(0..w);
    let y = rng.random_range(0..h);
    BBox {
        x,
        y,
        w: rng.random_range(0..=w - x),
        h: rng.random_range(0..=h - y),
    }
}

/// Every ground-truth instance proposed with score 1 gives AR 1 at each budget covering it.
fn perfect_proposal_ar() -> Result<bool> {
    let mut rng = stream(0, "check.perfect", 0);
    let mut gts = Vec::new();
    let mut props = Vec::new();
    let mut max_count = 0;
    for image_id in 1..=5u64 {
        let (w, h) = (12, 9);
        let count = rng.random_range(1..=4);
        max_count = max_count.max(count);
        let mut instances = Vec::new();
        for k in 0..count {
            let mask = Bitmap::from_fn(w, h, |x, y| x % count == k && y > 0);
            let rle = mask.to_rle();
            let bbox = mask.bbox().expect("non-empty");
            props.push(ProposalRecord {
                image_id,
                score: 1.0,
                bbox,
                rle: rle.counts.clone(),
                scale: 1.0,
                cell: [0, 0],
            });
            instances.push(GtInstance {
                id: k as u64 + 1,
                area: mask.area(),
                mask: rle,
                bbox,
            });
        }
        gts.push(GtImage {
            image_id,
            width: w,
            height: h,
            instances,
        });
    }
    let report = evaluate(&gts, &props, &EvalConfig::default())?;
    Ok(AUC_BUDGETS
        .iter()
        .filter(|&&b| b >= max_count)
        .all(|&b| report.ar(b) == Some(1.0)))
}

/// Interleaved score grid against an explicit scoring-head evaluation of each cell's
/// shifted feature window, in `f64`; the mask grid must have the same shape.
pub fn check_interleave(seeds: u64, sizes: &[(usize, usize)]) -> CheckOutcome {
    let run = || -> Result<(bool, String)> {
        let config = ModelConfig::desk();
        let (mut mismatches, mut cells, mut shapes_ok) = (0usize, 0usize, true);
        for seed in 0..seeds {
            let mut rng = stream(seed, "check.interleave", 0);
            let params = ModelParams::<f64>::build(&config, &mut rng)?;
            let model = DenseModel::new(&params)?;
            let n = params.geometry().feature_size;
            for &(w, h) in sizes {
                let img = random_image(w, h, &mut rng);
                let input = pad_level(&params, &img)?;
                let features = params.trunk_forward(&input)?;
                let scores = model.interleave_scores(&features)?;
                let dense = model.grids(&input)?;
                let (gh, gw) = (scores.shape()[0], scores.shape()[1]);
                shapes_ok &= dense.grid() == (gh, gw) && (gh, gw) == (h / 16, w / 16);
                for gi in 0..gh {
                    for gj in 0..gw {
                        let window = features.crop3(gi, gj, n, n)?;
                        let explicit = params.scoring_head(&window, false, &mut rng)?;
                        mismatches += usize::from(explicit.to_bits() != scores.data()[gi * gw + gj].to_bits());
                        cells += 1;
                    }
                }
            }
        }
        Ok((
            shapes_ok && mismatches == 0 && cells > 0,
            format!(
                "{cells} cells over {seeds} seeds x {} levels, {mismatches} differ from the shifted evaluation; grid shapes {}",
                sizes.len(),
                if shapes_ok { "agree" } else { "disagree" }
            ),
        ))
    };
    outcome_from("interleave", run())
}

/// Result of fitting the two-layer factorised head to a random full linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFit {
    pub inputs: usize,
    pub outputs: usize,
    pub rank: usize,
    pub iterations: usize,
    pub max_error: f64,
}

/// Trains `expand(reduce(x))` by full-batch gradient descent on the standard basis
/// until every entry of the composed map is within `tolerance` of the target.
pub fn fit_low_rank(inputs: usize, outputs: usize, rank: usize, seed: u64, tolerance: f64) -> Result<LowRankFit> {
    let mut rng = stream(seed, "check.lowrank", 0);
    let target = Tensor::<f64>::uniform(&[outputs, inputs], 1.0, &mut rng);
    let mut reduce = LayerParams::<f64>::uniform(&[rank, inputs], &mut rng);
    let mut expand = LayerParams::<f64>::uniform(&[outputs, rank], &mut rng);
    let opt = crate::nn::OptimizerConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        weight_decay: 0.0,
        batch_size: inputs,
        decay_biases: false,
    };
    let composed = |reduce: &LayerParams<f64>, expand: &LayerParams<f64>| -> Result<Vec<Vec<f64>>> {
        (0..inputs)
            .map(|i| {
                let mut e = vec![0.0; inputs];
                e[i] = 1.0;
                let x = Tensor::from_vec(&[inputs], e)?;
                Ok(linear(&linear(&x, reduce)?, expand)?.into_data())
            })
            .collect()
    };
    let t = target.data();
    let max_error = |cols: &[Vec<f64>]| {
        cols.iter()
            .enumerate()
            .flat_map(|(i, col)| col.iter().enumerate().map(move |(o, &v)| (v - t[o * inputs + i]).abs()))
            .fold(0.0f64, f64::max)
    };
    let limit = 200_000;
    for it in 0..limit {
        let cols = composed(&reduce, &expand)?;
        let err = max_error(&cols);
        if err <= tolerance {
            return Ok(LowRankFit {
                inputs,
                outputs,
                rank,
                iterations: it,
                max_error: err,
            });
        }
        let mut g_reduce = reduce.grads_zeros();
        let mut g_expand = expand.grads_zeros();
        for (i, col) in cols.iter().enumerate() {
            let mut e = vec![0.0; inputs];
            e[i] = 1.0;
            let x = Tensor::from_vec(&[inputs], e)?;
            let hidden = linear(&x, &reduce)?;
            let resid: Vec<f64> = col
                .iter()
                .enumerate()
                .map(|(o, &v)| (v - target.data()[o * inputs + i]) / inputs as f64)
                .collect();
            let ge = linear_backward(&Tensor::from_vec(&[outputs], resid)?, &hidden, &expand)?;
            let gr = linear_backward(&ge.input, &x, &reduce)?;
            g_expand.accumulate(&ge.params)?;
            g_reduce.accumulate(&gr.params)?;
        }
        crate::nn::sgd_step(&mut reduce, &g_reduce, &opt)?;
        crate::nn::sgd_step(&mut expand, &g_expand, &opt)?;
    }
    let err = max_error(&composed(&reduce, &expand)?);
    Ok(LowRankFit {
        inputs,
        outputs,
        rank,
        iterations: limit,
        max_error: err,
    })
}
