//! Alternating-branch SGD training step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::forward::Heads;
use crate::model::loss::{downsample_target, joint_loss, mask_loss, score_loss, TrainingTriplet};
use crate::model::params::{ModelGrads, ModelParams, Part};
use crate::nn::{sgd_step, OptimizerConfig};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Segmentation,
    Scoring,
}

impl Branch {
    pub fn part(self) -> Part {
        match self {
            Branch::Segmentation => Part::Segmentation,
            Branch::Scoring => Part::Scoring,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Segmentation => "segmentation",
            Branch::Scoring => "scoring",
        }
    }
}

/// How per-sample losses combine into a batch loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub optimizer: OptimizerConfig,
    /// Consecutive segmentation steps per alternation cycle.
    pub segmentation_steps: usize,
    /// Consecutive scoring steps per alternation cycle.
    pub scoring_steps: usize,
    pub steps: usize,
    pub seed: u64,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0 / 32.0,
            optimizer: OptimizerConfig::default(),
            segmentation_steps: 1,
            scoring_steps: 1,
            steps: 0,
            seed: 0,
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.segmentation_steps + self.scoring_steps == 0 {
            return Err(Error::Config("alternation cycle is empty".into()));
        }
        Ok(())
    }

    /// Branch trained at a given step; segmentation steps come first in each cycle.
    pub fn branch_at(&self, step: usize) -> Branch {
        let cycle = self.segmentation_steps + self.scoring_steps;
        if step % cycle < self.segmentation_steps {
            Branch::Segmentation
        } else {
            Branch::Scoring
        }
    }
}

/// Outcome of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub branch: Branch,
    /// Reduced loss of the trained branch, before the update.
    pub loss: f64,
    /// Scoring steps: samples whose logit sign matched the label.
    pub correct: usize,
    pub count: usize,
}

impl StepReport {
    pub fn accuracy(&self) -> Option<f64> {
        (self.branch == Branch::Scoring && self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

/// Checks the batch composition each branch requires.
pub fn check_batch<T: Scalar>(batch: &[TrainingTriplet<T>], branch: Branch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Usage("empty training batch".into()));
    }
    let positives = batch.iter().filter(|t| t.label == 1).count();
    let negatives = batch.iter().filter(|t| t.label == -1).count();
    if positives + negatives != batch.len() {
        return Err(Error::Usage("batch labels must be +1 or -1".into()));
    }
    match branch {
        Branch::Segmentation if negatives > 0 => Err(Error::Usage(format!(
            "segmentation batch contains {negatives} negatives"
        ))),
        Branch::Scoring if positives != batch.len() / 2 => Err(Error::Usage(format!(
            "scoring batch of {} must hold {} positives, has {positives}",
            batch.len(),
            batch.len() / 2
        ))),
        _ => Ok(()),
    }
}

/// Loss and parameter gradients of one branch over a batch, without updating.
pub fn branch_gradients<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    batch: &[TrainingTriplet<T>],
    branch: Branch,
    config: &TrainConfig,
    training: bool,
    rng: &mut R,
) -> Result<(StepReport, ModelGrads<T>)> {
    check_batch(batch, branch)?;
    let heads = match branch {
        Branch::Segmentation => Heads::SEGMENTATION,
        Branch::Scoring => Heads::SCORING,
    };
    let lambda = T::lit(config.lambda);
    let patch = params.config().patch_size;
    let mut grads = params.zero_grads();
    let mut total = T::zero();
    let mut correct = 0;
    for t in batch {
        let fwd = params.forward(&t.patch, heads, training, true, rng)?;
        let g = match branch {
            Branch::Segmentation => {
                let logits = fwd.mask_logits.as_ref().expect("segmentation head ran");
                let mask = t
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Usage("positive triplet without a mask".into()))?;
                let target = downsample_target(mask, patch, logits.shape()[0])?;
                let (l, gm) = mask_loss(logits, &target)?;
                total += l;
                params.backward(&fwd, Some(&gm), None)?
            }
            Branch::Scoring => {
                let s = fwd.score_logit.expect("scoring head ran");
                if (s > T::zero()) == (t.label == 1) {
                    correct += 1;
                }
                let (l, gs) = score_loss(s, t.label, lambda)?;
                total += l;
                params.backward(&fwd, None, Some(gs))?
            }
        };
        grads.accumulate(&g)?;
    }
    if config.reduction == Reduction::Mean {
        let inv = T::one() / T::lit(batch.len() as f64);
        grads.scale(inv);
        total *= inv;
    }
    let loss = total.to_f64_lossy();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{} loss", branch.name())));
    }
    Ok((
        StepReport {
            branch,
            loss,
            correct,
            count: batch.len(),
        },
        grads,
    ))
}

/// One SGD step on the trunk and the selected head; the other head is untouched.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    batch: &[TrainingTriplet<T>],
    branch: Branch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    config.validate()?;
    let (report, grads) = branch_gradients(params, batch, branch, config, true, rng)?;
    let parts: Vec<Part> = params.layer_names().into_iter().map(|(_, p)| p).collect();
    for ((layer, g), part) in params.layers_mut().into_iter().zip(&grads.layers).zip(parts) {
        if part == Part::Trunk || part == branch.part() {
            sgd_step(layer, g, &config.optimizer)?;
        }
    }
    params.ensure_finite()?;
    Ok(report)
}

/// Full joint loss of a single triplet and its gradient with dropout disabled.
pub fn joint_loss_gradients<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    triplet: &TrainingTriplet<T>,
    lambda: T,
    rng: &mut R,
) -> Result<(T, ModelGrads<T>)> {
    let fwd = params.forward(&triplet.patch, Heads::BOTH, false, true, rng)?;
    let logits = fwd.mask_logits.as_ref().expect("segmentation head ran");
    let score = fwd.score_logit.expect("scoring head ran");
    let l = joint_loss(logits, score, triplet, lambda)?;
    let grads = params.backward(&fwd, Some(&l.grad_mask), Some(l.grad_score))?;
    Ok((l.loss, grads))
}

/// Joint loss of a single triplet with dropout disabled.
pub fn joint_loss_value<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    triplet: &TrainingTriplet<T>,
    lambda: T,
    rng: &mut R,
) -> Result<T> {
    let fwd = params.forward(&triplet.patch, Heads::BOTH, false, false, rng)?;
    let logits = fwd.mask_logits.as_ref().expect("segmentation head ran");
    Ok(joint_loss(logits, fwd.score_logit.expect("scoring head ran"), triplet, lambda)?.loss)
}
