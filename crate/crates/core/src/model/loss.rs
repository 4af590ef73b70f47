//! Joint logistic loss over the mask and score outputs.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::tensor::Tensor;

/// Training sample: model input window, `patch_size^2` mask in `{+1,-1}` and label.
///
/// The patch carries the trunk's context margin around the `patch_size` window the
/// mask describes. Negatives may omit the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTriplet<T> {
    pub patch: Tensor<T>,
    pub mask: Option<Vec<i8>>,
    pub label: i8,
}

impl<T: Scalar> TrainingTriplet<T> {
    pub fn positive(patch: Tensor<T>, mask: Vec<i8>) -> Self {
        TrainingTriplet {
            patch,
            mask: Some(mask),
            label: 1,
        }
    }

    pub fn negative(patch: Tensor<T>) -> Self {
        TrainingTriplet {
            patch,
            mask: None,
            label: -1,
        }
    }

    pub fn cast<U: Scalar>(&self) -> TrainingTriplet<U> {
        TrainingTriplet {
            patch: self.patch.cast(),
            mask: self.mask.clone(),
            label: self.label,
        }
    }
}

/// Loss value and gradients with respect to both logits.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLoss<T> {
    pub loss: T,
    pub mask_loss: T,
    pub score_loss: T,
    /// Same shape as the mask logits; all zero for negatives.
    pub grad_mask: Tensor<T>,
    pub grad_score: T,
}

pub(crate) fn check_label(label: i8) -> Result<()> {
    if label == 1 || label == -1 {
        Ok(())
    } else {
        Err(Error::Usage(format!("label must be +1 or -1, got {label}")))
    }
}

/// Row/column in a `full`-sized grid that output cell `i` of `out` cells samples.
///
/// Uses the same corner alignment as the bilinear upsample, so output cell `i`
/// and upsampled pixel `round(i * (full-1)/(out-1))` coincide.
pub fn target_index(i: usize, out: usize, full: usize) -> usize {
    if out <= 1 {
        return (full - 1) / 2;
    }
    ((i * (full - 1)) as f64 / (out - 1) as f64).round() as usize
}

/// Nearest-neighbour downsampling of a `full x full` mask to `out x out`.
pub fn downsample_target(mask: &[i8], full: usize, out: usize) -> Result<Vec<i8>> {
    if mask.len() != full * full {
        return Err(Error::Geometry {
            expected: format!("{full}x{full} mask"),
            found: format!("{} values", mask.len()),
        });
    }
    if out > full {
        return Err(Error::Config(format!("cannot downsample {full} to {out}")));
    }
    let idx: Vec<usize> = (0..out).map(|i| target_index(i, out, full)).collect();
    let mut t = Vec::with_capacity(out * out);
    for &r in &idx {
        for &c in &idx {
            t.push(mask[r * full + c]);
        }
    }
    Ok(t)
}

/// Mean per-pixel logistic loss and its gradient; `target` is in `{+1,-1}`.
pub fn mask_loss<T: Scalar>(logits: &Tensor<T>, target: &[i8]) -> Result<(T, Tensor<T>)> {
    if logits.len() != target.len() {
        return Err(Error::Geometry {
            expected: format!("{} mask target values", logits.len()),
            found: target.len().to_string(),
        });
    }
    let n = T::lit(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(target.len());
    for (&f, &m) in logits.data().iter().zip(target) {
        check_label(m)?;
        let m = T::lit(f64::from(m));
        loss += softplus(-m * f);
        grad.push(-m * sigmoid(-m * f) / n);
    }
    Ok((loss / n, Tensor::from_vec(logits.shape(), grad)?))
}

/// `lambda * log(1 + exp(-y f))` and its derivative.
pub fn score_loss<T: Scalar>(logit: T, label: i8, lambda: T) -> Result<(T, T)> {
    check_label(label)?;
    let y = T::lit(f64::from(label));
    Ok((lambda * softplus(-y * logit), -lambda * y * sigmoid(-y * logit)))
}

/// Joint loss of one triplet, with the mask term computed at the logits' resolution.
///
/// For negatives the mask term and its gradient are exactly zero.
pub fn joint_loss<T: Scalar>(
    mask_logits: &Tensor<T>,
    score_logit: T,
    triplet: &TrainingTriplet<T>,
    lambda: T,
) -> Result<JointLoss<T>> {
    check_label(triplet.label)?;
    let (score_loss, grad_score) = score_loss(score_logit, triplet.label, lambda)?;
    let (mask_loss, grad_mask) = if triplet.label == 1 {
        let mask = triplet
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage("positive triplet without a mask".into()))?;
        let [h, w] = mask_logits.shape()[..] else {
            return Err(Error::Config("mask logits must be 2-d".into()));
        };
        if h != w {
            return Err(Error::Config("mask logits must be square".into()));
        }
        let full = (mask.len() as f64).sqrt().round() as usize;
        let target = downsample_target(mask, full, h)?;
        mask_loss(mask_logits, &target)?
    } else {
        (T::zero(), Tensor::zeros(mask_logits.shape()))
    };
    Ok(JointLoss {
        loss: mask_loss + score_loss,
        mask_loss,
        score_loss,
        grad_mask,
        grad_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet(label: i8, p: usize) -> TrainingTriplet<f64> {
        TrainingTriplet {
            patch: Tensor::zeros(&[3, 1, 1]),
            mask: (label == 1).then(|| (0..p * p).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect()),
            label,
        }
    }

    #[test]
    fn negative_has_only_score_term() {
        let logits = Tensor::from_vec(&[2, 2], vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        let l = joint_loss(&logits, 0.0, &triplet(-1, 4), 1.0 / 32.0).unwrap();
        assert!((l.loss - std::f64::consts::LN_2 / 32.0).abs() < 1e-15);
        assert!(l.grad_mask.data().iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn positive_at_zero_logits() {
        let logits = Tensor::zeros(&[4, 4]);
        let l = joint_loss(&logits, 0.0, &triplet(1, 8), 1.0 / 32.0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((l.loss - (ln2 + ln2 / 32.0)).abs() < 1e-12);
    }

    #[test]
    fn bad_label_is_usage_error() {
        let logits = Tensor::zeros(&[2, 2]);
        let mut t = triplet(1, 2);
        t.label = 0;
        assert!(matches!(joint_loss(&logits, 0.0, &t, 1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn target_corners_align() {
        assert_eq!(target_index(0, 16, 64), 0);
        assert_eq!(target_index(15, 16, 64), 63);
        assert_eq!(target_index(0, 1, 5), 2);
        let mask: Vec<i8> = (0..16).map(|i| i as i8).collect();
        assert_eq!(downsample_target(&mask, 4, 4).unwrap(), mask);
    }

    #[test]
    fn stable_for_large_logits() {
        let (l, g) = score_loss(800.0f64, -1, 1.0).unwrap();
        assert!((l - 800.0).abs() < 1e-9 && (g - 1.0).abs() < 1e-12);
    }
}
