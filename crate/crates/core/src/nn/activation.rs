use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_in_place<T: Scalar>(t: &mut Tensor<T>) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Passes gradient where the saved pre-activation was strictly positive.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, saved_input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != saved_input.shape() {
        return Err(Error::Config(format!(
            "relu gradient {:?} vs input {:?}",
            grad_out.shape(),
            saved_input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(saved_input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Inverted dropout. In training mode each unit is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`; the returned mask holds the per-unit factor.
/// Outside training (or at rate 0) the input is returned unchanged and no mask is drawn.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask_data: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = Tensor::from_vec(input.shape(), mask_data)?;
    let out = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::from_vec(input.shape(), out)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let Some(mask) = mask else {
        return Ok(grad_out.clone());
    };
    if mask.shape() != grad_out.shape() {
        return Err(Error::Config("dropout mask shape mismatch".into()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&g, &m)| g * m)
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::<f32>::from_vec(&[2], vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = stream(1, "test", 0);
        let x = Tensor::<f32>::from_vec(&[4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let (y, m) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!((y, m), (x.clone(), None));
        let (y, m) = dropout(&x, 0.7, &mut rng, false).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(m.is_none());
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_survival_rate_and_mean() {
        let mut rng = stream(99, "dropout", 0);
        let n = 100_000;
        let x = Tensor::<f64>::from_vec(&[n], (0..n).map(|i| 1.0 + (i % 7) as f64).collect()).unwrap();
        let (y, mask) = dropout(&x, 0.5, &mut rng, true).unwrap();
        let mask = mask.unwrap();
        let survived = mask.data().iter().filter(|&&m| m > 0.0).count() as f64 / n as f64;
        assert!((survived - 0.5).abs() <= 0.01, "survived {survived}");
        let mean_in = x.data().iter().sum::<f64>() / n as f64;
        let mean_out = y.data().iter().sum::<f64>() / n as f64;
        assert!(((mean_out - mean_in) / mean_in).abs() <= 0.02);
    }

    #[test]
    fn same_seed_same_mask() {
        let x = Tensor::<f32>::full(&[64], 1.0);
        let a = dropout(&x, 0.5, &mut stream(3, "d", 0), true).unwrap();
        let b = dropout(&x, 0.5, &mut stream(3, "d", 0), true).unwrap();
        assert_eq!(a, b);
    }
}
