use crate::error::{Error, Result};
use crate::nn::layer::{LayerGrads, LayerParams};
use crate::scalar::Scalar;

/// Classical SGD with momentum; weight decay folds into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Apply weight decay to biases as well as weights (off by default).
    pub decay_biases: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.00005,
            batch_size: 32,
            decay_biases: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `v <- momentum * v + grad + weight_decay * w`, then `w <- w - lr * v`.
pub fn sgd_step<T: Scalar>(
    params: &mut LayerParams<T>,
    grads: &LayerGrads<T>,
    config: &OptimizerConfig,
) -> Result<()> {
    grads.check_matches(params)?;
    let lr = T::lit(config.learning_rate);
    let mu = T::lit(config.momentum);
    let wd = T::lit(config.weight_decay);
    let bias_wd = if config.decay_biases { wd } else { T::zero() };
    update(
        params.weight.data_mut(),
        params.weight_momentum.data_mut(),
        grads.weight.data(),
        lr,
        mu,
        wd,
    );
    update(
        params.bias.data_mut(),
        params.bias_momentum.data_mut(),
        grads.bias.data(),
        lr,
        mu,
        bias_wd,
    );
    Ok(())
}

fn update<T: Scalar>(w: &mut [T], v: &mut [T], g: &[T], lr: T, mu: T, wd: T) {
    for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = mu * *v + g + wd * *w;
        *w -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn params(w: Vec<f64>) -> LayerParams<f64> {
        let n = w.len();
        LayerParams::new(Tensor::from_vec(&[1, n], w).unwrap(), Tensor::zeros(&[1]))
    }

    fn grads(g: Vec<f64>, b: f64) -> LayerGrads<f64> {
        let n = g.len();
        LayerGrads {
            weight: Tensor::from_vec(&[1, n], g).unwrap(),
            bias: Tensor::from_vec(&[1], vec![b]).unwrap(),
        }
    }

    #[test]
    fn plain_gradient_descent() {
        let cfg = OptimizerConfig {
            learning_rate: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = params(vec![1.0, -2.0]);
        sgd_step(&mut p, &grads(vec![0.25, 1.0], 2.0), &cfg).unwrap();
        assert_eq!(p.weight.data(), &[1.0 - 0.5 * 0.25, -2.0 - 0.5]);
        assert_eq!(p.bias.data(), &[-1.0]);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = params(vec![0.3, 0.7]);
        let before = p.clone();
        sgd_step(&mut p, &grads(vec![0.0, 0.0], 0.0), &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_unrolled_two_steps() {
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = 2.0;
        let mut p = params(vec![1.0]);
        sgd_step(&mut p, &grads(vec![g], 0.0), &cfg).unwrap();
        sgd_step(&mut p, &grads(vec![g], 0.0), &cfg).unwrap();
        // v1 = g, v2 = 0.9 g + g; total displacement lr (g + 1.9 g)
        let v1 = g;
        let v2 = 0.9 * v1 + g;
        let expected = 1.0 - 0.1 * v1 - 0.1 * v2;
        assert!((p.weight.data()[0] - expected).abs() < 1e-15);
        assert!((p.weight.data()[0] - (1.0 - 0.1 * (g + 1.9 * g))).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_skips_bias_by_default() {
        let cfg = OptimizerConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = params(vec![2.0]);
        p.bias.data_mut()[0] = 5.0;
        sgd_step(&mut p, &grads(vec![0.0], 0.0), &cfg).unwrap();
        assert!((p.weight.data()[0] - 1.8).abs() < 1e-15);
        assert_eq!(p.bias.data()[0], 5.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let bad = OptimizerConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
