use crate::error::{Error, Result};
use crate::nn::layer::{LayerGrads, LayerParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    /// Same shape as the forward input.
    pub input: Tensor<T>,
    pub params: LayerGrads<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize)> {
    let [out, inp] = params.weight.shape()[..] else {
        return Err(Error::Config(format!(
            "linear weight must be [out, in], got {:?}",
            params.weight.shape()
        )));
    };
    if input.len() != inp {
        return Err(Error::Config(format!(
            "linear layer takes {inp} inputs, got {} (shape {:?})",
            input.len(),
            input.shape()
        )));
    }
    Ok((out, inp))
}

/// `y = W x + b` on the flattened input.
pub fn linear<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (out, inp) = check(input, params)?;
    let mut y = params.bias.data().to_vec();
    T::gemm(
        out,
        inp,
        1,
        T::one(),
        params.weight.data(),
        inp,
        1,
        input.data(),
        1,
        1,
        T::one(),
        &mut y,
        1,
        1,
    );
    Tensor::from_vec(&[out], y)
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<LinearGrads<T>> {
    let (out, inp) = check(saved_input, params)?;
    if grad_out.len() != out {
        return Err(Error::Config(format!(
            "linear upstream gradient has {} values, layer has {out} outputs",
            grad_out.len()
        )));
    }
    let g = grad_out.data();
    let x = saved_input.data();
    let mut gw = vec![T::zero(); out * inp];
    T::gemm(out, 1, inp, T::one(), g, 1, 1, x, inp, 1, T::zero(), &mut gw, inp, 1);
    let mut gx = vec![T::zero(); inp];
    T::gemm(
        inp,
        out,
        1,
        T::one(),
        params.weight.data(),
        1,
        inp,
        g,
        1,
        1,
        T::zero(),
        &mut gx,
        1,
        1,
    );
    Ok(LinearGrads {
        input: Tensor::from_vec(saved_input.shape(), gx)?,
        params: LayerGrads {
            weight: Tensor::from_vec(params.weight.shape(), gw)?,
            bias: Tensor::from_vec(&[out], g.to_vec())?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let mut w = vec![0.0f64; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let p = LayerParams::new(Tensor::from_vec(&[3, 3], w).unwrap(), Tensor::zeros(&[3]));
        let x = Tensor::from_vec(&[3], vec![1.5, -2.0, 7.0]).unwrap();
        assert_eq!(linear(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let p = LayerParams::new(
            Tensor::full(&[2, 4], 3.0f32),
            Tensor::from_vec(&[2], vec![0.25, -1.0]).unwrap(),
        );
        let y = linear(&Tensor::zeros(&[1, 2, 2]), &p).unwrap();
        assert_eq!(y.data(), &[0.25, -1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = LayerParams::<f32>::zeros(&[2, 4], 2);
        assert!(matches!(linear(&Tensor::zeros(&[5]), &p), Err(Error::Config(_))));
    }
}
