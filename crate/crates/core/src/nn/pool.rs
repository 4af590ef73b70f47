use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Argmax routing recorded by [`maxpool2x2`]: flat input index per output element.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max-pool over a `C x H x W` tensor with even `H` and `W`.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "2x2 max-pool needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let window = [top, top + 1, top + w, top + w + 1];
                // Strict comparison keeps the first maximum in row-major order.
                let mut best = window[0];
                for &i in &window[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, ho, wo], out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream gradient to its recorded argmax; zeros elsewhere.
pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    indices: &PoolIndices,
) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::Config(format!(
            "pool gradient has {} values, forward produced {}",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape);
    let gi = grad_in.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(&indices.argmax) {
        gi[i] += g;
    }
    Ok(grad_in)
}
