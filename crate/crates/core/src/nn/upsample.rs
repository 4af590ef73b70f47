use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Corner-aligned bilinear resize of the last two dimensions to `target_h x target_w`.
///
/// Output index `i` reads source coordinate `i * (in - 1) / (out - 1)` (0 when `out == 1`).
pub fn bilinear_upsample<T: Scalar>(
    input: &Tensor<T>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::Config(format!(
            "bilinear upsample needs at least 2 dims, got {shape:?}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if target_h < h || target_w < w {
        return Err(Error::Config(format!(
            "upsample target {target_h}x{target_w} smaller than input {h}x{w}"
        )));
    }
    let planes: usize = shape[..shape.len() - 2].iter().product();
    let rows = taps(h, target_h);
    let cols = taps(w, target_w);
    let mut out = Vec::with_capacity(planes * target_h * target_w);
    for p in input.data().chunks_exact(h * w) {
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let fy = T::lit(fy);
                let fx = T::lit(fx);
                let one = T::one();
                let top = p[y0 * w + x0] * (one - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (one - fx) + p[y1 * w + x1] * fx;
                out.push(top * (one - fy) + bot * fy);
            }
        }
    }
    let mut out_shape = shape[..shape.len() - 2].to_vec();
    out_shape.extend([target_h, target_w]);
    debug_assert_eq!(planes * target_h * target_w, out.len());
    Tensor::from_vec(&out_shape, out)
}

/// `(lo, hi, frac)` source taps for each output index.
pub(crate) fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_out == 1 || n_in == 1 {
                return (0, 0, 0.0);
            }
            let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.5, 6.0]).unwrap();
        assert_eq!(bilinear_upsample(&x, 2, 3).unwrap(), x);
    }

    #[test]
    fn constants_preserved() {
        let x = Tensor::<f32>::full(&[3, 4, 4], 0.375);
        let y = bilinear_upsample(&x, 13, 9).unwrap();
        assert_eq!(y.shape(), &[3, 13, 9]);
        assert!(y.data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn checkerboard_center() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = bilinear_upsample(&x, 3, 3).unwrap();
        assert_eq!(y.data()[4], 0.5);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[2], 1.0);
        assert_eq!(y.data()[1], 0.5);
    }

    #[test]
    fn shrinking_rejected() {
        let x = Tensor::<f32>::zeros(&[4, 4]);
        assert!(bilinear_upsample(&x, 3, 4).is_err());
    }
}
