use crate::error::{Error, Result};
use crate::nn::layer::{LayerGrads, LayerParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub params: LayerGrads<T>,
}

#[derive(Clone, Copy, Debug)]
struct ConvShape {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvShape {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        params: &LayerParams<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (cin, h, w) = input.dims3()?;
        let [cout, kc, kh, kw] = params.weight.shape()[..] else {
            return Err(Error::Config(format!(
                "conv weight must be [out, in, kh, kw], got {:?}",
                params.weight.shape()
            )));
        };
        if kc != cin {
            return Err(Error::Config(format!(
                "conv expects {kc} input channels, input has {cin}"
            )));
        }
        if params.bias.shape() != [cout] {
            return Err(Error::Config(format!(
                "conv bias must be [{cout}], got {:?}",
                params.bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Config(format!(
                "kernel {kh}x{kw} does not fit padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvShape {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate read by output `o` at kernel offset `kk`, if inside the image.
    #[inline]
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        (o * self.stride + kk).checked_sub(self.pad).filter(|&i| i < limit)
    }
}

/// Output rows per im2col block; keeps the patch matrix near 256 KiB.
fn block_rows(s: &ConvShape) -> usize {
    (65_536 / (s.k() * s.wo).max(1)).clamp(1, s.ho)
}

/// `[K, rows * wo]` patch matrix for output rows `oy0..oy0 + rows`:
/// row `(c, ki, kj)`, column `(oy, ox)`.
fn im2col<T: Scalar>(input: &[T], s: &ConvShape, oy0: usize, rows: usize, col: &mut Vec<T>) {
    let n = rows * s.wo;
    col.clear();
    col.resize(s.k() * n, T::zero());
    let mut row = 0;
    for c in 0..s.cin {
        let plane = &input[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let dst = &mut col[row * n..(row + 1) * n];
                for r in 0..rows {
                    let oy = oy0 + r;
                    let out = &mut dst[r * s.wo..(r + 1) * s.wo];
                    if s.stride == 1 && s.pad == 0 {
                        let at = (oy + ki) * s.w + kj;
                        out.copy_from_slice(&plane[at..at + s.wo]);
                        continue;
                    }
                    let Some(iy) = s.src(oy, ki, s.h) else { continue };
                    for (ox, o) in out.iter_mut().enumerate() {
                        if let Some(ix) = s.src(ox, kj, s.w) {
                            *o = plane[iy * s.w + ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a block produced by [`im2col`] back onto the input grid.
fn col2im<T: Scalar>(col: &[T], s: &ConvShape, oy0: usize, rows: usize, out: &mut [T]) {
    let n = rows * s.wo;
    let mut row = 0;
    for c in 0..s.cin {
        let plane = &mut out[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let src = &col[row * n..(row + 1) * n];
                for r in 0..rows {
                    let oy = oy0 + r;
                    let vals = &src[r * s.wo..(r + 1) * s.wo];
                    if s.stride == 1 && s.pad == 0 {
                        let at = (oy + ki) * s.w + kj;
                        for (d, &v) in plane[at..at + s.wo].iter_mut().zip(vals) {
                            *d += v;
                        }
                        continue;
                    }
                    let Some(iy) = s.src(oy, ki, s.h) else { continue };
                    for (ox, &v) in vals.iter().enumerate() {
                        if let Some(ix) = s.src(ox, kj, s.w) {
                            plane[iy * s.w + ix] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation of a `C x H x W` input.
///
/// Output spatial size is `floor((H + 2 pad - k) / stride) + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let s = ConvShape::new(input, params, stride, pad)?;
    let (k, n) = (s.k(), s.n());
    let mut out = Vec::with_capacity(s.cout * n);
    for &b in params.bias.data() {
        out.extend(std::iter::repeat_n(b, n));
    }
    let step = block_rows(&s);
    let mut col = Vec::new();
    for oy0 in (0..s.ho).step_by(step) {
        let rows = step.min(s.ho - oy0);
        let bn = rows * s.wo;
        im2col(input.data(), &s, oy0, rows, &mut col);
        T::gemm(
            s.cout,
            k,
            bn,
            T::one(),
            params.weight.data(),
            k,
            1,
            &col,
            bn,
            1,
            T::one(),
            &mut out[oy0 * s.wo..],
            n,
            1,
        );
    }
    Tensor::from_vec(&[s.cout, s.ho, s.wo], out)
}

/// Gradients of [`conv2d`] with respect to its input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let (input, params) = conv2d_backward_with(grad_out, saved_input, params, stride, pad, true)?;
    Ok(ConvGrads {
        input: input.expect("input gradient requested"),
        params,
    })
}

/// [`conv2d_backward`] that skips the input gradient unless `input_grad` is set.
pub(crate) fn conv2d_backward_with<T: Scalar>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    pad: usize,
    input_grad: bool,
) -> Result<(Option<Tensor<T>>, LayerGrads<T>)> {
    let s = ConvShape::new(saved_input, params, stride, pad)?;
    if grad_out.shape() != [s.cout, s.ho, s.wo] {
        return Err(Error::Config(format!(
            "conv upstream gradient {:?} does not match forward output {:?}",
            grad_out.shape(),
            [s.cout, s.ho, s.wo]
        )));
    }
    let (k, n) = (s.k(), s.n());
    let g = grad_out.data();
    let mut grad_w = vec![T::zero(); s.cout * k];
    let mut grad_in = if input_grad {
        vec![T::zero(); s.cin * s.h * s.w]
    } else {
        Vec::new()
    };
    let step = block_rows(&s);
    let mut col = Vec::new();
    let mut grad_col = Vec::new();
    for oy0 in (0..s.ho).step_by(step) {
        let rows = step.min(s.ho - oy0);
        let bn = rows * s.wo;
        let gb = &g[oy0 * s.wo..];
        im2col(saved_input.data(), &s, oy0, rows, &mut col);
        // dW += G [cout, bn] * col^T [bn, k]
        T::gemm(
            s.cout,
            bn,
            k,
            T::one(),
            gb,
            n,
            1,
            &col,
            1,
            bn,
            T::one(),
            &mut grad_w,
            k,
            1,
        );
        if input_grad {
            grad_col.clear();
            grad_col.resize(k * bn, T::zero());
            // dcol = W^T [k, cout] * G [cout, bn]
            T::gemm(
                k,
                s.cout,
                bn,
                T::one(),
                params.weight.data(),
                1,
                k,
                gb,
                n,
                1,
                T::zero(),
                &mut grad_col,
                bn,
                1,
            );
            col2im(&grad_col, &s, oy0, rows, &mut grad_in);
        }
    }
    let grad_b: Vec<T> = g.chunks_exact(n).map(|row| row.iter().copied().sum()).collect();
    let grads = LayerGrads {
        weight: Tensor::from_vec(params.weight.shape(), grad_w)?,
        bias: Tensor::from_vec(&[s.cout], grad_b)?,
    };
    let grad_in = if input_grad {
        Some(Tensor::from_vec(saved_input.shape(), grad_in)?)
    } else {
        None
    };
    Ok((grad_in, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: Vec<f64>, shape: [usize; 4], b: Vec<f64>) -> LayerParams<f64> {
        LayerParams::new(
            Tensor::from_vec(&shape, w).unwrap(),
            Tensor::from_vec(&[shape[0]], b).unwrap(),
        )
    }

    #[test]
    fn zero_input_yields_bias() {
        let p = layer((0..18).map(|v| v as f64).collect(), [2, 1, 3, 3], vec![0.5, -2.0]);
        let x = Tensor::<f64>::zeros(&[1, 3, 3]);
        let y = conv2d(&x, &p, 1, 0).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[0.5, -2.0]);
        let y = conv2d(&x, &p, 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let p = layer(vec![1.0], [1, 1, 1, 1], vec![0.0]);
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, -2.0, 3.0, 4.5, 0.0, 9.0]).unwrap();
        assert_eq!(conv2d(&x, &p, 1, 0).unwrap(), x);
    }

    #[test]
    fn output_size_follows_stride_and_padding() {
        let p = LayerParams::<f64>::zeros(&[4, 2, 3, 3], 4);
        let x = Tensor::<f64>::zeros(&[2, 7, 8]);
        assert_eq!(conv2d(&x, &p, 2, 1).unwrap().shape(), &[4, 4, 4]);
        assert_eq!(conv2d(&x, &p, 1, 0).unwrap().shape(), &[4, 5, 6]);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let p = LayerParams::<f32>::zeros(&[1, 3, 3, 3], 1);
        let x = Tensor::<f32>::zeros(&[2, 5, 5]);
        assert!(matches!(conv2d(&x, &p, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = layer((0..18).map(|v| v as f64 * 0.1).collect(), [2, 1, 3, 3], vec![1.0, 1.0]);
        let x = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let g = conv2d_backward(&Tensor::zeros(&[2, 2, 2]), &x, &p, 1, 0).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.params.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.params.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let p = layer(vec![0.7], [1, 1, 1, 1], vec![0.1]);
        let x = Tensor::from_vec(&[1, 1, 1], vec![3.0]).unwrap();
        let go = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let g = conv2d_backward(&go, &x, &p, 1, 0).unwrap();
        assert_eq!(g.params.weight.data(), &[6.0]);
        assert_eq!(g.params.bias.data(), &[2.0]);
        assert_eq!(g.input.data(), &[0.7 * 2.0]);
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let p = LayerParams::<f64>::zeros(&[2, 1, 3, 3], 2);
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        assert!(conv2d_backward(&Tensor::zeros(&[2, 3, 3]), &x, &p, 1, 0).is_err());
    }
}
