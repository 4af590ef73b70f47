use maskseed::nn::{conv2d, conv2d_backward, LayerParams};
use maskseed::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
struct Case {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..4, 1usize..4, prop_oneof![Just(1usize), Just(3), Just(5)], 1usize..3, 0usize..3, any::<u64>())
        .prop_flat_map(|(cin, cout, k, stride, pad, seed)| {
            let lo = k.saturating_sub(2 * pad).max(1);
            (lo..lo + 9, lo..lo + 9).prop_map(move |(h, w)| Case {
                cin,
                cout,
                k,
                stride,
                pad,
                h,
                w,
                seed,
            })
        })
}

fn at(x: &[f64], c: usize, y: isize, xx: isize, h: usize, w: usize) -> f64 {
    if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
        0.0
    } else {
        x[(c * h + y as usize) * w + xx as usize]
    }
}

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Direct seven-loop cross-correlation.
fn naive_forward(x: &[f64], wt: &[f64], b: &[f64], c: &Case) -> Vec<f64> {
    let (ho, wo) = (out_size(c.h, c.k, c.stride, c.pad), out_size(c.w, c.k, c.stride, c.pad));
    let mut out = vec![0.0; c.cout * ho * wo];
    for o in 0..c.cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b[o];
                for i in 0..c.cin {
                    for ky in 0..c.k {
                        for kx in 0..c.k {
                            let y = (oy * c.stride + ky) as isize - c.pad as isize;
                            let xx = (ox * c.stride + kx) as isize - c.pad as isize;
                            s += wt[((o * c.cin + i) * c.k + ky) * c.k + kx] * at(x, i, y, xx, c.h, c.w);
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

/// Adjoint of the direct loop: each output tap scatters back to its input and weight.
fn naive_backward(x: &[f64], wt: &[f64], g: &[f64], c: &Case) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = (out_size(c.h, c.k, c.stride, c.pad), out_size(c.w, c.k, c.stride, c.pad));
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; c.cout];
    for o in 0..c.cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let go = g[(o * ho + oy) * wo + ox];
                gb[o] += go;
                for i in 0..c.cin {
                    for ky in 0..c.k {
                        for kx in 0..c.k {
                            let y = (oy * c.stride + ky) as isize - c.pad as isize;
                            let xx = (ox * c.stride + kx) as isize - c.pad as isize;
                            if y < 0 || xx < 0 || y as usize >= c.h || xx as usize >= c.w {
                                continue;
                            }
                            let xi = (i * c.h + y as usize) * c.w + xx as usize;
                            let wi = ((o * c.cin + i) * c.k + ky) * c.k + kx;
                            gw[wi] += go * x[xi];
                            gx[xi] += go * wt[wi];
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn conv_matches_direct_loops(c in case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let x = Tensor::<f64>::uniform(&[c.cin, c.h, c.w], 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&[c.cout, c.cin, c.k, c.k], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[c.cout], 1.0, &mut rng);
        let p = LayerParams::new(wt.clone(), b.clone());

        let y = conv2d(&x, &p, c.stride, c.pad).unwrap();
        let (ho, wo) = (out_size(c.h, c.k, c.stride, c.pad), out_size(c.w, c.k, c.stride, c.pad));
        prop_assert_eq!(y.shape(), &[c.cout, ho, wo]);
        prop_assert!(close(y.data(), &naive_forward(x.data(), wt.data(), b.data(), &c)));

        let g = Tensor::<f64>::uniform(&[c.cout, ho, wo], 1.0, &mut rng);
        let grads = conv2d_backward(&g, &x, &p, c.stride, c.pad).unwrap();
        let (gx, gw, gb) = naive_backward(x.data(), wt.data(), g.data(), &c);
        prop_assert!(close(grads.input.data(), &gx));
        prop_assert!(close(grads.params.weight.data(), &gw));
        prop_assert!(close(grads.params.bias.data(), &gb));
    }
}
