//! Dense kernels and their backward passes. Matrices are row-major; `x` has
//! `n` rows. Backward functions accumulate into their gradient outputs.

use rand::Rng;

use super::Tensor;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `y = x·W + b`.
pub(crate) fn linear(p: &[f32], w: Tensor, b: Tensor, x: &[f64], n: usize) -> Vec<f64> {
    let (din, dout) = (w.rows, w.cols);
    let (wv, bv) = (w.of(p), b.of(p));
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let row = &mut y[i * dout..(i + 1) * dout];
        for (r, &bo) in row.iter_mut().zip(bv) {
            *r = bo as f64;
        }
        for k in 0..din {
            let xik = x[i * din + k];
            if xik == 0.0 {
                continue;
            }
            let wk = &wv[k * dout..(k + 1) * dout];
            for (r, &wko) in row.iter_mut().zip(wk) {
                *r += xik * wko as f64;
            }
        }
    }
    y
}

/// Gradients of `linear` given `dy`; adds `dy·Wᵀ` into `dx` when provided.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    p: &[f32],
    w: Tensor,
    b: Tensor,
    x: &[f64],
    n: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    grads: &mut [f64],
) {
    let (din, dout) = (w.rows, w.cols);
    for i in 0..n {
        let dyi = &dy[i * dout..(i + 1) * dout];
        for (g, &d) in grads[b.range()].iter_mut().zip(dyi) {
            *g += d;
        }
        let dw = &mut grads[w.range()];
        for k in 0..din {
            let xik = x[i * din + k];
            if xik == 0.0 {
                continue;
            }
            for (g, &d) in dw[k * dout..(k + 1) * dout].iter_mut().zip(dyi) {
                *g += xik * d;
            }
        }
    }
    if let Some(dx) = dx {
        let wv = w.of(p);
        for i in 0..n {
            let dyi = &dy[i * dout..(i + 1) * dout];
            for k in 0..din {
                let wk = &wv[k * dout..(k + 1) * dout];
                dx[i * din + k] += wk.iter().zip(dyi).map(|(&w, &d)| w as f64 * d).sum::<f64>();
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn layer_norm(
    p: &[f32],
    g: Tensor,
    b: Tensor,
    x: &[f64],
    n: usize,
) -> (Vec<f64>, LnCache) {
    let d = g.len();
    let (gv, bv) = (g.of(p), b.of(p));
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for c in 0..d {
            let h = (row[c] - mean) * r;
            xhat[i * d + c] = h;
            y[i * d + c] = gv[c] as f64 * h + bv[c] as f64;
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    p: &[f32],
    g: Tensor,
    b: Tensor,
    cache: &LnCache,
    dy: &[f64],
    dx: &mut [f64],
    grads: &mut [f64],
) {
    let d = g.len();
    let n = cache.rstd.len();
    let gv = g.of(p);
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let dyi = &dy[i * d..(i + 1) * d];
        for c in 0..d {
            grads[g.off + c] += dyi[c] * xh[c];
            grads[b.off + c] += dyi[c];
            dxhat[c] = dyi[c] * gv[c] as f64;
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[i * d + c] += cache.rstd[i] * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Inverted-dropout scale per element, `None` when dropout is inactive.
pub(crate) fn dropout_mask<R: Rng>(rng: Option<&mut R>, len: usize, rate: f64) -> Option<Vec<f64>> {
    let rng = rng.filter(|_| rate > 0.0)?;
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect(),
    )
}

pub(crate) fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(a, s)| *a *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn softmax_normalizes() {
        let mut v = vec![1000.0, 1001.0, -5.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ls = log_softmax(&[1.0, 2.0, 3.0]);
        assert!((ls.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let d = 4;
        let p = [1.0f32, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let g = Tensor {
            off: 0,
            rows: 1,
            cols: d,
        };
        let b = Tensor {
            off: 4,
            rows: 1,
            cols: d,
        };
        let (y, _) = layer_norm(&p, g, b, &[1.0, 2.0, 3.0, 4.0], 1);
        let mean = y.iter().sum::<f64>() / 4.0;
        let var = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-9);
    }

    #[test]
    fn linear_hand_product() {
        // W = [[1,2],[3,4]], b = [0.5,-0.5]
        let p = [1.0f32, 2.0, 3.0, 4.0, 0.5, -0.5];
        let w = Tensor {
            off: 0,
            rows: 2,
            cols: 2,
        };
        let b = Tensor {
            off: 4,
            rows: 1,
            cols: 2,
        };
        assert_eq!(
            linear(&p, w, b, &[1.0, 1.0, 0.0, 2.0], 2),
            vec![4.5, 5.5, 6.5, 7.5]
        );
    }
}
