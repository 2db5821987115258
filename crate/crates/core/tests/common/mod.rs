//! Independent oracles for the test suite. Everything here is written as
//! plain loops over raw buffers, deliberately sharing no code with the
//! library implementations it checks.

#![allow(dead_code)]

use hypersharp_core::tensor::Tensor;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{what}: index {i}: {x} vs {y} (diff {})",
            (x - y).abs()
        );
    }
}

/// Central finite differences of a scalar-valued computation with respect
/// to one leaf parameter. `f` must re-run the computation from scratch,
/// reading the parameter's current data.
pub fn finite_diff_grad(param: &Tensor, h: f64, mut f: impl FnMut() -> f64) -> Vec<f64> {
    let n = param.len();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let orig = param.data()[i];
        param.update_data(|d| d[i] = orig + h);
        let up = f();
        param.update_data(|d| d[i] = orig - h);
        let down = f();
        param.update_data(|d| d[i] = orig);
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Checks the autodiff gradient of `param` in the scalar computation `f`
/// against central differences, elementwise relative error below `tol`.
pub fn check_grad(param: &Tensor, tol: f64, what: &str, mut f: impl FnMut() -> Tensor) {
    param.zero_grad();
    let loss = f();
    loss.backward().expect("backward");
    let analytic = param.grad().unwrap_or_else(|| panic!("{what}: no grad"));
    let numeric = finite_diff_grad(param, 1e-5, || f().item());
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
        assert!(
            err < tol,
            "{what}: grad[{i}] analytic {a} vs numeric {n} (rel err {err})"
        );
    }
}

/// Six-nested-loop cross-correlation convolution with zero padding,
/// accumulating bias first and then (ci, ky, kx) in ascending order.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += weight[((o * ci + c) * k + ky) * k + kx]
                                * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

// --- naive metric oracles over raw [C,H,W] buffers -------------------------

pub fn oracle_cc(x: &[f64], r: &[f64], c: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..c {
        let xa = &x[b * n..(b + 1) * n];
        let xb = &r[b * n..(b + 1) * n];
        let ma: f64 = xa.iter().sum::<f64>() / n as f64;
        let mb: f64 = xb.iter().sum::<f64>() / n as f64;
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for i in 0..n {
            cov += (xa[i] - ma) * (xb[i] - mb);
            va += (xa[i] - ma) * (xa[i] - ma);
            vb += (xb[i] - mb) * (xb[i] - mb);
        }
        total += cov / (va.sqrt() * vb.sqrt());
    }
    total / c as f64
}

pub fn oracle_sam_degrees(x: &[f64], r: &[f64], c: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for p in 0..n {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for b in 0..c {
            dot += x[b * n + p] * r[b * n + p];
            na += x[b * n + p] * x[b * n + p];
            nb += r[b * n + p] * r[b * n + p];
        }
        total += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos();
    }
    (total / n as f64) * 180.0 / std::f64::consts::PI
}

pub fn oracle_rmse(x: &[f64], r: &[f64]) -> f64 {
    let mse: f64 =
        x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    mse.sqrt()
}

pub fn oracle_psnr(x: &[f64], r: &[f64]) -> f64 {
    20.0 * (1.0 / oracle_rmse(x, r)).log10()
}

pub fn oracle_ergas(x: &[f64], r: &[f64], c: usize, n: usize, ratio: f64) -> f64 {
    let mut acc = 0.0;
    for b in 0..c {
        let xa = &x[b * n..(b + 1) * n];
        let xb = &r[b * n..(b + 1) * n];
        let mean: f64 = xb.iter().sum::<f64>() / n as f64;
        let mse: f64 =
            xa.iter().zip(xb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        acc += mse / (mean * mean);
    }
    100.0 / ratio * (acc / c as f64).sqrt()
}

pub fn oracle_mae_per_band(x: &[f64], r: &[f64], c: usize, n: usize) -> Vec<f64> {
    (0..c)
        .map(|b| {
            x[b * n..(b + 1) * n]
                .iter()
                .zip(&r[b * n..(b + 1) * n])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

// --- brute-force attention oracle ------------------------------------------

fn oracle_softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Textbook single-head soft-attention over feature rows: center q and k by
/// their global means, correlate, row-softmax, apply to v. All matrices are
/// `f x l` row-major.
pub fn oracle_attention(q: &[f64], k: &[f64], v: &[f64], f: usize, l: usize) -> Vec<f64> {
    let mq: f64 = q.iter().sum::<f64>() / q.len() as f64;
    let mk: f64 = k.iter().sum::<f64>() / k.len() as f64;
    let mut corr = vec![0.0; f * f];
    for i in 0..f {
        for j in 0..f {
            let mut acc = 0.0;
            for t in 0..l {
                acc += (q[i * l + t] - mq) * (k[j * l + t] - mk);
            }
            corr[i * f + j] = acc;
        }
    }
    for row in corr.chunks_mut(f) {
        oracle_softmax_row(row);
    }
    let mut out = vec![0.0; f * l];
    for i in 0..f {
        for t in 0..l {
            let mut acc = 0.0;
            for j in 0..f {
                acc += corr[i * f + j] * v[j * l + t];
            }
            out[i * l + t] = acc;
        }
    }
    out
}

// --- misc ------------------------------------------------------------------

/// Keys cubic kernel (a = -0.5) evaluated directly from the piecewise
/// polynomial definition.
pub fn oracle_keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Sum of squared 4-neighbour Laplacian responses: a high-frequency energy
/// proxy.
pub fn laplacian_energy(img: &[f64], h: usize, w: usize) -> f64 {
    let mut e = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let lap = 4.0 * img[y * w + x]
                - img[(y - 1) * w + x]
                - img[(y + 1) * w + x]
                - img[y * w + x - 1]
                - img[y * w + x + 1];
            e += lap * lap;
        }
    }
    e
}
