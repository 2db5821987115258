//! 2-D convolution, transposed convolution, and batch normalization.
//!
//! conv2d accumulates per output element in (ci, ky, kx) order so that the
//! result is bit-identical to a naive six-nested-loop reference in f64.

use super::{Tensor, TensorError};

fn conv_out_size(
    op: &'static str,
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    let padded = input + 2 * pad;
    if padded < k || (padded - k) % stride != 0 {
        return Err(TensorError::Dimension {
            op,
            msg: format!(
                "non-integral output size for input {input}, kernel {k}, stride {stride}, padding {pad}"
            ),
        });
    }
    Ok((padded - k) / stride + 1)
}

/// Valid output range [lo, hi] such that `o*stride + kk - pad` stays inside
/// `[0, limit)`.
fn valid_range(kk: usize, pad: usize, stride: usize, limit: usize, out_size: usize) -> (usize, usize) {
    let lo = if pad > kk {
        (pad - kk + stride - 1) / stride
    } else {
        0
    };
    let max_i = limit as isize - 1 - kk as isize + pad as isize;
    if max_i < 0 {
        return (1, 0); // empty
    }
    let hi = (max_i as usize / stride).min(out_size.saturating_sub(1));
    (lo, hi)
}

impl Tensor {
    /// Cross-correlation convolution of `[C_in,H,W]` with `[C_out,C_in,k,k]`,
    /// zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor, TensorError> {
        let (sx, sw) = (self.shape(), weight.shape());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (ci, h, w) = (sx[0], sx[1], sx[2]);
        let (co, k) = (sw[0], sw[2]);
        if k % 2 == 0 {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!("kernel size {k} must be odd"),
            });
        }
        if bias.shape() != [co] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: bias.shape().to_vec(),
                rhs: vec![co],
            });
        }
        let oh = conv_out_size("conv2d", h, k, stride, padding)?;
        let ow = conv_out_size("conv2d", w, k, stride, padding)?;
        let x = self.data();
        let wt = weight.data();
        let b = bias.data();
        let mut out = vec![0.0; co * oh * ow];
        for c in 0..co {
            out[c * oh * ow..(c + 1) * oh * ow].fill(b[c]);
        }
        for c in 0..co {
            let och = &mut out[c * oh * ow..(c + 1) * oh * ow];
            for ic in 0..ci {
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(ky, padding, stride, h, oh);
                    for kx in 0..k {
                        let wv = wt[((c * ci + ic) * k + ky) * k + kx];
                        let (xlo, xhi) = valid_range(kx, padding, stride, w, ow);
                        if ylo > yhi || xlo > xhi {
                            continue;
                        }
                        for oy in ylo..=yhi {
                            let iy = oy * stride + ky - padding;
                            let xrow = &x[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                            let orow = &mut och[oy * ow..(oy + 1) * ow];
                            for ox in xlo..=xhi {
                                orow[ox] += wv * xrow[ox * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
        drop(x);
        drop(wt);
        drop(b);
        Ok(Tensor::from_op(
            vec![co, oh, ow],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let wt = parents[1].data();
                let mut gx = vec![0.0; ci * h * w];
                let mut gw = vec![0.0; co * ci * k * k];
                let mut gb = vec![0.0; co];
                for c in 0..co {
                    let gch = &g[c * oh * ow..(c + 1) * oh * ow];
                    gb[c] += gch.iter().sum::<f64>();
                    for ic in 0..ci {
                        for ky in 0..k {
                            let (ylo, yhi) = valid_range(ky, padding, stride, h, oh);
                            for kx in 0..k {
                                let (xlo, xhi) = valid_range(kx, padding, stride, w, ow);
                                if ylo > yhi || xlo > xhi {
                                    continue;
                                }
                                let wv = wt[((c * ci + ic) * k + ky) * k + kx];
                                let mut dw = 0.0;
                                for oy in ylo..=yhi {
                                    let iy = oy * stride + ky - padding;
                                    let xrow = &x[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                                    let gxrow = &mut gx[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                                    let grow = &gch[oy * ow..(oy + 1) * ow];
                                    for ox in xlo..=xhi {
                                        let ix = ox * stride + kx - padding;
                                        dw += grow[ox] * xrow[ix];
                                        gxrow[ix] += wv * grow[ox];
                                    }
                                }
                                gw[((c * ci + ic) * k + ky) * k + kx] += dw;
                            }
                        }
                    }
                }
                drop(x);
                drop(wt);
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&gw);
                parents[2].accumulate_grad(&gb);
            }),
        ))
    }

    /// Transposed convolution (learned upsampler) of `[C_in,H,W]` with
    /// weight `[C_in,C_out,k,k]`; output is `(H-1)*stride + k - 2*padding`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor, TensorError> {
        let (sx, sw) = (self.shape(), weight.shape());
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] || sw[2] != sw[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (ci, h, w) = (sx[0], sx[1], sx[2]);
        let (co, k) = (sw[1], sw[2]);
        if bias.shape() != [co] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: bias.shape().to_vec(),
                rhs: vec![co],
            });
        }
        let oh_i = (h as isize - 1) * stride as isize + k as isize - 2 * padding as isize;
        let ow_i = (w as isize - 1) * stride as isize + k as isize - 2 * padding as isize;
        if oh_i <= 0 || ow_i <= 0 {
            return Err(TensorError::Dimension {
                op: "conv_transpose2d",
                msg: format!("non-positive output size {oh_i}x{ow_i}"),
            });
        }
        let (oh, ow) = (oh_i as usize, ow_i as usize);
        let x = self.data();
        let wt = weight.data();
        let b = bias.data();
        let mut out = vec![0.0; co * oh * ow];
        for c in 0..co {
            out[c * oh * ow..(c + 1) * oh * ow].fill(b[c]);
        }
        for ic in 0..ci {
            for c in 0..co {
                let och_base = c * oh * ow;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((ic * co + c) * k + ky) * k + kx];
                        for iy in 0..h {
                            let oy = iy as isize * stride as isize + ky as isize - padding as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let xrow = &x[(ic * h + iy) * w..(ic * h + iy + 1) * w];
                            for (ix, xv) in xrow.iter().enumerate() {
                                let ox = ix as isize * stride as isize + kx as isize
                                    - padding as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                out[och_base + oy as usize * ow + ox as usize] += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        drop(x);
        drop(wt);
        drop(b);
        Ok(Tensor::from_op(
            vec![co, oh, ow],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let wt = parents[1].data();
                let mut gx = vec![0.0; ci * h * w];
                let mut gw = vec![0.0; ci * co * k * k];
                let mut gb = vec![0.0; co];
                for c in 0..co {
                    gb[c] += g[c * oh * ow..(c + 1) * oh * ow].iter().sum::<f64>();
                }
                for ic in 0..ci {
                    for c in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let widx = ((ic * co + c) * k + ky) * k + kx;
                                let wv = wt[widx];
                                let mut dw = 0.0;
                                for iy in 0..h {
                                    let oy = iy as isize * stride as isize + ky as isize
                                        - padding as isize;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    let grow =
                                        &g[(c * oh + oy as usize) * ow..(c * oh + oy as usize + 1) * ow];
                                    let xrow_base = (ic * h + iy) * w;
                                    for ix in 0..w {
                                        let ox = ix as isize * stride as isize + kx as isize
                                            - padding as isize;
                                        if ox < 0 || ox >= ow as isize {
                                            continue;
                                        }
                                        let gv = grow[ox as usize];
                                        dw += gv * x[xrow_base + ix];
                                        gx[xrow_base + ix] += wv * gv;
                                    }
                                }
                                gw[widx] += dw;
                            }
                        }
                    }
                }
                drop(x);
                drop(wt);
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&gw);
                parents[2].accumulate_grad(&gb);
            }),
        ))
    }

    /// Per-channel batch normalization over the spatial axes of `[C,H,W]`.
    ///
    /// Training mode normalizes with batch statistics and updates the
    /// running stats in place; eval mode normalizes with the running stats.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &mut [f64],
        running_var: &mut [f64],
        training: bool,
        eps: f64,
        momentum: f64,
    ) -> Result<Tensor, TensorError> {
        let sx = self.shape();
        if sx.len() != 3 {
            return Err(TensorError::Dimension {
                op: "batch_norm2d",
                msg: format!("expected [C,H,W], got {:?}", sx),
            });
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        if gamma.shape() != [c] || beta.shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm2d",
                lhs: gamma.shape().to_vec(),
                rhs: vec![c],
            });
        }
        let n = h * w;
        let x = self.data();
        let ga = gamma.data();
        let be = beta.data();
        let mut out = vec![0.0; c * n];
        let mut xhat = vec![0.0; c * n];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let xs = &x[ch * n..(ch + 1) * n];
            let (mu, var) = if training {
                let mu = xs.iter().sum::<f64>() / n as f64;
                let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu;
                let unbiased = if n > 1 {
                    var * n as f64 / (n as f64 - 1.0)
                } else {
                    var
                };
                running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
                (mu, var)
            } else {
                (running_mean[ch], running_var[ch])
            };
            let ist = 1.0 / (var + eps).sqrt();
            inv_std[ch] = ist;
            for i in 0..n {
                let xh = (xs[i] - mu) * ist;
                xhat[ch * n + i] = xh;
                out[ch * n + i] = ga[ch] * xh + be[ch];
            }
        }
        drop(x);
        drop(ga);
        drop(be);
        Ok(Tensor::from_op(
            vec![c, h, w],
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                let ga = parents[1].data();
                let mut gx = vec![0.0; c * n];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for ch in 0..c {
                    let gs = &g[ch * n..(ch + 1) * n];
                    let xh = &xhat[ch * n..(ch + 1) * n];
                    let sum_g: f64 = gs.iter().sum();
                    let sum_gxh: f64 = gs.iter().zip(xh).map(|(a, b)| a * b).sum();
                    gb[ch] += sum_g;
                    gg[ch] += sum_gxh;
                    let scale = ga[ch] * inv_std[ch];
                    if training {
                        let mg = sum_g / n as f64;
                        let mgxh = sum_gxh / n as f64;
                        for i in 0..n {
                            gx[ch * n + i] = scale * (gs[i] - mg - xh[i] * mgxh);
                        }
                    } else {
                        for i in 0..n {
                            gx[ch * n + i] = scale * gs[i];
                        }
                    }
                }
                drop(ga);
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&gg);
                parents[2].accumulate_grad(&gb);
            }),
        ))
    }

    /// 2x2 average pooling of `[C,H,W]` with even H and W.
    pub fn avg_pool2(&self) -> Result<Tensor, TensorError> {
        let s = self.shape();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(TensorError::Dimension {
                op: "avg_pool2",
                msg: format!("expected [C,even,even], got {s:?}"),
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (ch * h + 2 * oy) * w + 2 * ox;
                    out[(ch * oh + oy) * ow + ox] =
                        0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = 0.25 * g[(ch * oh + oy) * ow + ox];
                            let base = (ch * h + 2 * oy) * w + 2 * ox;
                            gx[base] += gv;
                            gx[base + 1] += gv;
                            gx[base + w] += gv;
                            gx[base + w + 1] += gv;
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        ))
    }
}
