//! Batched matrix multiplication and affine (linear) layers on the tape.

use super::{Tensor, TensorError};

/// Row-major C[m,n] = A·B with optional logical transposes. `ta` means the
/// buffer holds Aᵀ (k-by-m), likewise `tb`.
pub(crate) fn mm(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

impl Tensor {
    /// Batched matmul: `[B,M,K] x [B,K,P] -> [B,M,P]`.
    pub fn matmul_batched(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_batched",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (bsz, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; bsz * m * p];
        for i in 0..bsz {
            let c = mm(&a[i * m * k..(i + 1) * m * k], &b[i * k * p..(i + 1) * k * p], m, k, p, false, false);
            out[i * m * p..(i + 1) * m * p].copy_from_slice(&c);
        }
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            vec![bsz, m, p],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let mut ga = vec![0.0; bsz * m * k];
                let mut gb = vec![0.0; bsz * k * p];
                for i in 0..bsz {
                    // dA = G·Bᵀ ; dB = Aᵀ·G
                    let gi = &g[i * m * p..(i + 1) * m * p];
                    let da = mm(gi, &b[i * k * p..(i + 1) * k * p], m, p, k, false, true);
                    ga[i * m * k..(i + 1) * m * k].copy_from_slice(&da);
                    let db = mm(&a[i * m * k..(i + 1) * m * k], gi, k, m, p, true, false);
                    gb[i * k * p..(i + 1) * k * p].copy_from_slice(&db);
                }
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&ga);
                parents[1].accumulate_grad(&gb);
            }),
        ))
    }

    /// Affine map over the last axis: `[..., D_in] x [D_out, D_in] + [D_out]`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
        let sw = weight.shape();
        let din = *self.shape().last().ok_or(TensorError::Dimension {
            op: "linear",
            msg: "input must have rank >= 1".into(),
        })?;
        if sw.len() != 2 || sw[1] != din || bias.shape() != [sw[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let dout = sw[0];
        let rows = self.len() / din;
        // out = X·Wᵀ + b, X flattened to [rows, din]
        let mut out = mm(&self.data(), &weight.data(), rows, din, dout, false, true);
        {
            let b = bias.data();
            for r in 0..rows {
                for (o, bv) in b.iter().enumerate() {
                    out[r * dout + o] += bv;
                }
            }
        }
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = dout;
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let w = parents[1].data();
                // dX = G·W ; dW = Gᵀ·X ; db = column sums of G
                let gx = mm(g, &w, rows, dout, din, false, false);
                let gw = mm(g, &x, dout, rows, din, true, false);
                drop(x);
                drop(w);
                let mut gb = vec![0.0; dout];
                for r in 0..rows {
                    for o in 0..dout {
                        gb[o] += g[r * dout + o];
                    }
                }
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&gw);
                parents[2].accumulate_grad(&gb);
            }),
        ))
    }
}
