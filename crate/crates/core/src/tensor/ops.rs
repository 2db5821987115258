//! Elementwise ops, reductions, softmax, and shape manipulation.

use super::{numel, Tensor, TensorError};

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("add", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("sub", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                parents[1].accumulate_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        check_same_shape("mul", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let ga: Vec<f64> = g.iter().zip(b.iter()).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = g.iter().zip(a.iter()).map(|(g, a)| g * a).collect();
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&ga);
                parents[1].accumulate_grad(&gb);
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx: Vec<f64> = g.iter().map(|x| x * c).collect();
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        )
    }

    /// Subtract a one-element tensor from every entry, keeping both sides
    /// on the tape (used for mean-centering descriptors).
    pub fn sub_broadcast_scalar(&self, s: &Tensor) -> Result<Tensor, TensorError> {
        if s.len() != 1 {
            return Err(TensorError::Dimension {
                op: "sub_broadcast_scalar",
                msg: format!("subtrahend must be scalar, got {:?}", s.shape()),
            });
        }
        let sv = s.item();
        let data: Vec<f64> = self.data().iter().map(|x| x - sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                let gs: f64 = -g.iter().sum::<f64>();
                parents[1].accumulate_grad(&[gs]);
            }),
        ))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn abs(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.abs()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| {
                let x = parents[0].data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(g, x)| g * x.signum())
                    .collect();
                drop(x);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| x.sqrt()).collect();
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(saved.iter())
                    .map(|(g, y)| g * 0.5 / y)
                    .collect();
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.max(0.0)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| {
                let x = parents[0].data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                drop(x);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|x| if *x > 0.0 { *x } else { slope * x })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(g, x)| if *x > 0.0 { *g } else { slope * g })
                    .collect();
                drop(x);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx = vec![g[0]; n];
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s / n as f64],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx = vec![g[0] / n as f64; n];
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Sum of absolute values.
    pub fn norm_l1(&self) -> Tensor {
        self.abs().sum()
    }

    /// Euclidean norm sqrt(sum(x^2)).
    pub fn norm_l2(&self) -> Result<Tensor, TensorError> {
        Ok(self.mul(self)?.sum().sqrt())
    }

    /// Numerically stabilized softmax along `dim`; slices along that axis
    /// sum to 1.
    pub fn softmax(&self, dim: usize) -> Result<Tensor, TensorError> {
        if dim >= self.rank() {
            return Err(TensorError::Dimension {
                op: "softmax",
                msg: format!("dim {} out of range for rank {}", dim, self.rank()),
            });
        }
        let shape = self.shape().to_vec();
        let axis = shape[dim];
        if axis == 0 {
            return Err(TensorError::Dimension {
                op: "softmax",
                msg: "empty softmax axis".into(),
            });
        }
        let inner: usize = shape[dim + 1..].iter().product();
        let outer: usize = shape[..dim].iter().product();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis * inner + i;
                let mut m = f64::NEG_INFINITY;
                for a in 0..axis {
                    m = m.max(x[base + a * inner]);
                }
                let mut z = 0.0;
                for a in 0..axis {
                    let e = (x[base + a * inner] - m).exp();
                    out[base + a * inner] = e;
                    z += e;
                }
                for a in 0..axis {
                    out[base + a * inner] /= z;
                }
            }
        }
        drop(x);
        let saved = out.clone();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                // dx = y * (g - sum(g*y)) along the softmax axis
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * axis * inner + i;
                        let mut dot = 0.0;
                        for a in 0..axis {
                            let idx = base + a * inner;
                            dot += g[idx] * saved[idx];
                        }
                        for a in 0..axis {
                            let idx = base + a * inner;
                            gx[idx] = saved[idx] * (g[idx] - dot);
                        }
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        if numel(&shape) != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape,
            });
        }
        Ok(Tensor::from_op(
            shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        ))
    }

    /// Materialized axis permutation; `perm[i]` names the source axis that
    /// becomes output axis `i`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Dimension {
                op: "permute",
                msg: format!("invalid permutation {:?} for rank {}", perm, rank),
            });
        }
        let src_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
        let data = permute_copy(&self.data(), &src_shape, perm);
        let perm_owned = perm.to_vec();
        Ok(Tensor::from_op(
            out_shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                // Gradient flows through the inverse permutation.
                let mut inv = vec![0usize; perm_owned.len()];
                for (i, &p) in perm_owned.iter().enumerate() {
                    inv[p] = i;
                }
                let gx = permute_copy(g, &out_shape, &inv);
                parents[0].accumulate_grad(&gx);
            }),
        ))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor, TensorError> {
        if tensors.is_empty() {
            return Err(TensorError::Dimension {
                op: "concat",
                msg: "no tensors given".into(),
            });
        }
        let rank = tensors[0].rank();
        if axis >= rank {
            return Err(TensorError::Dimension {
                op: "concat",
                msg: format!("axis {} out of range for rank {}", axis, rank),
            });
        }
        let mut out_shape = tensors[0].shape().to_vec();
        for t in &tensors[1..] {
            if t.rank() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: out_shape,
                    rhs: t.shape().to_vec(),
                });
            }
            for (d, (&a, &b)) in out_shape.iter().zip(t.shape()).enumerate() {
                if d != axis && a != b {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: out_shape.clone(),
                        rhs: t.shape().to_vec(),
                    });
                }
            }
        }
        out_shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let outer: usize = out_shape[..axis].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for t in tensors {
                let n = t.shape()[axis] * inner;
                let td = t.data();
                data.extend_from_slice(&td[o * n..(o + 1) * n]);
            }
        }
        let axis_sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        Ok(Tensor::from_op(
            out_shape,
            data,
            tensors.to_vec(),
            Box::new(move |g, parents| {
                let total: usize = axis_sizes.iter().sum::<usize>() * inner;
                for (pi, p) in parents.iter().enumerate() {
                    let n = axis_sizes[pi] * inner;
                    let offset: usize = axis_sizes[..pi].iter().sum::<usize>() * inner;
                    let mut gp = Vec::with_capacity(outer * n);
                    for o in 0..outer {
                        let base = o * total + offset;
                        gp.extend_from_slice(&g[base..base + n]);
                    }
                    p.accumulate_grad(&gp);
                }
            }),
        ))
    }
}

fn permute_copy(data: &[f64], src_shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = src_shape.len();
    let mut src_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        src_strides[d] = src_strides[d + 1] * src_shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let out_strides_src: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = numel(src_shape);
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; rank];
    for item in out.iter_mut() {
        let mut src = 0;
        for d in 0..rank {
            src += idx[d] * out_strides_src[d];
        }
        *item = data[src];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}
