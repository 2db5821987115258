//! Multi-head feature soft-attention: global descriptors, feature
//! cross-correlation embedding, and the attention readout with its
//! textural-spectral fusion tail.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, Conv2d, Linear};
use super::ModelError;
use crate::tensor::Tensor;

/// Axis the cross-correlation softmax normalizes over.
///
/// `Key` normalizes each query row over the key features (rows sum to 1,
/// textbook attention); `Query` normalizes over query rows per key column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftmaxAxis {
    #[default]
    Key,
    Query,
}

/// How descriptors are centered before cross-correlation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanMode {
    /// One scalar mean over the whole permuted descriptor tensor.
    #[default]
    Global,
    /// Per-descriptor-row mean.
    PerRow,
}

/// The q/k/v global descriptors, each `[f, N, L_red]`.
pub struct DescriptorSet {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

fn center(x: &Tensor, mode: MeanMode) -> Result<Tensor, ModelError> {
    match mode {
        MeanMode::Global => Ok(x.sub_broadcast_scalar(&x.mean())?),
        MeanMode::PerRow => {
            // x is [N, f, L]; subtract the mean of each length-L row via
            // matmuls so the centering stays on the tape.
            let (n, l) = (x.shape()[0], x.shape()[2]);
            let avg = Tensor::full(&[n, l, 1], 1.0 / l as f64);
            let means = x.matmul_batched(&avg)?; // [N, f, 1]
            let ones = Tensor::full(&[n, 1, l], 1.0);
            let expanded = means.matmul_batched(&ones)?; // [N, f, L]
            Ok(x.sub(&expanded)?)
        }
    }
}

/// Mean-centered cross-correlation between query and key descriptors,
/// softmax-normalized: `[N, f_q, f_k]`.
pub fn fcce(
    d: &DescriptorSet,
    mean_mode: MeanMode,
    axis: SoftmaxAxis,
) -> Result<Tensor, ModelError> {
    let qp = d.q.permute(&[1, 0, 2])?;
    let kp = d.k.permute(&[1, 0, 2])?;
    let qc = center(&qp, mean_mode)?;
    let kc = center(&kp, mean_mode)?;
    let corr = qc.matmul_batched(&kc.permute(&[0, 2, 1])?)?;
    let dim = match axis {
        SoftmaxAxis::Query => 1,
        SoftmaxAxis::Key => 2,
    };
    Ok(corr.softmax(dim)?)
}

/// Attention readout: `t = C_tilde x v'`, heads concatenated per feature,
/// then one linear layer back to the spatial length and a reshape to
/// `[f_t, h, w]`.
pub fn mhfsa(
    c_tilde: &Tensor,
    v_prime: &Tensor,
    out_linear: &Linear,
    h: usize,
    w: usize,
) -> Result<Tensor, ModelError> {
    let (n, f) = (c_tilde.shape()[0], c_tilde.shape()[1]);
    let l_red = v_prime.shape()[2];
    if v_prime.shape()[0] != n || v_prime.shape()[1] != c_tilde.shape()[2] {
        return Err(ModelError::Contract(format!(
            "attention shapes disagree: C~ {:?} vs v' {:?}",
            c_tilde.shape(),
            v_prime.shape()
        )));
    }
    let t = c_tilde.matmul_batched(v_prime)?; // [N, f, L_red]
    let t = t.permute(&[1, 0, 2])?.reshape(vec![f, n * l_red])?;
    let t = out_linear.forward(&t)?; // [f, h*w]
    Ok(t.reshape(vec![f, h, w])?)
}

/// One per-scale transformer block: descriptor projections, FCCE/MHFSA,
/// output projection, and the TSFF conv+BN fusion.
pub struct ScaleAttention {
    pub q_layers: Vec<Linear>,
    pub k_layers: Vec<Linear>,
    pub v_layers: Vec<Linear>,
    pub out: Linear,
    pub tsff_conv: Conv2d,
    pub tsff_bn: BatchNorm2d,
    pub features: usize,
    pub height: usize,
    pub width: usize,
    pub l_red: usize,
    pub mean_mode: MeanMode,
    pub softmax_axis: SoftmaxAxis,
}

impl ScaleAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut impl Rng,
        features: usize,
        height: usize,
        width: usize,
        n_heads: usize,
        beta: f64,
        mean_mode: MeanMode,
        softmax_axis: SoftmaxAxis,
    ) -> Result<ScaleAttention, ModelError> {
        let l_full = height * width;
        let l_red = (beta * l_full as f64).round() as usize;
        if l_red == 0 {
            return Err(ModelError::Contract(format!(
                "beta {beta} reduces descriptor length {l_full} to zero"
            )));
        }
        let mut mk = |_: &str| -> Vec<Linear> {
            (0..n_heads).map(|_| Linear::new(rng, l_full, l_red)).collect()
        };
        let q_layers = mk("q");
        let k_layers = mk("k");
        let v_layers = mk("v");
        let out = Linear::new(rng, n_heads * l_red, l_full);
        Ok(ScaleAttention {
            q_layers,
            k_layers,
            v_layers,
            out,
            tsff_conv: Conv2d::new(rng, 2 * features, features, 3, 1, 1),
            tsff_bn: BatchNorm2d::new(features),
            features,
            height,
            width,
            l_red,
            mean_mode,
            softmax_axis,
        })
    }

    fn project(&self, map: &Tensor, layers: &[Linear]) -> Result<Tensor, ModelError> {
        let f = map.shape()[0];
        if f != self.features || map.shape()[1] != self.height || map.shape()[2] != self.width {
            return Err(ModelError::Contract(format!(
                "feature map {:?} does not match attention block {}x{}x{}",
                map.shape(),
                self.features,
                self.height,
                self.width
            )));
        }
        let flat = map.reshape(vec![f, self.height * self.width])?;
        let mut heads = Vec::with_capacity(layers.len());
        for layer in layers {
            heads.push(layer.forward(&flat)?.reshape(vec![f, 1, self.l_red])?);
        }
        Ok(Tensor::concat(&heads, 1)?) // [f, N, L_red]
    }

    /// N per-stream linear projections of the flattened feature maps.
    pub fn build_descriptors(
        &self,
        q_map: &Tensor,
        k_map: &Tensor,
        v_map: &Tensor,
    ) -> Result<DescriptorSet, ModelError> {
        Ok(DescriptorSet {
            q: self.project(q_map, &self.q_layers)?,
            k: self.project(k_map, &self.k_layers)?,
            v: self.project(v_map, &self.v_layers)?,
        })
    }

    /// Full attention path: descriptors -> FCCE -> MHFSA -> `T`.
    pub fn transfer(
        &self,
        q_map: &Tensor,
        k_map: &Tensor,
        v_map: &Tensor,
    ) -> Result<Tensor, ModelError> {
        let d = self.build_descriptors(q_map, k_map, v_map)?;
        let c_tilde = fcce(&d, self.mean_mode, self.softmax_axis)?;
        let v_prime = d.v.permute(&[1, 0, 2])?;
        mhfsa(&c_tilde, &v_prime, &self.out, self.height, self.width)
    }

    /// TSFF: BatchNorm(Conv(Cat(T, F))).
    pub fn fuse(&self, t: &Tensor, f: &Tensor, training: bool) -> Result<Tensor, ModelError> {
        if t.shape()[1..] != f.shape()[1..] {
            return Err(ModelError::Contract(format!(
                "TSFF spatial mismatch: T {:?} vs F {:?}",
                t.shape(),
                f.shape()
            )));
        }
        let cat = Tensor::concat(&[t.clone(), f.clone()], 0)?;
        let fused = self.tsff_conv.forward(&cat)?;
        Ok(self.tsff_bn.forward(&fused, training)?)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, layers) in [
            ("q", &self.q_layers),
            ("k", &self.k_layers),
            ("v", &self.v_layers),
        ] {
            for (i, l) in layers.iter().enumerate() {
                l.collect_params(&format!("{prefix}.{name}{i}"), out);
            }
        }
        self.out.collect_params(&format!("{prefix}.out"), out);
        self.tsff_conv
            .collect_params(&format!("{prefix}.tsff.conv"), out);
        self.tsff_bn.collect_params(&format!("{prefix}.tsff.bn"), out);
    }
}
