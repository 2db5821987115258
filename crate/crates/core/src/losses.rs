//! Training losses: L1 reconstruction, perceptual distance on synthesized
//! RGB through a frozen feature network, and the transfer-perceptual term
//! that pulls the predicted cube's features toward the transferred
//! textures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{rgb_weight_matrix, apply_spectral_weights, PipelineError, SpectralResponse};
use crate::model::fe::FeatureExtractor;
use crate::model::layers::Conv2d;
use crate::model::ModelError;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_vgg_per: f64,
    pub lambda_t_per: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            lambda_rec: 1.0,
            lambda_vgg_per: 0.1,
            lambda_t_per: 0.05,
        }
    }
}

/// Fixed (non-trainable) convolutional feature extractor over 3-channel
/// input, standing in for a pretrained perceptual network. Weights are
/// seeded and frozen; a weight file in the checkpoint format is a drop-in
/// replacement via `load_weights`.
pub struct PerceptualNet {
    convs: Vec<Conv2d>,
    /// Whether a 2x2 average pool precedes each conv.
    pools: Vec<bool>,
    /// 1-based index of the conv activation used as the feature tap.
    pub tap: usize,
}

impl PerceptualNet {
    pub fn new(seed: u64, tap: usize) -> Result<PerceptualNet, LossError> {
        // 5-conv stack, 2x down (pool + conv) at the 2nd and 4th layer
        let plan = [
            (3, 16, false),
            (16, 32, true),
            (32, 32, false),
            (32, 64, true),
            (64, 64, false),
        ];
        if tap == 0 || tap > plan.len() {
            return Err(LossError::Contract(format!(
                "tap layer {tap} out of range 1..={}",
                plan.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut pools = Vec::new();
        for &(ci, co, pool) in &plan {
            let c = Conv2d::new(&mut rng, ci, co, 3, 1, 1);
            // freeze: replace trainable leaves with plain tensors
            convs.push(Conv2d {
                weight: c.weight.detach(),
                bias: c.bias.detach(),
                stride: c.stride,
                padding: c.padding,
            });
            pools.push(pool);
        }
        Ok(PerceptualNet { convs, pools, tap })
    }

    /// Feature map at the tap layer for a `[3,H,W]` input.
    pub fn features(&self, rgb: &Tensor) -> Result<Tensor, LossError> {
        let mut h = rgb.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if self.pools[i] {
                h = h.avg_pool2()?;
            }
            h = conv.forward(&h)?.relu();
            if i + 1 == self.tap {
                return Ok(h);
            }
        }
        unreachable!("tap validated in constructor")
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.convs
            .iter()
            .flat_map(|c| [&c.weight, &c.bias])
            .collect()
    }

    /// Overwrite the frozen weights from `(name, shape, values)` blobs in
    /// declaration order (conv0.weight, conv0.bias, ...).
    pub fn load_weights(&mut self, blobs: &[(Vec<usize>, Vec<f64>)]) -> Result<(), LossError> {
        let mut it = blobs.iter();
        for (i, conv) in self.convs.iter_mut().enumerate() {
            for t in [&mut conv.weight, &mut conv.bias] {
                let (shape, values) = it.next().ok_or_else(|| {
                    LossError::Contract(format!("missing weight blob for conv {i}"))
                })?;
                if t.shape() != shape.as_slice() {
                    return Err(LossError::Contract(format!(
                        "weight blob {i} has shape {shape:?}, expected {:?}",
                        t.shape()
                    )));
                }
                *t = Tensor::from_vec(shape.clone(), values.clone())?;
            }
        }
        Ok(())
    }
}

fn check_same(op: &str, x: &Tensor, x_ref: &Tensor) -> Result<(), LossError> {
    if x.shape() != x_ref.shape() {
        return Err(LossError::Contract(format!(
            "{op}: shape {:?} vs {:?}",
            x.shape(),
            x_ref.shape()
        )));
    }
    Ok(())
}

/// L1 reconstruction loss: mean absolute error over all entries.
pub fn loss_rec(x: &Tensor, x_ref: &Tensor) -> Result<Tensor, LossError> {
    check_same("loss_rec", x, x_ref)?;
    Ok(x_ref.sub(x)?.abs().mean())
}

/// Euclidean norm of the difference divided by the element count.
fn normalized_l2(a: &Tensor, b: &Tensor) -> Result<Tensor, LossError> {
    let d = a.sub(b)?;
    let n = d.len() as f64;
    Ok(d.norm_l2()?.scale(1.0 / n))
}

/// Perceptual loss on synthesized RGB through the frozen net's tap layer.
pub fn loss_vgg_per(
    x: &Tensor,
    x_ref: &Tensor,
    net: &PerceptualNet,
    responses: &[SpectralResponse; 3],
) -> Result<Tensor, LossError> {
    check_same("loss_vgg_per", x, x_ref)?;
    let wmat = rgb_weight_matrix(responses, x.shape()[0])?;
    let fx = net.features(&apply_spectral_weights(x, &wmat)?)?;
    let fr = net.features(&apply_spectral_weights(&x_ref.detach(), &wmat)?)?;
    normalized_l2(&fr, &fx)
}

/// Transfer-perceptual loss: feature distance between the predicted cube's
/// HSI features and the transferred textures at each enabled scale. The
/// `t_maps` are treated as constants (detached).
pub fn loss_transfer_per(
    x: &Tensor,
    t_maps: &[Option<Tensor>; 3],
    fe_hsi: &FeatureExtractor,
) -> Result<Tensor, LossError> {
    if t_maps.iter().all(|t| t.is_none()) {
        return Ok(Tensor::scalar(0.0));
    }
    let taps = fe_hsi.forward(x)?;
    let mut total = Tensor::scalar(0.0);
    for (s, t) in t_maps.iter().enumerate() {
        if let Some(t) = t {
            let f = taps.at_scale(s);
            if f.shape() != t.shape() {
                return Err(LossError::Contract(format!(
                    "transfer tap at scale index {s} has shape {:?}, T has {:?}",
                    f.shape(),
                    t.shape()
                )));
            }
            total = total.add(&normalized_l2(f, &t.detach())?)?;
        }
    }
    Ok(total)
}

/// Components of one loss evaluation, pre-weighting.
pub struct LossBreakdown {
    pub total: Tensor,
    pub rec: f64,
    pub vgg_per: f64,
    pub t_per: f64,
}

/// Weighted combination of the three terms.
pub fn loss_overall(
    x: &Tensor,
    x_ref: &Tensor,
    t_maps: &[Option<Tensor>; 3],
    fe_hsi: &FeatureExtractor,
    net: &PerceptualNet,
    responses: &[SpectralResponse; 3],
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    let zero = Tensor::scalar(0.0);
    let rec = if weights.lambda_rec != 0.0 {
        loss_rec(x, x_ref)?
    } else {
        zero.clone()
    };
    let vgg = if weights.lambda_vgg_per != 0.0 {
        loss_vgg_per(x, x_ref, net, responses)?
    } else {
        zero.clone()
    };
    let tper = if weights.lambda_t_per != 0.0 {
        loss_transfer_per(x, t_maps, fe_hsi)?
    } else {
        zero
    };
    let total = rec
        .scale(weights.lambda_rec)
        .add(&vgg.scale(weights.lambda_vgg_per))?
        .add(&tper.scale(weights.lambda_t_per))?;
    Ok(LossBreakdown {
        total,
        rec: rec.item(),
        vgg_per: vgg.item(),
        t_per: tper.item(),
    })
}
