//! The pansharpening backbone: both feature extractors, per-scale
//! attention blocks with TSFF fusion, residual trunks, learned x2
//! upsamplers, and the final band head with a bicubic global skip.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{MeanMode, ScaleAttention, SoftmaxAxis};
use super::fe::{FeatureExtractor, FeatureTaps};
use super::layers::{Conv2d, ConvTranspose2d, ResBlock, LEAKY_SLOPE};
use super::ModelError;
use crate::image::{bicubic_resample, make_pan_downup, HsiCube, PanImage};
use crate::tensor::Tensor;

pub const UPSCALE: usize = 4;

fn default_fe_channels() -> [usize; 3] {
    // single-core f64 budget; widen for GPU-class hardware
    [8, 16, 32]
}
fn default_heads() -> usize {
    16
}
fn default_beta() -> f64 {
    // 1/64: keeps the N descriptor layers tractable on a single desk CPU
    0.015625
}
fn default_scales() -> [bool; 3] {
    [true, true, true]
}
fn default_res_blocks() -> usize {
    2
}
fn default_seed() -> u64 {
    7
}

/// Everything needed to rebuild the network deterministically.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub bands: usize,
    pub lr_height: usize,
    pub lr_width: usize,
    #[serde(default = "default_fe_channels")]
    pub fe_channels: [usize; 3],
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Attention injection toggles in scale order [x1, x2, x4].
    #[serde(default = "default_scales")]
    pub scales_enabled: [bool; 3],
    /// When set, T = V at every enabled scale (B/L ablation).
    #[serde(default)]
    pub attention_bypass: bool,
    #[serde(default)]
    pub softmax_axis: SoftmaxAxis,
    #[serde(default)]
    pub descriptor_mean: MeanMode,
    #[serde(default = "default_res_blocks")]
    pub res_blocks_per_scale: usize,
    #[serde(default = "default_seed")]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(bands: usize, lr_height: usize, lr_width: usize) -> ModelConfig {
        ModelConfig {
            bands,
            lr_height,
            lr_width,
            fe_channels: default_fe_channels(),
            n_heads: default_heads(),
            beta: default_beta(),
            scales_enabled: default_scales(),
            attention_bypass: false,
            softmax_axis: SoftmaxAxis::default(),
            descriptor_mean: MeanMode::default(),
            res_blocks_per_scale: default_res_blocks(),
            init_seed: default_seed(),
        }
    }

    /// Trunk/feature channel count per scale index (0 = x1, 2 = x4).
    pub fn channels_at(&self, scale_idx: usize) -> usize {
        self.fe_channels[2 - scale_idx]
    }

    /// Feature map spatial size per scale index.
    pub fn size_at(&self, scale_idx: usize) -> (usize, usize) {
        let m = 1 << scale_idx;
        (self.lr_height * m, self.lr_width * m)
    }
}

/// Forward products needed by the losses.
pub struct ForwardPass {
    /// Pansharpened cube `[C, 4H, 4W]`.
    pub x: Tensor,
    /// Bicubic x4 upsampling of the LR input (constant, off-tape).
    pub y_up: Tensor,
    /// Transferred texture maps per enabled scale, in [x1, x2, x4] order.
    pub t_maps: [Option<Tensor>; 3],
}

pub struct HyperTransformerNet {
    pub cfg: ModelConfig,
    pub fe_hsi: FeatureExtractor,
    pub fe_pan: FeatureExtractor,
    head_in: Conv2d,
    trunks: [Vec<ResBlock>; 3],
    att: [ScaleAttention; 3],
    ups: [ConvTranspose2d; 2],
    head_out: Conv2d,
}

impl HyperTransformerNet {
    pub fn new(cfg: ModelConfig) -> Result<HyperTransformerNet, ModelError> {
        if cfg.bands == 0 || cfg.lr_height == 0 || cfg.lr_width == 0 {
            return Err(ModelError::Contract(format!(
                "bad model dims: {} bands, {}x{} LR",
                cfg.bands, cfg.lr_height, cfg.lr_width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let fe_hsi = FeatureExtractor::new(&mut rng, cfg.bands, cfg.fe_channels);
        let fe_pan = FeatureExtractor::new(&mut rng, 1, cfg.fe_channels);
        let head_in = Conv2d::new(&mut rng, cfg.bands, cfg.channels_at(0), 3, 1, 1);
        let mut trunks: [Vec<ResBlock>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (s, trunk) in trunks.iter_mut().enumerate() {
            for _ in 0..cfg.res_blocks_per_scale {
                trunk.push(ResBlock::new(&mut rng, cfg.channels_at(s)));
            }
        }
        let mut att_vec = Vec::with_capacity(3);
        for s in 0..3 {
            let (h, w) = cfg.size_at(s);
            att_vec.push(ScaleAttention::new(
                &mut rng,
                cfg.channels_at(s),
                h,
                w,
                cfg.n_heads,
                cfg.beta,
                cfg.descriptor_mean,
                cfg.softmax_axis,
            )?);
        }
        let att: [ScaleAttention; 3] = match att_vec.try_into() {
            Ok(a) => a,
            Err(_) => unreachable!(),
        };
        let ups = [
            ConvTranspose2d::new(&mut rng, cfg.channels_at(0), cfg.channels_at(1), 4, 2, 1),
            ConvTranspose2d::new(&mut rng, cfg.channels_at(1), cfg.channels_at(2), 4, 2, 1),
        ];
        let head_out = Conv2d::new(&mut rng, cfg.channels_at(2), cfg.bands, 3, 1, 1);
        Ok(HyperTransformerNet {
            cfg,
            fe_hsi,
            fe_pan,
            head_in,
            trunks,
            att,
            ups,
            head_out,
        })
    }

    pub fn attention_block(&self, scale_idx: usize) -> &ScaleAttention {
        &self.att[scale_idx]
    }

    /// Full forward pass from the LR cube and PAN image.
    pub fn forward(
        &self,
        y: &HsiCube,
        p: &PanImage,
        training: bool,
    ) -> Result<ForwardPass, ModelError> {
        let cfg = &self.cfg;
        if y.bands() != cfg.bands || y.height() != cfg.lr_height || y.width() != cfg.lr_width {
            return Err(ModelError::Contract(format!(
                "LR cube {:?} does not match config {}x{}x{}",
                y.data.shape(),
                cfg.bands,
                cfg.lr_height,
                cfg.lr_width
            )));
        }
        if p.height() != UPSCALE * y.height() || p.width() != UPSCALE * y.width() {
            return Err(ModelError::Contract(format!(
                "PAN {}x{} is not 4x the LR size {}x{}",
                p.height(),
                p.width(),
                y.height(),
                y.width()
            )));
        }
        let y_up = bicubic_resample(&y.data, UPSCALE, 1)?;
        let inject = cfg.scales_enabled.iter().any(|&s| s);
        let (q_taps, k_taps, v_taps): (Option<FeatureTaps>, Option<FeatureTaps>, Option<FeatureTaps>) =
            if inject {
                let p_du = make_pan_downup(p)?;
                (
                    Some(self.fe_hsi.forward(&y_up)?),
                    Some(self.fe_pan.forward(&p_du)?),
                    Some(self.fe_pan.forward(&p.data)?),
                )
            } else {
                (None, None, None)
            };

        let mut t_maps: [Option<Tensor>; 3] = [None, None, None];
        let mut feat = self.head_in.forward(&y.data)?.leaky_relu(LEAKY_SLOPE);
        for s in 0..3 {
            if s > 0 {
                feat = self.ups[s - 1].forward(&feat)?.leaky_relu(LEAKY_SLOPE);
            }
            for rb in &self.trunks[s] {
                feat = rb.forward(&feat)?;
            }
            if cfg.scales_enabled[s] {
                let (q, k, v) = (
                    q_taps.as_ref().unwrap().at_scale(s),
                    k_taps.as_ref().unwrap().at_scale(s),
                    v_taps.as_ref().unwrap().at_scale(s),
                );
                let t = if cfg.attention_bypass {
                    v.clone()
                } else {
                    self.att[s].transfer(q, k, v)?
                };
                feat = self.att[s].fuse(&t, &feat, training)?;
                t_maps[s] = Some(t);
            }
        }
        let x = self.head_out.forward(&feat)?.add(&y_up)?;
        Ok(ForwardPass { x, y_up, t_maps })
    }

    /// All trainable parameters in stable declaration order.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.fe_hsi.collect_params("fe_hsi", &mut out);
        self.fe_pan.collect_params("fe_pan", &mut out);
        self.head_in.collect_params("head_in", &mut out);
        for (s, trunk) in self.trunks.iter().enumerate() {
            for (i, rb) in trunk.iter().enumerate() {
                rb.collect_params(&format!("trunk{s}.rb{i}"), &mut out);
            }
        }
        for (s, a) in self.att.iter().enumerate() {
            a.collect_params(&format!("att{s}"), &mut out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.collect_params(&format!("up{i}"), &mut out);
        }
        self.head_out.collect_params("head_out", &mut out);
        out
    }

    /// Running batch-norm statistics, named like parameters, for
    /// checkpointing.
    pub fn named_buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (s, a) in self.att.iter().enumerate() {
            out.push((
                format!("att{s}.tsff.bn.running_mean"),
                a.tsff_bn.running_mean.borrow().clone(),
            ));
            out.push((
                format!("att{s}.tsff.bn.running_var"),
                a.tsff_bn.running_var.borrow().clone(),
            ));
        }
        out
    }

    pub fn set_buffer(&self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        for (s, a) in self.att.iter().enumerate() {
            let target = if name == format!("att{s}.tsff.bn.running_mean") {
                Some(&a.tsff_bn.running_mean)
            } else if name == format!("att{s}.tsff.bn.running_var") {
                Some(&a.tsff_bn.running_var)
            } else {
                None
            };
            if let Some(cell) = target {
                let mut buf = cell.borrow_mut();
                if buf.len() != values.len() {
                    return Err(ModelError::Contract(format!(
                        "buffer {name} has length {} but checkpoint holds {}",
                        buf.len(),
                        values.len()
                    )));
                }
                buf.copy_from_slice(values);
                return Ok(());
            }
        }
        Err(ModelError::Contract(format!("unknown buffer {name}")))
    }
}
