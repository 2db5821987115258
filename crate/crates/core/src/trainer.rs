//! Deterministic training: Adam over the backbone parameters, per-step loss
//! tracing, checkpoint cadence, averaged evaluation, and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::{
    atomic_write, bicubic_resample, HsiCube, PipelineError, SpectralResponse, SynthPatch,
};
use crate::losses::{loss_overall, LossError, LossWeights, PerceptualNet};
use crate::metrics::{self, MetricError, MetricsReport};
use crate::model::{save_checkpoint, HyperTransformerNet, ModelConfig, ModelError, UPSCALE};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite gradient in parameter {name} at step {step}")]
    NonFiniteGrad { name: String, step: usize },
    #[error("non-finite loss {value} at step {step}; last checkpoint retained")]
    NonFiniteLoss { value: f64, step: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Adam with bias correction. Holds first/second moment buffers per
/// parameter; parameters are updated in place between tape builds.
pub struct Adam {
    params: Vec<(String, Tensor)>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, lr: f64) -> Adam {
        let m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Adam {
            params,
            m,
            v,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// One update from the accumulated gradients. `step` is only used for
    /// error reporting.
    pub fn step(&mut self, step: usize) -> Result<(), TrainerError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainerError::NonFiniteGrad {
                    name: name.clone(),
                    step,
                });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update_data(|data| {
                for j in 0..data.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            });
        }
        Ok(())
    }
}

fn default_epochs() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-3
}
fn default_checkpoint_every() -> usize {
    50
}
fn default_perceptual_seed() -> u64 {
    11
}
fn default_perceptual_tap() -> usize {
    3
}

/// Full training recipe; serializing this is enough to reproduce a run
/// bit for bit.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Seed of the synthetic dataset (recorded for the manifest even when
    /// the data comes from files).
    pub dataset_seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_perceptual_seed")]
    pub perceptual_seed: u64,
    #[serde(default = "default_perceptual_tap")]
    pub perceptual_tap: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, dataset_seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            model,
            dataset_seed,
            epochs,
            learning_rate: default_lr(),
            weights: LossWeights::default(),
            checkpoint_every: default_checkpoint_every(),
            perceptual_seed: default_perceptual_seed(),
            perceptual_tap: default_perceptual_tap(),
        }
    }
}

/// Per-step loss record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossSample {
    pub step: usize,
    pub total: f64,
    pub rec: f64,
    pub vgg_per: f64,
    pub t_per: f64,
}

/// Reproducibility record written next to every trained checkpoint. Has no
/// timestamps on purpose: identical configs must yield identical manifests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub config_sha256: String,
    pub source_revision: String,
    pub n_patches: usize,
    pub loss_trace: Vec<LossSample>,
    pub final_eval: MetricsReport,
    pub bicubic_baseline: MetricsReport,
}

pub fn config_sha256(cfg: &TrainConfig) -> Result<String, TrainerError> {
    let json = serde_json::to_vec(cfg)
        .map_err(|e| TrainerError::Contract(format!("config serialization failed: {e}")))?;
    let mut h = Sha256::new();
    h.update(&json);
    Ok(format!("{:x}", h.finalize()))
}

fn source_revision() -> String {
    option_env!("GIT_HASH").unwrap_or("unknown").to_string()
}

/// A trained network plus its manifest and checkpoint locations.
pub struct TrainOutcome {
    pub net: HyperTransformerNet,
    pub manifest: RunManifest,
    pub latest_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

fn spectral_responses(bands: usize) -> [SpectralResponse; 3] {
    SpectralResponse::defaults_for_bands(bands)
}

/// Mean of per-patch reports; any infinite PSNR makes the mean infinite.
pub fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport, TrainerError> {
    let first = reports
        .first()
        .ok_or_else(|| TrainerError::Contract("cannot average zero reports".into()))?;
    let n = reports.len() as f64;
    let bands = first.mae_per_band.len();
    let mut mae = vec![0.0; bands];
    let (mut cc, mut sam, mut rmse, mut ergas, mut psnr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in reports {
        if r.mae_per_band.len() != bands || r.scale_ratio != first.scale_ratio {
            return Err(TrainerError::Contract(
                "cannot average reports over mismatched cubes".into(),
            ));
        }
        cc += r.cc;
        sam += r.sam_degrees;
        rmse += r.rmse;
        ergas += r.ergas;
        psnr += r.psnr_db;
        for (a, b) in mae.iter_mut().zip(&r.mae_per_band) {
            *a += b;
        }
    }
    for a in &mut mae {
        *a /= n;
    }
    Ok(MetricsReport {
        cc: cc / n,
        sam_degrees: sam / n,
        rmse: rmse / n,
        ergas: ergas / n,
        psnr_db: psnr / n,
        mae_per_band: mae,
        scale_ratio: first.scale_ratio,
    })
}

/// Eval-mode forward over every patch, metrics averaged.
pub fn evaluate(
    net: &HyperTransformerNet,
    dataset: &[SynthPatch],
) -> Result<MetricsReport, TrainerError> {
    let mut reports = Vec::with_capacity(dataset.len());
    for patch in dataset {
        let pass = net.forward(&patch.lr, &patch.pan, false)?;
        let x = HsiCube::new(clamp01(&pass.x))?;
        reports.push(metrics::report(&x, &patch.x_ref, UPSCALE)?);
    }
    average_reports(&reports)
}

/// Bicubic x4 upsampling of every LR cube, metrics averaged — the
/// no-learning baseline.
pub fn evaluate_bicubic(dataset: &[SynthPatch]) -> Result<MetricsReport, TrainerError> {
    let mut reports = Vec::with_capacity(dataset.len());
    for patch in dataset {
        let up = HsiCube::new(bicubic_resample(&patch.lr.data, UPSCALE, 1)?)?;
        reports.push(metrics::report(&up, &patch.x_ref, UPSCALE)?);
    }
    average_reports(&reports)
}

fn clamp01(x: &Tensor) -> Tensor {
    // floor at 1e-6, not 0: an all-zero spectral vector has no angle and
    // would make SAM degenerate whenever an early net saturates low
    let data = x.data().iter().map(|v| v.clamp(1e-6, 1.0)).collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Train on the given patches. When `out_dir` is set, checkpoints land
/// there: `latest.htck` at the checkpoint cadence, `best.htck` whenever the
/// averaged eval PSNR improves, and `manifest.json` at the end.
pub fn train(
    cfg: &TrainConfig,
    dataset: &[SynthPatch],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainerError> {
    if dataset.is_empty() {
        return Err(TrainerError::Contract("empty training dataset".into()));
    }
    for (i, p) in dataset.iter().enumerate() {
        if p.lr.bands() != cfg.model.bands
            || p.lr.height() != cfg.model.lr_height
            || p.lr.width() != cfg.model.lr_width
        {
            return Err(TrainerError::Contract(format!(
                "patch {i} LR shape {:?} does not match model config",
                p.lr.data.shape()
            )));
        }
    }
    let net = HyperTransformerNet::new(cfg.model.clone())?;
    let perceptual = PerceptualNet::new(cfg.perceptual_seed, cfg.perceptual_tap)?;
    let responses = spectral_responses(cfg.model.bands);
    let mut opt = Adam::new(net.named_params(), cfg.learning_rate);

    let latest = out_dir.map(|d| d.join("latest.htck"));
    let best = out_dir.map(|d| d.join("best.htck"));
    let mut best_psnr = f64::NEG_INFINITY;
    let mut best_written = false;
    let mut trace = Vec::with_capacity(cfg.epochs * dataset.len());
    let mut step = 0usize;
    for _epoch in 0..cfg.epochs {
        for patch in dataset {
            step += 1;
            opt.zero_grad();
            let pass = net.forward(&patch.lr, &patch.pan, true)?;
            let loss = loss_overall(
                &pass.x,
                &patch.x_ref.data,
                &pass.t_maps,
                &net.fe_hsi,
                &perceptual,
                &responses,
                &cfg.weights,
            )?;
            let total = loss.total.item();
            if !total.is_finite() {
                return Err(TrainerError::NonFiniteLoss { value: total, step });
            }
            loss.total.backward()?;
            opt.step(step)?;
            trace.push(LossSample {
                step,
                total,
                rec: loss.rec,
                vgg_per: loss.vgg_per,
                t_per: loss.t_per,
            });
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                if let Some(p) = &latest {
                    save_checkpoint(p, &net)?;
                }
                if let Some(p) = &best {
                    let psnr = evaluate(&net, dataset)?.psnr_db;
                    if psnr > best_psnr {
                        best_psnr = psnr;
                        save_checkpoint(p, &net)?;
                        best_written = true;
                    }
                }
            }
        }
    }

    let final_eval = evaluate(&net, dataset)?;
    if let Some(p) = &latest {
        save_checkpoint(p, &net)?;
    }
    if let Some(p) = &best {
        if final_eval.psnr_db > best_psnr {
            save_checkpoint(p, &net)?;
            best_written = true;
        }
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        config_sha256: config_sha256(cfg)?,
        source_revision: source_revision(),
        n_patches: dataset.len(),
        loss_trace: trace,
        final_eval,
        bicubic_baseline: evaluate_bicubic(dataset)?,
    };
    if let Some(dir) = out_dir {
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| TrainerError::Contract(format!("manifest serialization failed: {e}")))?;
        atomic_write(&dir.join("manifest.json"), &json)?;
    }
    Ok(TrainOutcome {
        net,
        manifest,
        latest_checkpoint: latest,
        best_checkpoint: best.filter(|_| best_written),
    })
}
