//! `hypersharp`: degrade reference cubes, train and evaluate the
//! pansharpening model, sharpen new inputs, and plot error artifacts.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hypersharp_core::image::{
    atomic_write, load_cube, save_cube, synth_dataset, walds_degrade, CubeDtype, HsiCube,
    PanImage, SynthPatch,
};
use hypersharp_core::model::{load_checkpoint, UPSCALE};
use hypersharp_core::tensor::Tensor;
use hypersharp_core::trainer::{evaluate, evaluate_bicubic, train, TrainConfig};

type AnyError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "hypersharp", about = "Hyperspectral pansharpening toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a reference cube into an LR cube and a synthesized PAN.
    Degrade(DegradeArgs),
    /// Train the model from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the bicubic baseline) and print metrics JSON.
    Eval(EvalArgs),
    /// Pansharpen an LR cube with a trained checkpoint.
    Sharpen(SharpenArgs),
    /// Emit per-band MAE CSV, an MAE heatmap PNG, and a synthesized-RGB PNG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct DegradeArgs {
    /// Reference cube (HSI1 container).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_lr: PathBuf,
    #[arg(long)]
    out_pan: PathBuf,
    /// Gaussian blur sigma in HR pixels.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of reference cubes (*.hsi); falls back to a synthetic set.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    synth_patches: usize,
    /// Band count for the synthetic fallback.
    #[arg(long, default_value_t = 8)]
    bands: usize,
    /// HR patch edge length for the synthetic fallback.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Degradation sigma used for on-the-fly LR generation.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file mirroring TrainConfig.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    data: SynthArgs,
    // Overrides; flags win over the config file.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated enabled scales from {1,2,4}, or "none".
    #[arg(long)]
    scales: Option<String>,
    /// Use T = V at every enabled scale (B/L ablation).
    #[arg(long)]
    bypass_attention: bool,
    #[arg(long)]
    lambda_rec: Option<f64>,
    #[arg(long)]
    lambda_vgg: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint; optional when --bicubic is given.
    #[arg(long, required_unless_present = "bicubic")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the bicubic-upsampling baseline instead of a model.
    #[arg(long)]
    bicubic: bool,
    #[command(flatten)]
    data: SynthArgs,
    /// Seed of the synthetic fallback dataset.
    #[arg(long, default_value_t = 99)]
    dataset_seed: u64,
}

#[derive(Args)]
struct SharpenArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    lr_cube: PathBuf,
    #[arg(long)]
    pan: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Upper bound of the fixed heatmap color scale.
    #[arg(long, default_value_t = 0.1)]
    scale_max: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 on usage errors and 0 on --help/--version
            e.exit();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), AnyError> {
    match cli.command {
        Command::Degrade(a) => cmd_degrade(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sharpen(a) => cmd_sharpen(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Side-car reproducibility record for file-producing subcommands.
#[derive(Serialize)]
struct CommandManifest {
    command: &'static str,
    parameters: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    source_revision: String,
}

fn write_manifest(primary_output: &Path, manifest: &CommandManifest) -> Result<(), AnyError> {
    let mut name = primary_output
        .file_name()
        .ok_or("output path has no file name")?
        .to_os_string();
    name.push(".manifest.json");
    let path = primary_output.with_file_name(name);
    atomic_write(&path, &serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

fn source_revision() -> String {
    option_env!("GIT_HASH").unwrap_or("unknown").to_string()
}

/// Uniform band average of a reference cube: the synthesized PAN.
fn pan_from_cube(cube: &HsiCube) -> Result<PanImage, AnyError> {
    let (c, h, w) = (cube.bands(), cube.height(), cube.width());
    let data = cube.data.data();
    let mut pan = vec![0.0; h * w];
    for b in 0..c {
        for (i, p) in pan.iter_mut().enumerate() {
            *p += data[b * h * w + i];
        }
    }
    drop(data);
    for p in &mut pan {
        *p /= c as f64;
    }
    Ok(PanImage::new(Tensor::from_vec(vec![1, h, w], pan)?)?)
}

/// Training/eval triples: reference cubes from a directory (PAN and LR
/// generated on the fly) or the deterministic synthetic set.
fn load_dataset(data: &SynthArgs, dataset_seed: u64) -> Result<Vec<SynthPatch>, AnyError> {
    let Some(dir) = &data.data_dir else {
        return Ok(synth_dataset(
            dataset_seed,
            data.synth_patches,
            data.bands,
            data.size,
            data.size,
            data.sigma,
        )?);
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "hsi"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no *.hsi cubes in {}", dir.display()).into());
    }
    let mut patches = Vec::with_capacity(paths.len());
    for p in paths {
        let x_ref = load_cube(&p)?;
        let pan = pan_from_cube(&x_ref)?;
        let lr = walds_degrade(&x_ref, UPSCALE, data.sigma)?;
        patches.push(SynthPatch { x_ref, pan, lr });
    }
    Ok(patches)
}

fn cmd_degrade(a: DegradeArgs) -> Result<(), AnyError> {
    let x_ref = load_cube(&a.input)?;
    let lr = walds_degrade(&x_ref, a.scale, a.sigma)?;
    let pan = pan_from_cube(&x_ref)?;
    save_cube(&a.out_lr, &lr, CubeDtype::F64)?;
    save_cube(
        &a.out_pan,
        &HsiCube::new(pan.data.clone())?,
        CubeDtype::F64,
    )?;
    write_manifest(
        &a.out_lr,
        &CommandManifest {
            command: "degrade",
            parameters: serde_json::json!({ "sigma": a.sigma, "scale": a.scale }),
            inputs: vec![a.input.display().to_string()],
            outputs: vec![
                a.out_lr.display().to_string(),
                a.out_pan.display().to_string(),
            ],
            source_revision: source_revision(),
        },
    )
}

fn parse_scales(s: &str) -> Result<[bool; 3], AnyError> {
    let mut enabled = [false; 3];
    if s.trim() == "none" {
        return Ok(enabled);
    }
    for part in s.split(',') {
        match part.trim() {
            "1" => enabled[0] = true,
            "2" => enabled[1] = true,
            "4" => enabled[2] = true,
            other => return Err(format!("bad scale {other:?}; expected 1, 2, 4, or none").into()),
        }
    }
    Ok(enabled)
}

fn cmd_train(a: TrainArgs) -> Result<(), AnyError> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| format!("cannot read config {}: {e}", a.config.display()))?;
    let mut cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| format!("bad config JSON: {e}"))?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.dataset_seed {
        cfg.dataset_seed = v;
    }
    if let Some(v) = a.heads {
        cfg.model.n_heads = v;
    }
    if let Some(v) = a.beta {
        cfg.model.beta = v;
    }
    if let Some(s) = &a.scales {
        cfg.model.scales_enabled = parse_scales(s)?;
    }
    if a.bypass_attention {
        cfg.model.attention_bypass = true;
    }
    if let Some(v) = a.lambda_rec {
        cfg.weights.lambda_rec = v;
    }
    if let Some(v) = a.lambda_vgg {
        cfg.weights.lambda_vgg_per = v;
    }
    if let Some(v) = a.lambda_t {
        cfg.weights.lambda_t_per = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    let dataset = load_dataset(&a.data, cfg.dataset_seed)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", a.out_dir.display()))?;
    let outcome = train(&cfg, &dataset, Some(&a.out_dir))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.manifest.final_eval)?
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), AnyError> {
    let dataset = load_dataset(&a.data, a.dataset_seed)?;
    let report = if a.bicubic {
        evaluate_bicubic(&dataset)?
    } else {
        let path = a.checkpoint.as_ref().expect("enforced by clap");
        let net = load_checkpoint(path)?;
        evaluate(&net, &dataset)?
    };
    let out = serde_json::json!({
        "metrics": report,
        "manifest": {
            "command": "eval",
            "bicubic_baseline": a.bicubic,
            "checkpoint": a.checkpoint.as_ref().map(|p| p.display().to_string()),
            "n_patches": dataset.len(),
            "source_revision": source_revision(),
        },
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_sharpen(a: SharpenArgs) -> Result<(), AnyError> {
    let net = load_checkpoint(&a.checkpoint)?;
    let lr = load_cube(&a.lr_cube)?;
    let pan_cube = load_cube(&a.pan)?;
    let pan = PanImage::new(pan_cube.data.clone())?;
    let pass = net.forward(&lr, &pan, false)?;
    let clamped: Vec<f64> = pass.x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let out = HsiCube::new(Tensor::from_vec(pass.x.shape().to_vec(), clamped)?)?;
    save_cube(&a.out, &out, CubeDtype::F64)?;
    write_manifest(
        &a.out,
        &CommandManifest {
            command: "sharpen",
            parameters: serde_json::json!({}),
            inputs: vec![
                a.checkpoint.display().to_string(),
                a.lr_cube.display().to_string(),
                a.pan.display().to_string(),
            ],
            outputs: vec![a.out.display().to_string()],
            source_revision: source_revision(),
        },
    )
}

fn cmd_plot(a: PlotArgs) -> Result<(), AnyError> {
    let pred = load_cube(&a.pred)?;
    let x_ref = load_cube(&a.reference)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", a.out_dir.display()))?;
    plot::emit(&pred, &x_ref, &a.out_dir, a.scale_max)?;
    write_manifest(
        &a.out_dir.join("mae_per_band.csv"),
        &CommandManifest {
            command: "plot",
            parameters: serde_json::json!({ "scale_max": a.scale_max }),
            inputs: vec![
                a.pred.display().to_string(),
                a.reference.display().to_string(),
            ],
            outputs: vec![
                a.out_dir.join("mae_per_band.csv").display().to_string(),
                a.out_dir.join("mae_heatmap.png").display().to_string(),
                a.out_dir.join("rgb.png").display().to_string(),
            ],
            source_revision: source_revision(),
        },
    )
}
