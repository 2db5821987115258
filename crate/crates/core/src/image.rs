//! Data preparation: Wald's-protocol degradation, bicubic resampling, RGB
//! synthesis, the cube container format, and a synthetic dataset generator.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Hyperspectral cube `[C,H,W]` with values in [0,1].
#[derive(Clone, Debug)]
pub struct HsiCube {
    pub data: Tensor,
    pub wavelength_ids: Option<Vec<u32>>,
}

impl HsiCube {
    pub fn new(data: Tensor) -> Result<HsiCube, PipelineError> {
        if data.rank() != 3 || data.shape()[0] == 0 {
            return Err(PipelineError::Dimension(format!(
                "cube must be [C,H,W] with C >= 1, got {:?}",
                data.shape()
            )));
        }
        Ok(HsiCube {
            data,
            wavelength_ids: None,
        })
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Single-band panchromatic image `[1,H,W]` with values in [0,1].
#[derive(Clone, Debug)]
pub struct PanImage {
    pub data: Tensor,
}

impl PanImage {
    pub fn new(data: Tensor) -> Result<PanImage, PipelineError> {
        if data.rank() != 3 || data.shape()[0] != 1 {
            return Err(PipelineError::Dimension(format!(
                "pan image must be [1,H,W], got {:?}",
                data.shape()
            )));
        }
        Ok(PanImage { data })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Gaussian spectral response over band indices; `sigma_bands <= 0` is the
/// degenerate delta response at the center band.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectralResponse {
    pub center_band: usize,
    pub sigma_bands: f64,
}

impl SpectralResponse {
    pub fn new(center_band: usize, sigma_bands: f64) -> SpectralResponse {
        SpectralResponse {
            center_band,
            sigma_bands,
        }
    }

    /// Non-negative weights over `bands` band indices, summing to 1.
    pub fn weights(&self, bands: usize) -> Result<Vec<f64>, PipelineError> {
        if self.center_band >= bands {
            return Err(PipelineError::Contract(format!(
                "center band {} out of range for {} bands",
                self.center_band, bands
            )));
        }
        let mut w = vec![0.0; bands];
        if self.sigma_bands <= 0.0 {
            w[self.center_band] = 1.0;
            return Ok(w);
        }
        let s2 = 2.0 * self.sigma_bands * self.sigma_bands;
        for (b, wb) in w.iter_mut().enumerate() {
            let d = b as f64 - self.center_band as f64;
            *wb = (-d * d / s2).exp();
        }
        let sum: f64 = w.iter().sum();
        for wb in &mut w {
            *wb /= sum;
        }
        Ok(w)
    }

    /// Pavia Center defaults: blue band 10, green band 30, red band 60.
    /// Returned in (R, G, B) channel order.
    pub fn pavia_defaults() -> [SpectralResponse; 3] {
        [
            SpectralResponse::new(60, 5.0),
            SpectralResponse::new(30, 5.0),
            SpectralResponse::new(10, 5.0),
        ]
    }

    /// Proportional fallback for cubes too small for the Pavia band
    /// indices: centers at roughly 60%, 30%, 10% of the band range.
    pub fn defaults_for_bands(bands: usize) -> [SpectralResponse; 3] {
        if bands > 60 {
            return Self::pavia_defaults();
        }
        let pick = |f: f64| ((bands as f64 * f) as usize).min(bands - 1);
        let sigma = (bands as f64 / 16.0).max(0.5);
        [
            SpectralResponse::new(pick(0.6), sigma),
            SpectralResponse::new(pick(0.3), sigma),
            SpectralResponse::new(pick(0.1), sigma),
        ]
    }
}

/// Normalized 8x8 Gaussian kernel sampled at half-integer offsets
/// (-3.5 .. 3.5); sums to 1.
pub fn gaussian_kernel_8x8(sigma: f64) -> Vec<f64> {
    let mut k = vec![0.0; 64];
    let s2 = 2.0 * sigma * sigma;
    for u in 0..8 {
        for v in 0..8 {
            let dy = u as f64 - 3.5;
            let dx = v as f64 - 3.5;
            k[u * 8 + v] = (-(dy * dy + dx * dx) / s2).exp();
        }
    }
    let sum: f64 = k.iter().sum();
    for x in &mut k {
        *x /= sum;
    }
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Wald's-protocol degradation: per-band 8x8 Gaussian blur (reflect-padded)
/// followed by decimation by `scale`.
pub fn walds_degrade(x_ref: &HsiCube, scale: usize, sigma: f64) -> Result<HsiCube, PipelineError> {
    let (c, h, w) = (x_ref.bands(), x_ref.height(), x_ref.width());
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(PipelineError::Dimension(format!(
            "spatial size {h}x{w} not divisible by scale {scale}"
        )));
    }
    let kernel = gaussian_kernel_8x8(sigma);
    let (oh, ow) = (h / scale, w / scale);
    let x = x_ref.data.data();
    let mut out = vec![0.0; c * oh * ow];
    for b in 0..c {
        let band = &x[b * h * w..(b + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let cy = (oy * scale) as isize;
                let cx = (ox * scale) as isize;
                let mut acc = 0.0;
                for u in 0..8 {
                    let iy = reflect(cy + u as isize - 3, h);
                    for v in 0..8 {
                        let ix = reflect(cx + v as isize - 3, w);
                        acc += kernel[u * 8 + v] * band[iy * w + ix];
                    }
                }
                out[(b * oh + oy) * ow + ox] = acc;
            }
        }
    }
    drop(x);
    let mut cube = HsiCube::new(Tensor::from_vec(vec![c, oh, ow], out)?)?;
    cube.wavelength_ids = x_ref.wavelength_ids.clone();
    Ok(cube)
}

/// Keys cubic kernel, a = -0.5.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

fn bicubic_axis(len_in: usize, len_out: usize) -> Vec<(isize, [f64; 4])> {
    let ratio = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let f = src - base;
            (
                base as isize,
                [keys(f + 1.0), keys(f), keys(1.0 - f), keys(2.0 - f)],
            )
        })
        .collect()
}

/// Separable Keys-kernel resampling to an explicit target size, with
/// edge-replicate boundary handling.
pub fn bicubic_resize(
    img: &Tensor,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor, PipelineError> {
    if img.rank() != 3 {
        return Err(PipelineError::Dimension(format!(
            "expected [C,H,W], got {:?}",
            img.shape()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(PipelineError::Dimension("target size must be positive".into()));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if h == out_h && w == out_w {
        return Ok(img.detach());
    }
    let cols = bicubic_axis(w, out_w);
    let rows = bicubic_axis(h, out_h);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let x = img.data();
    // horizontal pass, then vertical
    let mut mid = vec![0.0; c * h * out_w];
    for b in 0..c {
        for y in 0..h {
            let row = &x[(b * h + y) * w..(b * h + y + 1) * w];
            for (ox, (base, wts)) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for (t, wt) in wts.iter().enumerate() {
                    acc += wt * row[clamp(base - 1 + t as isize, w)];
                }
                mid[(b * h + y) * out_w + ox] = acc;
            }
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for b in 0..c {
        for (oy, (base, wts)) in rows.iter().enumerate() {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for (t, wt) in wts.iter().enumerate() {
                    acc += wt * mid[(b * h + clamp(base - 1 + t as isize, h)) * out_w + ox];
                }
                out[(b * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    drop(x);
    Ok(Tensor::from_vec(vec![c, out_h, out_w], out)?)
}

/// Resample by a rational factor (4, 2, 1, 1/2, 1/4, ...).
pub fn bicubic_resample(img: &Tensor, num: usize, den: usize) -> Result<Tensor, PipelineError> {
    if img.rank() != 3 || num == 0 || den == 0 {
        return Err(PipelineError::Dimension(format!(
            "bad resample of {:?} by {num}/{den}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if (h * num) % den != 0 || (w * num) % den != 0 {
        return Err(PipelineError::Dimension(format!(
            "non-integral target size for {h}x{w} by {num}/{den}"
        )));
    }
    bicubic_resize(img, h * num / den, w * num / den)
}

/// Bicubic down x4 then up x4, making the PAN domain-consistent with the
/// upsampled LR-HSI.
pub fn make_pan_downup(p: &PanImage) -> Result<Tensor, PipelineError> {
    let down = bicubic_resample(&p.data, 1, 4)?;
    bicubic_resample(&down, 4, 1)
}

/// Response-weight matrix `[3,C]` in (R,G,B) row order; each row sums to 1.
pub fn rgb_weight_matrix(
    responses: &[SpectralResponse; 3],
    bands: usize,
) -> Result<Tensor, PipelineError> {
    let mut w = Vec::with_capacity(3 * bands);
    for r in responses {
        w.extend(r.weights(bands)?);
    }
    Ok(Tensor::from_vec(vec![3, bands], w)?)
}

/// Weighted band average per output channel. Differentiable in `x`; keeps
/// values in [0,1] because rows of the weight matrix are convex.
pub fn apply_spectral_weights(x: &Tensor, wmat: &Tensor) -> Result<Tensor, TensorError> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let flat = x.reshape(vec![1, c, h * w])?;
    let wm = wmat.reshape(vec![1, 3, c])?;
    wm.matmul_batched(&flat)?.reshape(vec![3, h, w])
}

/// Synthesized RGB `[3,H,W]` for an HSI cube.
pub fn synthesize_rgb(
    x: &HsiCube,
    responses: &[SpectralResponse; 3],
) -> Result<Tensor, PipelineError> {
    let wmat = rgb_weight_matrix(responses, x.bands())?;
    Ok(apply_spectral_weights(&x.data, &wmat)?)
}

// ---------------------------------------------------------------------------
// Cube container format (little-endian):
//   magic "HSI1" | dtype u8 (0 = f32, 1 = f64) | 3 reserved bytes
//   | C,H,W as u32 | payload C*H*W scalars in band-major order.
// ---------------------------------------------------------------------------

pub const CUBE_MAGIC: &[u8; 4] = b"HSI1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CubeDtype {
    F32,
    F64,
}

pub fn save_cube(path: &Path, cube: &HsiCube, dtype: CubeDtype) -> Result<(), PipelineError> {
    let (c, h, w) = (cube.bands(), cube.height(), cube.width());
    for (name, v) in [("C", c), ("H", h), ("W", w)] {
        if v > u32::MAX as usize {
            return Err(PipelineError::Dimension(format!("{name}={v} overflows u32")));
        }
    }
    let data = cube.data.data();
    let mut buf = Vec::with_capacity(20 + data.len() * 8);
    buf.extend_from_slice(CUBE_MAGIC);
    buf.push(match dtype {
        CubeDtype::F32 => 0,
        CubeDtype::F64 => 1,
    });
    buf.extend_from_slice(&[0u8; 3]);
    for v in [c, h, w] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    match dtype {
        CubeDtype::F32 => {
            for &v in data.iter() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        CubeDtype::F64 => {
            for &v in data.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    drop(data);
    atomic_write(path, &buf)
}

/// Write via a temp file and atomic rename so no partial file is left on
/// error.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io_err = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp-partial");
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_cube(path: &Path) -> Result<HsiCube, PipelineError> {
    let io_err = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    load_cube_bytes(&bytes)
}

pub fn load_cube_bytes(bytes: &[u8]) -> Result<HsiCube, PipelineError> {
    if bytes.len() < 20 {
        return Err(PipelineError::Format {
            offset: bytes.len() as u64,
            msg: format!("truncated header: {} of 20 bytes", bytes.len()),
        });
    }
    if &bytes[0..4] != CUBE_MAGIC {
        return Err(PipelineError::Format {
            offset: 0,
            msg: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    let dtype = match bytes[4] {
        0 => CubeDtype::F32,
        1 => CubeDtype::F64,
        other => {
            return Err(PipelineError::Format {
                offset: 4,
                msg: format!("unknown dtype tag {other}"),
            })
        }
    };
    let dim = |i: usize| {
        u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize
    };
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or(PipelineError::Format {
            offset: 8,
            msg: format!("dimension overflow {c}x{h}x{w}"),
        })?;
    if c == 0 || h == 0 || w == 0 {
        return Err(PipelineError::Format {
            offset: 8,
            msg: format!("zero dimension {c}x{h}x{w}"),
        });
    }
    let width = match dtype {
        CubeDtype::F32 => 4,
        CubeDtype::F64 => 8,
    };
    let need = 20 + n * width;
    if bytes.len() != need {
        return Err(PipelineError::Format {
            offset: bytes.len().min(need) as u64,
            msg: format!("payload size {} != expected {}", bytes.len() - 20, n * width),
        });
    }
    let mut data = Vec::with_capacity(n);
    match dtype {
        CubeDtype::F32 => {
            for i in 0..n {
                let off = 20 + 4 * i;
                data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
            }
        }
        CubeDtype::F64 => {
            for i in 0..n {
                let off = 20 + 8 * i;
                data.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            }
        }
    }
    // Load-time normalization: raw cubes (e.g. sensor counts) are mapped to
    // [0,1]; data already in range is kept bit-exact.
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo < 0.0 || hi > 1.0 {
        let span = if hi > lo { hi - lo } else { 1.0 };
        for v in &mut data {
            *v = (*v - lo) / span;
        }
    }
    HsiCube::new(Tensor::from_vec(vec![c, h, w], data)?)
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

/// One synthetic training triple.
#[derive(Clone, Debug)]
pub struct SynthPatch {
    pub x_ref: HsiCube,
    pub pan: PanImage,
    pub lr: HsiCube,
}

/// Deterministic synthetic cubes: smooth spectral ramps over a few spatial
/// texture patterns plus band-correlated noise. The PAN is the uniform band
/// average of the reference; the LR cube is its Wald's-protocol degradation.
pub fn synth_dataset(
    seed: u64,
    n_patches: usize,
    c: usize,
    h: usize,
    w: usize,
    degrade_sigma: f64,
) -> Result<Vec<SynthPatch>, PipelineError> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(PipelineError::Dimension(format!(
            "patch size {h}x{w} not divisible by 4"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(n_patches);
    for _ in 0..n_patches {
        const K: usize = 3;
        // spatial texture patterns in [0,1]
        let mut textures = Vec::with_capacity(K);
        for _ in 0..K {
            let mut t = vec![0.0; h * w];
            for _ in 0..3 {
                let fy: f64 = rng.gen_range(0.5..4.0);
                let fx: f64 = rng.gen_range(0.5..4.0);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp: f64 = rng.gen_range(0.3..1.0);
                for y in 0..h {
                    for x in 0..w {
                        t[y * w + x] += amp
                            * (std::f64::consts::TAU
                                * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64)
                                + phase)
                                .sin();
                    }
                }
            }
            let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in &mut t {
                *v = (*v - lo) / (hi - lo);
            }
            textures.push(t);
        }
        // smooth spectral mixing weights per band
        let mut spectra = vec![[0.0; K]; c];
        let ramps: Vec<(f64, f64)> = (0..K)
            .map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        for (b, sp) in spectra.iter_mut().enumerate() {
            let pos = b as f64 / c as f64;
            let mut sum = 0.0;
            for (k, (freq, phase)) in ramps.iter().enumerate() {
                let v = 0.55 + 0.45 * (std::f64::consts::TAU * freq * pos + phase).sin();
                sp[k] = v;
                sum += v;
            }
            for v in sp.iter_mut() {
                *v /= sum;
            }
        }
        let mut data = vec![0.0; c * h * w];
        for b in 0..c {
            for i in 0..h * w {
                let mut v = 0.0;
                for k in 0..K {
                    v += spectra[b][k] * textures[k][i];
                }
                data[b * h * w + i] = v;
            }
        }
        // band-correlated noise: one spatial field, per-band amplitude
        let noise: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in 0..c {
            let amp = 0.015 * (1.0 + (b as f64 / c as f64));
            for i in 0..h * w {
                let v = &mut data[b * h * w + i];
                *v = (*v * 0.9 + 0.05 + amp * noise[i]).clamp(0.02, 0.98);
            }
        }
        let x_ref = HsiCube::new(Tensor::from_vec(vec![c, h, w], data.clone())?)?;
        // uniform band average
        let mut pan = vec![0.0; h * w];
        for b in 0..c {
            for i in 0..h * w {
                pan[i] += data[b * h * w + i];
            }
        }
        for v in &mut pan {
            *v /= c as f64;
        }
        let pan = PanImage::new(Tensor::from_vec(vec![1, h, w], pan)?)?;
        let lr = walds_degrade(&x_ref, 4, degrade_sigma)?;
        patches.push(SynthPatch { x_ref, pan, lr });
    }
    Ok(patches)
}
