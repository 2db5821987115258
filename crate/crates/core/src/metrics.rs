//! Quality measures for pansharpened cubes: CC, SAM, RMSE, ERGAS, PSNR,
//! RSNR, and per-band MAE curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::HsiCube;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("degenerate band {band}: {msg}")]
    DegenerateBand { band: usize, msg: String },
    #[error("degenerate pixel ({y},{x}): zero-norm spectrum")]
    DegeneratePixel { y: usize, x: usize },
}

/// The five scalar quality measures plus the per-band MAE curve.
/// Ideal values: cc 1, sam 0, rmse 0, ergas 0, psnr +inf.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cc: f64,
    pub sam_degrees: f64,
    pub rmse: f64,
    pub ergas: f64,
    #[serde(
        serialize_with = "ser_maybe_inf",
        deserialize_with = "de_maybe_inf"
    )]
    pub psnr_db: f64,
    pub mae_per_band: Vec<f64>,
    pub scale_ratio: usize,
}

fn ser_maybe_inf<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_maybe_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }
    match NumOrStr::deserialize(d)? {
        NumOrStr::Num(v) => Ok(v),
        NumOrStr::Str(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
        },
    }
}

fn check_shapes(x: &HsiCube, x_ref: &HsiCube) -> Result<(usize, usize, usize), MetricError> {
    if x.data.shape() != x_ref.data.shape() {
        return Err(MetricError::ShapeMismatch(
            x.data.shape().to_vec(),
            x_ref.data.shape().to_vec(),
        ));
    }
    Ok((x.bands(), x.height(), x.width()))
}

/// Mean over bands of the Pearson correlation between band images.
pub fn cc(x: &HsiCube, x_ref: &HsiCube) -> Result<f64, MetricError> {
    let (c, h, w) = check_shapes(x, x_ref)?;
    let n = h * w;
    let a = x.data.data();
    let b = x_ref.data.data();
    let mut total = 0.0;
    for band in 0..c {
        let xa = &a[band * n..(band + 1) * n];
        let xb = &b[band * n..(band + 1) * n];
        let ma = xa.iter().sum::<f64>() / n as f64;
        let mb = xb.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..n {
            let da = xa[i] - ma;
            let db = xb[i] - mb;
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        if va == 0.0 || vb == 0.0 {
            return Err(MetricError::DegenerateBand {
                band,
                msg: "zero variance".into(),
            });
        }
        total += cov / (va.sqrt() * vb.sqrt());
    }
    Ok(total / c as f64)
}

/// Mean spectral angle over pixels, in degrees.
pub fn sam(x: &HsiCube, x_ref: &HsiCube) -> Result<f64, MetricError> {
    let (c, h, w) = check_shapes(x, x_ref)?;
    let n = h * w;
    let a = x.data.data();
    let b = x_ref.data.data();
    let mut total = 0.0;
    for p in 0..n {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for band in 0..c {
            let va = a[band * n + p];
            let vb = b[band * n + p];
            dot += va * vb;
            na += va * va;
            nb += vb * vb;
        }
        if na == 0.0 || nb == 0.0 {
            return Err(MetricError::DegeneratePixel { y: p / w, x: p % w });
        }
        let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
        total += cos.acos();
    }
    Ok((total / n as f64).to_degrees())
}

/// Root mean square error over all entries.
pub fn rmse(x: &HsiCube, x_ref: &HsiCube) -> Result<f64, MetricError> {
    check_shapes(x, x_ref)?;
    let a = x.data.data();
    let b = x_ref.data.data();
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / a.len() as f64;
    Ok(mse.sqrt())
}

/// Peak signal-to-noise ratio in dB against peak 1.0; +inf for identical
/// cubes.
pub fn psnr(x: &HsiCube, x_ref: &HsiCube) -> Result<f64, MetricError> {
    let r = rmse(x, x_ref)?;
    if r == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(20.0 * (1.0 / r).log10())
    }
}

/// Relative dimensionless global error: 100/ratio * sqrt(mean over bands of
/// (rmse_b / mean_b)^2).
pub fn ergas(x: &HsiCube, x_ref: &HsiCube, ratio: usize) -> Result<f64, MetricError> {
    let (c, h, w) = check_shapes(x, x_ref)?;
    let n = h * w;
    let a = x.data.data();
    let b = x_ref.data.data();
    let mut acc = 0.0;
    for band in 0..c {
        let xa = &a[band * n..(band + 1) * n];
        let xb = &b[band * n..(band + 1) * n];
        let mean_ref = xb.iter().sum::<f64>() / n as f64;
        if mean_ref == 0.0 {
            return Err(MetricError::DegenerateBand {
                band,
                msg: "zero mean in reference".into(),
            });
        }
        let mse = xa
            .iter()
            .zip(xb.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        acc += mse / (mean_ref * mean_ref);
    }
    Ok(100.0 / ratio as f64 * (acc / c as f64).sqrt())
}

/// Reconstruction SNR in dB: 10*log10(|x_ref|^2 / |x_ref - x|^2). Named in
/// the metric suite but excluded from default reports.
pub fn rsnr(x: &HsiCube, x_ref: &HsiCube) -> Result<f64, MetricError> {
    check_shapes(x, x_ref)?;
    let a = x.data.data();
    let b = x_ref.data.data();
    let sig: f64 = b.iter().map(|v| v * v).sum();
    let err: f64 = a.iter().zip(b.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (sig / err).log10())
    }
}

/// Per-band mean absolute error.
pub fn mae_per_band(x: &HsiCube, x_ref: &HsiCube) -> Result<Vec<f64>, MetricError> {
    let (c, h, w) = check_shapes(x, x_ref)?;
    let n = h * w;
    let a = x.data.data();
    let b = x_ref.data.data();
    Ok((0..c)
        .map(|band| {
            a[band * n..(band + 1) * n]
                .iter()
                .zip(&b[band * n..(band + 1) * n])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// All default metrics in one report.
pub fn report(x: &HsiCube, x_ref: &HsiCube, ratio: usize) -> Result<MetricsReport, MetricError> {
    Ok(MetricsReport {
        cc: cc(x, x_ref)?,
        sam_degrees: sam(x, x_ref)?,
        rmse: rmse(x, x_ref)?,
        ergas: ergas(x, x_ref, ratio)?,
        psnr_db: psnr(x, x_ref)?,
        mae_per_band: mae_per_band(x, x_ref)?,
        scale_ratio: ratio,
    })
}
