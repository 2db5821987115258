//! Static plot artifacts: per-band MAE CSV, a viridis MAE heatmap, and a
//! synthesized-RGB preview.

use std::io::Cursor;
use std::path::Path;

use hypersharp_core::image::{atomic_write, synthesize_rgb, HsiCube, SpectralResponse};
use hypersharp_core::metrics::mae_per_band;

use crate::AnyError;

/// Viridis anchors at 16 evenly spaced positions.
const VIRIDIS: [[u8; 3]; 16] = [
    [68, 1, 84],
    [72, 26, 108],
    [71, 47, 125],
    [65, 68, 135],
    [57, 86, 140],
    [49, 104, 142],
    [42, 120, 142],
    [35, 136, 142],
    [31, 152, 139],
    [34, 168, 132],
    [53, 183, 121],
    [84, 197, 104],
    [122, 209, 81],
    [165, 219, 54],
    [210, 226, 27],
    [253, 231, 37],
];

/// Map `t` in [0,1] through the viridis ramp with linear interpolation.
fn viridis(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let lo = t.floor() as usize;
    let hi = (lo + 1).min(VIRIDIS.len() - 1);
    let f = t - lo as f64;
    let mut rgb = [0u8; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        *c = (VIRIDIS[lo][i] as f64 * (1.0 - f) + VIRIDIS[hi][i] as f64 * f).round() as u8;
    }
    rgb
}

fn write_png(path: &Path, img: &image::RgbImage) -> Result<(), AnyError> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)?;
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn emit(
    pred: &HsiCube,
    x_ref: &HsiCube,
    out_dir: &Path,
    scale_max: f64,
) -> Result<(), AnyError> {
    if scale_max <= 0.0 {
        return Err("scale-max must be positive".into());
    }
    let (c, h, w) = (pred.bands(), pred.height(), pred.width());

    let mae = mae_per_band(pred, x_ref)?;
    let mut csv = String::from("band,mae\n");
    for (b, v) in mae.iter().enumerate() {
        csv.push_str(&format!("{b},{v:.17}\n"));
    }
    atomic_write(&out_dir.join("mae_per_band.csv"), csv.as_bytes())?;

    // heatmap of the per-pixel MAE across bands, fixed color scale
    let a = pred.data.data();
    let b = x_ref.data.data();
    let mut heat = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let err: f64 = (0..c).map(|band| (a[band * h * w + i] - b[band * h * w + i]).abs()).sum();
            heat.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(viridis(err / c as f64 / scale_max)),
            );
        }
    }
    drop(a);
    drop(b);
    write_png(&out_dir.join("mae_heatmap.png"), &heat)?;

    let rgb = synthesize_rgb(pred, &SpectralResponse::defaults_for_bands(c))?;
    let rgb_data = rgb.data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = [
                (rgb_data[i].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb_data[h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb_data[2 * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    drop(rgb_data);
    write_png(&out_dir.join("rgb.png"), &img)?;
    Ok(())
}
