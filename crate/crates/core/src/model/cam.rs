//! Heatmap rendering of positive class activation maps.

use std::path::Path;

use crate::data::image::{tensor_to_samples, write_pgm, write_ppm};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Nearest-neighbour upsampling of an `[h, w]` map to `height × width`.
pub fn upsample_nearest<F: Scalar>(map: &Tensor<F>, height: usize, width: usize) -> Result<Vec<f64>> {
    let (h, w) = map.dims2()?;
    let d = map.data();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = y * h / height;
        for x in 0..width {
            out.push(d[sy * w + x * w / width].as_f64());
        }
    }
    Ok(out)
}

/// Grayscale heatmap bytes: the upsampled map divided by its maximum and
/// scaled to `[0, 255]`. An all-zero map renders as all zeros.
pub fn heatmap_bytes<F: Scalar>(map: &Tensor<F>, height: usize, width: usize) -> Result<Vec<u8>> {
    if map.data().iter().any(|v| *v < F::zero() || v.is_nan()) {
        return Err(Error::Config(
            "heatmaps are rendered from positive activation maps; found a negative or NaN entry"
                .into(),
        ));
    }
    let up = upsample_nearest(map, height, width)?;
    let max = up.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0; up.len()]);
    }
    Ok(up
        .iter()
        .map(|v| (v / max * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Piecewise-linear blue → cyan → yellow → red colour map.
fn colormap(v: u8) -> [u8; 3] {
    let t = v as f64 / 255.0;
    let ramp = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [
        ramp(1.5 - (4.0 * t - 3.0).abs()),
        ramp(1.5 - (4.0 * t - 2.0).abs()),
        ramp(1.5 - (4.0 * t - 1.0).abs()),
    ]
}

/// 50 % blend of the colour-mapped heatmap over a `[3, H, W]` frame;
/// interleaved RGB bytes.
pub fn overlay_bytes(frame: &Tensor<f32>, heat: &[u8]) -> Result<Vec<u8>> {
    let (c, h, w, rgb) = tensor_to_samples(frame)?;
    if c != 3 || heat.len() != h * w {
        return Err(Error::Shape(format!(
            "overlay needs a 3-channel frame matching the {}-pixel heatmap, got {:?}",
            heat.len(),
            frame.shape()
        )));
    }
    let mut out = Vec::with_capacity(rgb.len());
    for (px, &v) in rgb.chunks(3).zip(heat) {
        let colour = colormap(v);
        for ch in 0..3 {
            out.push(((px[ch] as u16 + colour[ch] as u16 + 1) / 2) as u8);
        }
    }
    Ok(out)
}

/// Writes the heatmap of `map` at the frame's resolution as PGM, and
/// optionally a colour overlay on the frame as PPM. Returns the heatmap bytes.
pub fn export_cam<F: Scalar>(
    frame: &Tensor<f32>,
    map: &Tensor<F>,
    heatmap_path: &Path,
    overlay_path: Option<&Path>,
) -> Result<Vec<u8>> {
    let (h, w) = match frame.shape() {
        &[_, h, w] => (h, w),
        s => return Err(Error::Shape(format!("expected a [C, H, W] frame, got {s:?}"))),
    };
    let heat = heatmap_bytes(map, h, w)?;
    write_pgm(heatmap_path, w, h, &heat)?;
    if let Some(path) = overlay_path {
        write_ppm(path, w, h, &overlay_bytes(frame, &heat)?)?;
    }
    Ok(heat)
}
