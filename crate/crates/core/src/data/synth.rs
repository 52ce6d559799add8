//! Synthetic stand-in corpus.
//!
//! Frames are a pinkish mucosa-like background with sparse, thin,
//! gently curving dark strokes. Abnormal frames additionally contain one
//! square region of dense, thick, sharply turning strokes; the region is
//! written as a `<frame>_mask.pgm` next to the frame.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::image::{encode_pnm, Raster};
use crate::data::manifest::{manifest_to_string, FrameRecord, Label};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub patients_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub image_size: usize,
    /// Strokes per frame in the background texture.
    pub thin_strokes: usize,
    pub thin_length: usize,
    /// Half-width in pixels; 0 draws 1-pixel lines.
    pub thin_radius: usize,
    /// Strokes inside the planted region.
    pub tangle_strokes: usize,
    pub tangle_length: usize,
    pub tangle_radius: usize,
    /// Standard deviation of the per-step heading change (radians).
    pub tangle_curvature: f64,
    pub region_size: usize,
    /// Per-pixel noise standard deviation.
    pub noise: f64,
    /// Fraction of frames rendered as blurred, featureless and marked
    /// uninformative.
    pub uninformative_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            patients_per_class: 20,
            min_frames: 50,
            max_frames: 50,
            image_size: 64,
            thin_strokes: 6,
            thin_length: 24,
            thin_radius: 0,
            tangle_strokes: 6,
            tangle_length: 40,
            tangle_radius: 1,
            tangle_curvature: 0.7,
            region_size: 24,
            noise: 0.04,
            uninformative_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 8 {
            return bad(format!("image_size must be at least 8, got {}", self.image_size));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!(
                "frame range must satisfy 1 <= min_frames <= max_frames, got {}..={}",
                self.min_frames, self.max_frames
            ));
        }
        if self.region_size == 0 || self.region_size > self.image_size {
            return bad(format!(
                "region_size must be in 1..={}, got {}",
                self.image_size, self.region_size
            ));
        }
        if !(0.0..=1.0).contains(&self.uninformative_fraction) {
            return bad("uninformative_fraction must be in [0, 1]".into());
        }
        if !(self.noise >= 0.0 && self.tangle_curvature >= 0.0) {
            return bad("noise and tangle_curvature must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub manifest_path: PathBuf,
    pub records: Vec<FrameRecord>,
    /// Number of mask files written.
    pub masks: usize,
    /// SHA-256 over the manifest and every written file, in manifest order.
    pub digest: String,
}

const STROKE: [f64; 3] = [0.45, 0.12, 0.18];

struct Canvas {
    size: usize,
    /// Planar RGB.
    rgb: Vec<f64>,
}

impl Canvas {
    fn background(size: usize, tint: [f64; 3], noise: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = Normal::new(0.0, noise.max(1e-12)).expect("positive std");
        let mut rgb = vec![0.0; 3 * size * size];
        for c in 0..3 {
            for p in 0..size * size {
                rgb[c * size * size + p] = tint[c] + n.sample(rng);
            }
        }
        Canvas { size, rgb }
    }

    fn stamp(&mut self, x: f64, y: f64, radius: usize, colour: [f64; 3]) {
        let (cx, cy) = (x.round() as isize, y.round() as isize);
        let r = radius as isize;
        for yy in cy - r..=cy + r {
            for xx in cx - r..=cx + r {
                if xx >= 0 && yy >= 0 && (xx as usize) < self.size && (yy as usize) < self.size {
                    let p = yy as usize * self.size + xx as usize;
                    for c in 0..3 {
                        self.rgb[c * self.size * self.size + p] = colour[c];
                    }
                }
            }
        }
    }

    /// Random walk with unit steps, reflecting off the box `[x0, x1) × [y0, y1)`.
    #[allow(clippy::too_many_arguments)]
    fn stroke(
        &mut self,
        rng: &mut ChaCha8Rng,
        bounds: (f64, f64, f64, f64),
        length: usize,
        radius: usize,
        curvature: f64,
        shade: f64,
    ) {
        let (x0, y0, x1, y1) = bounds;
        let turn = Normal::new(0.0, curvature.max(1e-12)).expect("positive std");
        let mut x = rng.gen_range(x0..x1);
        let mut y = rng.gen_range(y0..y1);
        let mut heading: f64 = rng.gen_range(0.0..2.0 * PI);
        let colour = STROKE.map(|v| v * shade);
        for _ in 0..length {
            self.stamp(x, y, radius, colour);
            heading += turn.sample(rng);
            let (mut nx, mut ny) = (x + heading.cos(), y + heading.sin());
            if nx < x0 || nx >= x1 {
                heading = PI - heading;
                nx = x;
            }
            if ny < y0 || ny >= y1 {
                heading = -heading;
                ny = y;
            }
            x = nx;
            y = ny;
        }
    }

    fn blur(&mut self) {
        let s = self.size;
        let src = self.rgb.clone();
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for yy in y.saturating_sub(3)..(y + 4).min(s) {
                        for xx in x.saturating_sub(3)..(x + 4).min(s) {
                            acc += src[c * s * s + yy * s + xx];
                            n += 1.0;
                        }
                    }
                    self.rgb[c * s * s + y * s + x] = acc / n;
                }
            }
        }
    }

    fn to_ppm(&self) -> Vec<u8> {
        let plane = self.size * self.size;
        let mut samples = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                samples.push((self.rgb[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        encode_pnm(self.size, self.size, 3, &samples)
    }
}

/// Path of the region mask belonging to a frame image.
pub fn mask_path(frame_path: &Path) -> PathBuf {
    let stem = frame_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    frame_path.with_file_name(format!("{stem}_mask.pgm"))
}

fn write(path: &Path, bytes: &[u8], hasher: &mut Sha256) -> Result<()> {
    hasher.update(bytes);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the corpus under `out_dir`: `manifest.csv` plus
/// `frames/<patient>/fNNN.ppm` and masks for abnormal frames.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticCorpus> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = 2 * spec.patients_per_class;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < spec.patients_per_class { Label::Normal } else { Label::Abnormal })
        .collect();
    labels.shuffle(&mut rng);

    let size = spec.image_size;
    let full = (0.0, 0.0, size as f64, size as f64);
    let width = (n.max(1) - 1).to_string().len().max(3);
    let mut hasher = Sha256::new();
    let mut records = Vec::new();
    let mut masks = 0;
    for (i, &label) in labels.iter().enumerate() {
        let patient_id = format!("p{i:0width$}");
        let dir = out_dir.join("frames").join(&patient_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let frames = rng.gen_range(spec.min_frames..=spec.max_frames);
        // Per-patient tint, as between endoscopy sessions.
        let tint = [
            0.86 + rng.gen_range(-0.04..0.04),
            0.60 + rng.gen_range(-0.04..0.04),
            0.64 + rng.gen_range(-0.04..0.04),
        ];
        for f in 0..frames {
            let rel = PathBuf::from("frames").join(&patient_id).join(format!("f{f:03}.ppm"));
            let informative = !(spec.uninformative_fraction > 0.0
                && rng.gen_bool(spec.uninformative_fraction));
            let mut canvas = Canvas::background(size, tint, spec.noise, &mut rng);
            let mut mask = None;
            if informative {
                for _ in 0..spec.thin_strokes {
                    let shade = rng.gen_range(0.8..1.2);
                    canvas.stroke(&mut rng, full, spec.thin_length, spec.thin_radius, 0.15, shade);
                }
                if label == Label::Abnormal {
                    let r = spec.region_size;
                    let (rx, ry) = (rng.gen_range(0..=size - r), rng.gen_range(0..=size - r));
                    let bounds = (rx as f64, ry as f64, (rx + r) as f64, (ry + r) as f64);
                    for _ in 0..spec.tangle_strokes {
                        let shade = rng.gen_range(0.8..1.2);
                        canvas.stroke(
                            &mut rng,
                            bounds,
                            spec.tangle_length,
                            spec.tangle_radius,
                            spec.tangle_curvature,
                            shade,
                        );
                    }
                    let mut m = vec![0u8; size * size];
                    for y in ry..ry + r {
                        m[y * size + rx..y * size + rx + r].fill(255);
                    }
                    mask = Some(m);
                }
            } else {
                canvas.blur();
            }
            let path = out_dir.join(&rel);
            write(&path, &canvas.to_ppm(), &mut hasher)?;
            if let Some(m) = mask {
                write(&mask_path(&path), &encode_pnm(size, size, 1, &m), &mut hasher)?;
                masks += 1;
            }
            records.push(FrameRecord {
                patient_id: patient_id.clone(),
                frame_index: f as u32,
                path: rel,
                label,
                informative,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    write(&manifest_path, manifest_to_string(&records).as_bytes(), &mut hasher)?;
    Ok(SyntheticCorpus {
        manifest_path,
        records,
        masks,
        digest: hex::encode(hasher.finalize()),
    })
}

/// Stroke pixels: Rec. 601 luminance below 0.5.
pub fn stroke_pixels(raster: &Raster) -> Vec<bool> {
    let px = raster.width * raster.height;
    let scale = 1.0 / raster.maxval as f64;
    (0..px)
        .map(|p| {
            let lum = if raster.channels == 1 {
                raster.samples[p] as f64
            } else {
                let s = &raster.samples[p * 3..p * 3 + 3];
                0.299 * s[0] as f64 + 0.587 * s[1] as f64 + 0.114 * s[2] as f64
            };
            lum * scale < 0.5
        })
        .collect()
}

/// Fraction of stroke pixels, optionally restricted to a mask.
pub fn stroke_density(raster: &Raster, mask: Option<&Raster>) -> f64 {
    let strokes = stroke_pixels(raster);
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, s) in strokes.iter().enumerate() {
        if mask.map_or(true, |m| m.samples[p] > 127) {
            total += 1;
            hit += *s as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}
