//! Binary PGM (P5) / PPM (P6) reading and writing, plus the resize and crop
//! steps that prepare frames for the network.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded 8-bit PNM raster. Samples are interleaved for 3-channel images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u8>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl HeaderReader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.name, format!("byte offset {}", self.pos), msg)
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8], name: &str) -> Result<Raster> {
    let mut r = HeaderReader { bytes, pos: 0, name };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(r.err("not a binary PGM (P5) or PPM (P6) file")),
    };
    r.pos = 2;
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(r.err("zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(r.err(format!("unsupported maxval {maxval} (only 8-bit samples)")));
    }
    match bytes.get(r.pos) {
        Some(c) if c.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(r.err("missing whitespace after header")),
    }
    let needed = width * height * channels;
    let available = bytes.len() - r.pos;
    if available < needed {
        return Err(r.err(format!(
            "truncated pixel data: need {needed} bytes, found {available}"
        )));
    }
    let samples = bytes[r.pos..r.pos + needed].to_vec();
    if let Some(bad) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(r.err(format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(Raster {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pnm(width: usize, height: usize, channels: usize, samples: &[u8]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(samples.len(), width * height * channels);
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, samples: &[u8]) -> Result<()> {
    write_file(path, &encode_pnm(width, height, 1, samples))
}

/// Writes interleaved RGB samples as P6.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_file(path, &encode_pnm(width, height, 3, rgb))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, &path.display().to_string())
}

/// Converts a raster to a `[3, H, W]` tensor with values in `[0, 1]`.
/// Grayscale is replicated into all three channels.
pub fn raster_to_tensor(r: &Raster) -> Tensor<f32> {
    let plane = r.width * r.height;
    let maxval = r.maxval as f32;
    Tensor::from_fn([3, r.height, r.width], |i| {
        let (c, p) = (i / plane, i % plane);
        let s = if r.channels == 1 {
            r.samples[p]
        } else {
            r.samples[p * 3 + c]
        };
        s as f32 / maxval
    })
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    Ok(raster_to_tensor(&read_raster(path)?))
}

/// Quantizes a `[C, H, W]` tensor (C = 1 or 3) in `[0, 1]` to 8-bit samples,
/// interleaved for colour.
pub fn tensor_to_samples(image: &Tensor<f32>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        s => {
            return Err(Error::Shape(format!(
                "expected a [1|3, H, W] image, got {s:?}"
            )))
        }
    };
    let plane = h * w;
    let d = image.data();
    let mut samples = vec![0u8; c * plane];
    for ch in 0..c {
        for p in 0..plane {
            let v = (d[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8;
            samples[p * c + ch] = v;
        }
    }
    Ok((c, h, w, samples))
}

/// Saves a `[3, H, W]` tensor as PPM or a `[1, H, W]` tensor as PGM.
pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (c, h, w, samples) = tensor_to_samples(image)?;
    write_file(path, &encode_pnm(w, h, c, &samples))
}

fn dims3(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::Shape(format!("expected a [C, H, W] image, got {s:?}"))),
    }
}

/// Bilinear resize to `target_width`, height following the aspect ratio.
pub fn resize_width(image: &Tensor<f32>, target_width: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(image)?;
    if target_width == 0 {
        return Err(Error::Config("target width must be positive".into()));
    }
    if target_width == w {
        return Ok(image.clone());
    }
    let target_height = ((h as f64 * target_width as f64 / w as f64).round() as usize).max(1);
    let sy = h as f64 / target_height as f64;
    let sx = w as f64 / target_width as f64;
    let sample = |pos: f64, limit: usize| {
        let p = (pos.max(0.0)).min((limit - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(limit - 1);
        (lo, hi, (p - lo as f64) as f32)
    };
    let d = image.data();
    let mut out = vec![0f32; c * target_height * target_width];
    for y in 0..target_height {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, h);
        for x in 0..target_width {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, w);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(ch * target_height + y) * target_width + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new([c, target_height, target_width], out)
}

/// Central square crop with side `min(H, W)`.
pub fn center_crop_square(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(image)?;
    let side = h.min(w);
    let (oy, ox) = ((h - side) / 2, (w - side) / 2);
    let d = image.data();
    let mut out = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in 0..side {
            let row = (ch * h + oy + y) * w + ox;
            out.extend_from_slice(&d[row..row + side]);
        }
    }
    Tensor::new([c, side, side], out)
}

/// Resize to `size` wide then crop the centre square: the network input.
pub fn prepare_frame(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = dims3(image)?;
    if h == size && w == size {
        return Ok(image.clone());
    }
    // Scale the shorter side to `size`, so the crop is always `size` square.
    let target_width = if h < w {
        (w as f64 * size as f64 / h as f64).round() as usize
    } else {
        size
    };
    center_crop_square(&resize_width(image, target_width)?)
}
