//! Frame manifests, patient-level folds, image I/O and the synthetic
//! corpus generator.

pub mod folds;
pub mod image;
pub mod manifest;
pub mod synth;

use std::path::Path;

pub use folds::{
    fold_counts, leak_violations, load_folds, parse_folds, save_folds, split_folds, FoldSplit,
    Role, SplitRatios,
};
pub use image::{center_crop_square, load_image, prepare_frame, resize_width, save_image};
pub use manifest::{
    filter_informative, load_manifest, parse_manifest, patient_clips, patient_labels,
    resolve_path, save_manifest, FrameRecord, Label, PatientClip,
};
pub use synth::{generate_synthetic, mask_path, stroke_density, SyntheticCorpus, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Frames decoded into memory at network resolution.
#[derive(Clone, Debug)]
pub struct FrameSet {
    size: usize,
    /// `[N, 3, S, S]` flattened.
    pixels: Vec<f32>,
    pub records: Vec<FrameRecord>,
}

impl FrameSet {
    /// Loads and prepares (resize + centre crop) every record's image.
    pub fn load(records: &[FrameRecord], manifest_dir: &Path, size: usize) -> Result<Self> {
        let per = 3 * size * size;
        let mut pixels = Vec::with_capacity(records.len() * per);
        for r in records {
            let img = load_image(&resolve_path(manifest_dir, r))?;
            pixels.extend_from_slice(prepare_frame(&img, size)?.data());
        }
        Ok(FrameSet {
            size,
            pixels,
            records: records.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let per = 3 * self.size * self.size;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn frame_tensor(&self, i: usize) -> Tensor<f32> {
        Tensor::new([3, self.size, self.size], self.frame(i).to_vec()).expect("frame shape")
    }

    pub fn class(&self, i: usize) -> usize {
        self.records[i].label.class()
    }

    /// `[B, 3, S, S]` batch of the given frames; `transform` may rewrite each
    /// frame in place (augmentation).
    pub fn batch<F: Scalar>(
        &self,
        indices: &[usize],
        mut transform: impl FnMut(&mut [f32]),
    ) -> Result<(Tensor<F>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Config(format!("frame index {bad} out of range for {} frames", self.len())));
        }
        let per = 3 * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut buf = vec![0f32; per];
        for &i in indices {
            buf.copy_from_slice(self.frame(i));
            transform(&mut buf);
            data.extend(buf.iter().map(|&v| F::of(v as f64)));
        }
        let labels = indices.iter().map(|&i| self.class(i)).collect();
        Ok((Tensor::new([indices.len(), 3, self.size, self.size], data)?, labels))
    }
}
