use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scoring head sits on top of the residual pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// GAP → dense(hidden) → ReLU → dense(C). A small stand-in for a
    /// fully connected classifier; produces no activation maps.
    FcBaseline,
    /// One bias-free 1×1 CAM convolution at the deepest resolution, then GAP.
    Cam,
    /// A bias-free 1×1 CAM convolution at every resolution; the final score
    /// is the sum of the per-resolution scores and every resolution is
    /// supervised.
    CamDs,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::FcBaseline, HeadKind::Cam, HeadKind::CamDs];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::FcBaseline => "fc-baseline",
            HeadKind::Cam => "cam",
            HeadKind::CamDs => "cam-ds",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown head {s:?}; expected fc-baseline, cam or cam-ds"
                ))
            })
    }
}

/// Index of the abnormal (positive) class.
pub const ABNORMAL: usize = 1;
/// Index of the normal (negative) class.
pub const NORMAL: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Side of the square network input, in pixels.
    pub input_size: usize,
    /// Number of stride-2 resolution stages.
    pub num_resolutions: usize,
    pub channels_per_stage: Vec<usize>,
    pub num_classes: usize,
    pub head: HeadKind,
    /// Residual blocks after each stage's strided entry convolution.
    pub blocks_per_stage: usize,
    pub seed: u64,
    pub moving_average_fraction: f64,
    pub bn_epsilon: f64,
    /// Per-resolution side-loss weights for the cam-ds head. `None` means
    /// every side loss has weight one.
    pub side_loss_weights: Option<Vec<f64>>,
    /// Width of the hidden dense layer of the fc-baseline head.
    pub fc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            num_resolutions: 3,
            channels_per_stage: vec![8, 16, 32],
            num_classes: 2,
            head: HeadKind::CamDs,
            blocks_per_stage: 2,
            seed: 0,
            moving_average_fraction: 0.7,
            bn_epsilon: 1e-5,
            side_loss_weights: None,
            fc_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.num_resolutions;
        if t == 0 {
            return Err(Error::Config("num_resolutions must be at least 1".into()));
        }
        if t >= usize::BITS as usize - 1 {
            return Err(Error::Config(format!("num_resolutions {t} is too large")));
        }
        let factor = 1usize << t;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{t} = {factor}",
                self.input_size
            )));
        }
        if self.input_size / factor < 2 {
            return Err(Error::Config(format!(
                "input_size {} leaves a deepest map of {}×{} after {t} resolutions; need at least 2×2",
                self.input_size,
                self.input_size / factor,
                self.input_size / factor
            )));
        }
        if self.channels_per_stage.len() != t {
            return Err(Error::Config(format!(
                "channels_per_stage has {} entries for {t} resolutions",
                self.channels_per_stage.len()
            )));
        }
        if self.channels_per_stage.iter().any(|&c| c == 0) {
            return Err(Error::Config("channels_per_stage entries must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.moving_average_fraction) {
            return Err(Error::Config(format!(
                "moving_average_fraction {} must lie in [0, 1)",
                self.moving_average_fraction
            )));
        }
        if self.bn_epsilon.is_nan() || self.bn_epsilon <= 0.0 {
            return Err(Error::Config("bn_epsilon must be positive".into()));
        }
        if let Some(w) = &self.side_loss_weights {
            if w.len() != t {
                return Err(Error::Config(format!(
                    "side_loss_weights has {} entries for {t} resolutions",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config("side_loss_weights must be finite and non-negative".into()));
            }
        }
        if self.head == HeadKind::FcBaseline && self.fc_hidden == 0 {
            return Err(Error::Config("fc_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Spatial side of stage `t`'s output (0-based).
    pub fn stage_size(&self, t: usize) -> usize {
        self.input_size >> (t + 1)
    }

    /// Deepest feature map side.
    pub fn deepest_size(&self) -> usize {
        self.stage_size(self.num_resolutions - 1)
    }

    pub fn side_weight(&self, t: usize) -> f64 {
        self.side_loss_weights.as_ref().map_or(1.0, |w| w[t])
    }
}
