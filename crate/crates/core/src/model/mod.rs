//! Residual pyramid classifier with embedded class activation maps.
//!
//! Each resolution stage halves the spatial size with a strided 3×3
//! convolution and refines with residual blocks. A bias-free 1×1
//! convolution turns a stage's features into one map per class; the spatial
//! mean of that map is the stage's class score. With the cam-ds head the
//! final score is the sum over stages and every stage's score is
//! supervised.

mod cam;
mod checkpoint;
mod config;
mod gradcheck;
mod network;

pub use cam::{export_cam, heatmap_bytes, overlay_bytes, upsample_nearest};
pub use checkpoint::{
    config_hash, Checkpoint, NamedArray, NormSnapshot, RngState, TrainerState,
    CHECKPOINT_MAGIC_PREFIX, CHECKPOINT_VERSION,
};
pub use config::{HeadKind, ModelConfig, ABNORMAL, NORMAL};
pub use network::{Forward, ForwardOutput, LossBreakdown, Model, NormLayer, SideOutput};

