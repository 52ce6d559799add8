//! Deeply supervised class-activation-map classifier for binary frame
//! classification, with the evaluation tooling around it.
//!
//! * [`tensor`]: dense tensors and a reverse-mode differentiation tape.
//! * [`model`]: residual pyramid with a bias-free 1×1 CAM head per
//!   resolution, the deep-supervision loss, CAM export and checkpoints.
//! * [`train`]: SGD with momentum, step learning-rate schedule, flips.
//! * [`metrics`]: frame metrics, patient aggregation, ROC/AUC,
//!   Krippendorff's alpha and per-fold reports.
//! * [`data`]: manifests, patient-level folds, PPM/PGM I/O and the
//!   synthetic corpus generator.

pub mod cli;
pub mod data;
pub mod metrics;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
