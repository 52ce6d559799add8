//! SGD with momentum and coupled weight decay, a step learning-rate
//! schedule and random flip augmentation.

mod trainer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub use trainer::{evaluate, predict, train, HistoryRow, TrainHistory, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_step: u64,
    pub max_iterations: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub flip_probability: f64,
    /// Also flip vertically, independently, with the same probability.
    pub vertical_flip: bool,
    pub seed: u64,
    /// Validate every this many iterations (0: only at the end).
    pub val_interval: u64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults for the toy corpus.
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.02,
            lr_decay_factor: 0.5,
            lr_step: 800,
            max_iterations: 2000,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            flip_probability: 0.5,
            vertical_flip: false,
            seed: 0,
            val_interval: 250,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    /// The full-scale recipe: lr 5e-3 halved every 10K iterations up to 45K,
    /// batch 256, momentum 0.9, weight decay 5e-4, flips with p = 0.5.
    pub fn paper() -> Self {
        TrainConfig {
            base_lr: 5e-3,
            lr_decay_factor: 0.5,
            lr_step: 10_000,
            max_iterations: 45_000,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            flip_probability: 0.5,
            vertical_flip: false,
            seed: 0,
            val_interval: 1000,
            checkpoint_interval: 5000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must be in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.lr_step == 0 {
            return bad("lr_step must be at least 1");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// `base_lr · factor^floor(iteration / lr_step)`.
pub fn lr_at(config: &TrainConfig, iteration: u64) -> f64 {
    let steps = (iteration / config.lr_step.max(1)) as i32;
    config.base_lr * config.lr_decay_factor.powi(steps)
}

/// Momentum buffers mirroring the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub velocity: Vec<Tensor<F>>,
    pub iteration: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        OptimizerState {
            velocity: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            iteration: 0,
        }
    }
}

/// `v ← m·v + g + wd·p; p ← p − lr·v`. Gradients are left for the caller
/// to zero.
pub fn sgd_step<F: Scalar>(
    params: &mut ParamStore<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let (lr, m, wd) = (F::of(lr), F::of(momentum), F::of(weight_decay));
    for (p, v) in params.iter_mut().zip(state.velocity.iter_mut()) {
        let grad = p.grad.data();
        let vel = v.data_mut();
        let value = p.value.data_mut();
        for i in 0..value.len() {
            vel[i] = m * vel[i] + grad[i] + wd * value[i];
            value[i] = value[i] - lr * vel[i];
        }
    }
    state.iteration += 1;
}

fn mirror_rows(image: &mut [f32], width: usize) {
    for row in image.chunks_mut(width) {
        row.reverse();
    }
}

fn mirror_columns(image: &mut [f32], height: usize, width: usize) {
    for plane in image.chunks_mut(height * width) {
        for y in 0..height / 2 {
            let (top, bottom) = plane.split_at_mut((height - 1 - y) * width);
            top[y * width..(y + 1) * width].swap_with_slice(&mut bottom[..width]);
        }
    }
}

/// Random mirror of a planar `[C, H, W]` frame: horizontal with
/// probability `p`, and when `vertical` is set an independent vertical
/// mirror with probability `p`. Returns `(flipped_h, flipped_v)`.
pub fn augment_flip<R: Rng + ?Sized>(
    image: &mut [f32],
    height: usize,
    width: usize,
    rng: &mut R,
    p: f64,
    vertical: bool,
) -> (bool, bool) {
    let h = rng.gen_bool(p);
    if h {
        mirror_rows(image, width);
    }
    let v = vertical && rng.gen_bool(p);
    if v {
        mirror_columns(image, height, width);
    }
    (h, v)
}
