use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::FrameSet;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, HeadKind, Model, NamedArray, RngState, TrainerState};
use crate::tensor::{Mode, Tensor};
use crate::train::{augment_flip, lr_at, sgd_step, OptimizerState, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    /// 1-based count of completed optimizer steps.
    pub iteration: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_final: f64,
    pub loss_sides: Vec<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub num_resolutions: usize,
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn new(num_resolutions: usize) -> Self {
        TrainHistory {
            num_resolutions,
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> String {
        let mut h = String::from("iteration,lr,loss_total,loss_final");
        for t in 1..=self.num_resolutions {
            write!(h, ",loss_side_{t}").unwrap();
        }
        h.push_str(",val_accuracy");
        h
    }

    /// CSV text. Side-loss cells are empty for heads without deep
    /// supervision, and `val_accuracy` is empty between validations.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.iteration, r.lr, r.loss_total, r.loss_final).unwrap();
            for t in 0..self.num_resolutions {
                out.push(',');
                if let Some(v) = r.loss_sides.get(t) {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push(',');
            if let Some(a) = r.val_accuracy {
                write!(out, "{a}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn last_val_accuracy(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_accuracy)
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.val_accuracy).reduce(f64::max)
    }
}

/// Abnormal-class probabilities for every frame, evaluated in fixed chunks
/// of `batch_size` in eval mode. With `threads > 1` chunks are spread over
/// model clones; chunking is unchanged, so results do not depend on the
/// thread count.
pub fn predict(model: &Model<f32>, set: &FrameSet, batch_size: usize, threads: usize) -> Result<Vec<f64>> {
    let indices: Vec<usize> = (0..set.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(batch_size.max(1)).collect();
    let run = |model: &mut Model<f32>, chunk: &[usize]| -> Result<Vec<f64>> {
        let (batch, _) = set.batch::<f32>(chunk, |_| {})?;
        Ok(model.forward(&batch, Mode::Eval)?.predict_proba())
    };
    let threads = threads.clamp(1, chunks.len().max(1));
    if threads == 1 {
        let mut m = model.clone();
        let mut out = Vec::with_capacity(set.len());
        for c in &chunks {
            out.extend(run(&mut m, c)?);
        }
        return Ok(out);
    }
    let per_thread = chunks.len().div_ceil(threads);
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .chunks(per_thread)
            .map(|group| {
                let mut m = model.clone();
                let run = &run;
                s.spawn(move || -> Result<Vec<f64>> {
                    let mut out = Vec::new();
                    for c in group {
                        out.extend(run(&mut m, c)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(set.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Frame accuracy at threshold 0.5 (ties count as abnormal).
pub fn evaluate(model: &Model<f32>, set: &FrameSet, batch_size: usize, threads: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("cannot evaluate on an empty split".into()));
    }
    let probs = predict(model, set, batch_size, threads)?;
    let correct = probs
        .iter()
        .enumerate()
        .filter(|&(i, &p)| (p >= 0.5) == (set.class(i) == crate::model::ABNORMAL))
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Owns the model, optimizer and sampling state of one training run.
pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    optimizer: OptimizerState<f32>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    dataset_len: usize,
    pub threads: usize,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig, dataset_len: usize) -> Result<Self> {
        config.validate()?;
        if dataset_len == 0 {
            return Err(Error::Empty("training split is empty".into()));
        }
        let optimizer = OptimizerState::new(model.params());
        Ok(Trainer {
            model,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            optimizer,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            dataset_len,
            threads: 1,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.optimizer.iteration
    }

    fn next_indices(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.dataset_len).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        // The last batch of an epoch may be short.
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self, set: &FrameSet) -> Result<HistoryRow> {
        if set.len() != self.dataset_len {
            return Err(Error::Config(format!(
                "trainer was set up for {} frames, got {}",
                self.dataset_len,
                set.len()
            )));
        }
        let it = self.optimizer.iteration;
        let lr = lr_at(&self.config, it);
        let indices = self.next_indices();
        let s = set.size();
        let (p, vertical) = (self.config.flip_probability, self.config.vertical_flip);
        let rng = &mut self.rng;
        let (batch, labels) = set.batch::<f32>(&indices, |img| {
            augment_flip(img, s, s, rng, p, vertical);
        })?;
        let mut fwd = self.model.forward(&batch, Mode::Train)?;
        let loss = fwd.loss(&labels)?;
        let total = loss.total_value as f64;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                lr,
                total,
                final_term: loss.final_term as f64,
                sides: loss.side_terms.iter().map(|&v| v as f64).collect(),
            });
        }
        fwd.graph.backward(loss.total, self.model.params_mut())?;
        let c = &self.config;
        sgd_step(self.model.params_mut(), &mut self.optimizer, lr, c.momentum, c.weight_decay);
        self.model.params_mut().zero_grad();
        Ok(HistoryRow {
            iteration: it + 1,
            lr,
            loss_total: total,
            loss_final: loss.final_term as f64,
            loss_sides: loss.side_terms.iter().map(|&v| v as f64).collect(),
            val_accuracy: None,
        })
    }

    /// Trains until `config.max_iterations` steps are done. Validation runs
    /// every `val_interval` steps and after the last one; checkpoints go to
    /// `checkpoint_dir` every `checkpoint_interval` steps.
    pub fn run(
        &mut self,
        train_set: &FrameSet,
        val_set: Option<&FrameSet>,
        checkpoint_dir: Option<&Path>,
        history: &mut TrainHistory,
        mut on_row: impl FnMut(&HistoryRow),
    ) -> Result<()> {
        let max = self.config.max_iterations;
        while self.optimizer.iteration < max {
            let mut row = self.step(train_set)?;
            let it = row.iteration;
            let vi = self.config.val_interval;
            if let Some(val) = val_set.filter(|v| !v.is_empty()) {
                if (vi > 0 && it % vi == 0) || it == max {
                    row.val_accuracy = Some(evaluate(&self.model, val, 64, self.threads)?);
                }
            }
            on_row(&row);
            history.rows.push(row);
            let ci = self.config.checkpoint_interval;
            if let Some(dir) = checkpoint_dir {
                if ci > 0 && it % ci == 0 && it != max {
                    self.checkpoint().save(&dir.join(format!("checkpoint_{it:06}.ckpt")))?;
                }
            }
        }
        Ok(())
    }

    /// Weights, statistics, momentum and sampling state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint(self.optimizer.iteration);
        ckpt.momentum = self
            .model
            .params()
            .iter()
            .zip(&self.optimizer.velocity)
            .map(|(p, v)| NamedArray {
                name: p.name().to_string(),
                shape: v.shape().to_vec(),
                data: v.data().to_vec(),
            })
            .collect();
        ckpt.trainer = Some(TrainerState {
            train_config: self.config.clone(),
            epoch: self.epoch,
            cursor: self.cursor,
            order: self.order.clone(),
            dataset_len: self.dataset_len,
            rng: RngState {
                seed: hex::encode(self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
        });
        ckpt
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    /// `config` replaces the saved configuration (e.g. a larger
    /// `max_iterations`); pass `None` to keep it.
    pub fn resume(ckpt: &Checkpoint, config: Option<TrainConfig>) -> Result<Self> {
        let state = ckpt
            .trainer
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint carries no trainer state".into()))?;
        let model = Model::<f32>::from_checkpoint(ckpt)?;
        let config = config.unwrap_or_else(|| state.train_config.clone());
        config.validate()?;
        if ckpt.momentum.len() != model.params().len() {
            return Err(Error::Config("checkpoint carries no momentum buffers".into()));
        }
        let velocity = ckpt
            .momentum
            .iter()
            .map(|m| Tensor::new(m.shape.clone(), m.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        let bad_rng = || Error::Config("checkpoint random generator state is malformed".into());
        let seed: [u8; 32] = hex::decode(&state.rng.seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(bad_rng)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(state.rng.stream);
        rng.set_word_pos(state.rng.word_pos.parse().map_err(|_| bad_rng())?);
        Ok(Trainer {
            model,
            config,
            optimizer: OptimizerState {
                velocity,
                iteration: ckpt.iteration,
            },
            rng,
            order: state.order.clone(),
            cursor: state.cursor,
            epoch: state.epoch,
            dataset_len: state.dataset_len,
            threads: 1,
        })
    }
}

/// Trains `model` from scratch. Returns the final checkpoint (with
/// optimizer state) and the per-iteration history.
pub fn train(
    model: Model<f32>,
    train_set: &FrameSet,
    val_set: Option<&FrameSet>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Checkpoint, TrainHistory)> {
    let t = model.config().num_resolutions;
    let sides = if model.config().head == HeadKind::CamDs { t } else { 0 };
    let mut trainer = Trainer::new(model, config.clone(), train_set.len())?;
    let mut history = TrainHistory::new(sides);
    trainer.run(train_set, val_set, checkpoint_dir, &mut history, |_| {})?;
    Ok((trainer.checkpoint(), history))
}
