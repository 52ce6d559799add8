use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{HeadKind, ModelConfig, ABNORMAL};
use crate::tensor::{
    softmax_rows, Graph, Mode, NormParams, NormStats, ParamId, ParamStore, Scalar, Tensor, Var,
};

/// Batch normalization layer state kept outside the differentiable graph.
#[derive(Clone, Debug)]
pub struct NormLayer<F> {
    pub name: String,
    pub stats: NormStats<F>,
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
    norm: usize,
    stride: usize,
}

#[derive(Clone, Debug)]
struct Stage {
    entry: ConvBn,
    blocks: Vec<(ConvBn, ConvBn)>,
}

#[derive(Clone, Debug)]
enum Head {
    /// (stage index, 1×1 kernel) pairs, shallowest first.
    Cam(Vec<(usize, ParamId)>),
    Fc {
        hidden_w: ParamId,
        hidden_b: ParamId,
        out_w: ParamId,
        out_b: ParamId,
    },
}

/// Residual pyramid with one of the three scoring heads.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<F>,
    norms: Vec<NormLayer<F>>,
    stages: Vec<Stage>,
    head: Head,
}

struct Builder<'a, F: Scalar> {
    params: ParamStore<F>,
    norms: Vec<NormLayer<F>>,
    rng: &'a mut ChaCha8Rng,
}

impl<F: Scalar> Builder<'_, F> {
    fn he_normal(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape, |_| F::of(dist.sample(rng)));
        self.params.register(name, value)
    }

    fn conv_bn(&mut self, prefix: &str, cin: usize, cout: usize, stride: usize) -> Result<ConvBn> {
        let kernel = self.he_normal(format!("{prefix}.conv.weight"), vec![cout, cin, 3, 3], cin * 9)?;
        let gamma = self
            .params
            .register(format!("{prefix}.bn.gamma"), Tensor::full([cout], F::one()))?;
        let beta = self
            .params
            .register(format!("{prefix}.bn.beta"), Tensor::zeros([cout]))?;
        self.norms.push(NormLayer {
            name: format!("{prefix}.bn"),
            stats: NormStats::new(cout),
        });
        Ok(ConvBn {
            kernel,
            gamma,
            beta,
            norm: self.norms.len() - 1,
            stride,
        })
    }
}

/// A recorded forward pass: the graph plus handles to its outputs.
pub struct Forward<F: Scalar = f32> {
    pub graph: Graph<F>,
    pub output: ForwardOutput,
    head: HeadKind,
    side_weights: Vec<f64>,
}

/// Handles into a forward graph.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub batch: usize,
    /// Output of every resolution stage, shallowest first.
    pub features: Vec<Var>,
    /// Per-resolution CAMs and scores. Empty for the fc-baseline head; a
    /// single entry at the deepest resolution for the cam head.
    pub sides: Vec<SideOutput>,
    /// `[B, C]` final scores. For the CAM heads this is the left-to-right
    /// sum of the side scores.
    pub final_scores: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct SideOutput {
    /// 0-based stage index; 0 is the highest resolution.
    pub resolution: usize,
    /// `[B, C, h, w]` class activation maps before positive clamping.
    pub cam: Var,
    /// `[B, C]` spatial means of `cam`.
    pub scores: Var,
}

/// Loss node plus its decomposition into the final and side terms.
#[derive(Clone, Debug)]
pub struct LossBreakdown<F> {
    pub total: Var,
    pub total_value: F,
    pub final_term: F,
    /// Unweighted side cross-entropies, shallowest first. Empty unless the
    /// head is cam-ds.
    pub side_terms: Vec<F>,
}

impl<F: Scalar> Model<F> {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder {
            params: ParamStore::new(),
            norms: Vec::new(),
            rng: &mut rng,
        };
        let mut stages = Vec::with_capacity(config.num_resolutions);
        let mut cin = 3;
        for (t, &c) in config.channels_per_stage.iter().enumerate() {
            let entry = b.conv_bn(&format!("stage{}.entry", t + 1), cin, c, 2)?;
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for j in 0..config.blocks_per_stage {
                let first = b.conv_bn(&format!("stage{}.block{}.a", t + 1, j + 1), c, c, 1)?;
                let second = b.conv_bn(&format!("stage{}.block{}.b", t + 1, j + 1), c, c, 1)?;
                blocks.push((first, second));
            }
            stages.push(Stage { entry, blocks });
            cin = c;
        }
        let classes = config.num_classes;
        let head = match config.head {
            HeadKind::FcBaseline => {
                let hidden = config.fc_hidden;
                let hidden_w = b.he_normal("fc.hidden.weight".into(), vec![hidden, cin], cin)?;
                let hidden_b = b
                    .params
                    .register("fc.hidden.bias", Tensor::zeros([hidden]))?;
                let out_w = b.he_normal("fc.out.weight".into(), vec![classes, hidden], hidden)?;
                let out_b = b.params.register("fc.out.bias", Tensor::zeros([classes]))?;
                Head::Fc {
                    hidden_w,
                    hidden_b,
                    out_w,
                    out_b,
                }
            }
            HeadKind::Cam | HeadKind::CamDs => {
                let first = if config.head == HeadKind::Cam {
                    config.num_resolutions - 1
                } else {
                    0
                };
                let mut heads = Vec::new();
                for t in first..config.num_resolutions {
                    let k = config.channels_per_stage[t];
                    let id = b.he_normal(format!("cam{}.weight", t + 1), vec![classes, k, 1, 1], k)?;
                    heads.push((t, id));
                }
                Head::Cam(heads)
            }
        };
        let Builder { params, norms, .. } = b;
        Ok(Model {
            config,
            params,
            norms,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn norm_layers(&self) -> &[NormLayer<F>] {
        &self.norms
    }

    pub fn norm_layers_mut(&mut self) -> &mut [NormLayer<F>] {
        &mut self.norms
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Name of the 1×1 CAM kernel at 0-based resolution `t`, if any.
    pub fn cam_kernel_name(&self, t: usize) -> Option<String> {
        match &self.head {
            Head::Cam(heads) => heads
                .iter()
                .find(|(s, _)| *s == t)
                .map(|(_, id)| self.params.get(*id).name().to_string()),
            Head::Fc { .. } => None,
        }
    }

    /// Resolutions (0-based) that carry a CAM head.
    pub fn cam_resolutions(&self) -> Vec<usize> {
        match &self.head {
            Head::Cam(heads) => heads.iter().map(|(t, _)| *t).collect(),
            Head::Fc { .. } => Vec::new(),
        }
    }

    fn conv_bn(
        &mut self,
        g: &mut Graph<F>,
        x: Var,
        layer: ConvBn,
        mode: Mode,
        relu: bool,
    ) -> Result<Var> {
        let k = g.param(&self.params, layer.kernel);
        let y = g.conv2d(x, k, None, layer.stride, 1)?;
        let gamma = g.param(&self.params, layer.gamma);
        let beta = g.param(&self.params, layer.beta);
        let params = NormParams {
            mode,
            moving_average_fraction: self.config.moving_average_fraction,
            epsilon: self.config.bn_epsilon,
        };
        let norm = &mut self.norms[layer.norm];
        let y = g.batch_norm(y, gamma, beta, &mut norm.stats, params, &norm.name)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Runs a `[B, 3, S, S]` batch through the network. Train mode uses
    /// batch statistics and updates the running ones.
    pub fn forward(&mut self, batch: &Tensor<F>, mode: Mode) -> Result<Forward<F>> {
        let (_, c, h, w) = batch.dims4()?;
        let s = self.config.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!(
                "expected input batch of shape [B, 3, {s}, {s}], got {:?}",
                batch.shape()
            )));
        }
        let mut g = Graph::new();
        let mut x = g.input(batch.clone());
        let mut features = Vec::with_capacity(self.stages.len());
        for t in 0..self.stages.len() {
            let entry = self.stages[t].entry;
            x = self.conv_bn(&mut g, x, entry, mode, true)?;
            for j in 0..self.stages[t].blocks.len() {
                let (first, second) = self.stages[t].blocks[j];
                let y = self.conv_bn(&mut g, x, first, mode, true)?;
                let y = self.conv_bn(&mut g, y, second, mode, false)?;
                let sum = g.add(y, x)?;
                x = g.relu(sum);
            }
            features.push(x);
        }
        let (sides, final_scores) = match &self.head {
            Head::Cam(heads) => {
                let mut sides = Vec::with_capacity(heads.len());
                for &(t, kernel) in heads {
                    let k = g.param(&self.params, kernel);
                    let cam = g.conv2d(features[t], k, None, 1, 0)?;
                    let scores = g.global_avg_pool(cam)?;
                    sides.push(SideOutput {
                        resolution: t,
                        cam,
                        scores,
                    });
                }
                let mut total = sides[0].scores;
                for side in &sides[1..] {
                    total = g.add(total, side.scores)?;
                }
                (sides, total)
            }
            Head::Fc {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                let pooled = g.global_avg_pool(*features.last().expect("at least one stage"))?;
                let hw = g.param(&self.params, *hidden_w);
                let hb = g.param(&self.params, *hidden_b);
                let hidden = g.linear(pooled, hw, Some(hb))?;
                let hidden = g.relu(hidden);
                let ow = g.param(&self.params, *out_w);
                let ob = g.param(&self.params, *out_b);
                (Vec::new(), g.linear(hidden, ow, Some(ob))?)
            }
        };
        let side_weights = (0..self.config.num_resolutions)
            .map(|t| self.config.side_weight(t))
            .collect();
        Ok(Forward {
            graph: g,
            output: ForwardOutput {
                batch: batch.shape()[0],
                features,
                sides,
                final_scores,
            },
            head: self.config.head,
            side_weights,
        })
    }
}

impl<F: Scalar> Forward<F> {
    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.output.batch {
            return Err(Error::Shape(format!(
                "batch item {item} out of range for batch of {}",
                self.output.batch
            )));
        }
        Ok(())
    }

    fn row(&self, var: Var, item: usize) -> Vec<F> {
        let t = self.graph.value(var);
        let c = t.shape()[1];
        t.data()[item * c..(item + 1) * c].to_vec()
    }

    /// `[C]` final scores of one batch item.
    pub fn final_scores(&self, item: usize) -> Result<Vec<F>> {
        self.check_item(item)?;
        Ok(self.row(self.output.final_scores, item))
    }

    /// Side scores of one batch item, one `[C]` row per CAM head.
    pub fn side_scores(&self, item: usize) -> Result<Vec<Vec<F>>> {
        self.check_item(item)?;
        Ok(self
            .output
            .sides
            .iter()
            .map(|s| self.row(s.scores, item))
            .collect())
    }

    fn side(&self, resolution: usize) -> Result<&SideOutput> {
        self.output
            .sides
            .iter()
            .find(|s| s.resolution == resolution)
            .ok_or_else(|| {
                let available: Vec<usize> =
                    self.output.sides.iter().map(|s| s.resolution).collect();
                Error::Config(format!(
                    "no class activation map at resolution index {resolution} (available: {available:?})"
                ))
            })
    }

    /// Unclamped `[h, w]` activation map for class `class` at 0-based
    /// resolution `resolution`.
    pub fn cam(&self, resolution: usize, class: usize, item: usize) -> Result<Tensor<F>> {
        self.check_item(item)?;
        let side = self.side(resolution)?;
        let maps = self.graph.value(side.cam);
        let (_, c, h, w) = maps.dims4()?;
        if class >= c {
            return Err(Error::Config(format!(
                "class {class} out of range for {c} classes"
            )));
        }
        let off = (item * c + class) * h * w;
        Tensor::new([h, w], maps.data()[off..off + h * w].to_vec())
    }

    /// Map of positive contributions `max(0, cam)`.
    pub fn positive_cam(&self, resolution: usize, class: usize, item: usize) -> Result<Tensor<F>> {
        Ok(self.cam(resolution, class, item)?.map(|v| v.max(F::zero())))
    }

    /// Probability of the abnormal class per batch item, from a softmax
    /// over the final scores.
    pub fn predict_proba(&self) -> Vec<f64> {
        let scores = self.graph.value(self.output.final_scores);
        let c = scores.shape()[1];
        softmax_rows(scores.data(), c)
            .chunks(c)
            .map(|row| row[ABNORMAL].as_f64())
            .collect()
    }

    /// Adds the training loss to the graph.
    ///
    /// For cam-ds this is the final-score cross-entropy plus the weighted
    /// sum of per-resolution cross-entropies, accumulated left to right in
    /// that order; other heads use the final-score cross-entropy alone.
    pub fn loss(&mut self, labels: &[usize]) -> Result<LossBreakdown<F>> {
        let g = &mut self.graph;
        let final_node = g.cross_entropy(self.output.final_scores, labels)?;
        let final_term = g.value(final_node).item();
        let mut total = final_node;
        let mut side_terms = Vec::new();
        if self.head == HeadKind::CamDs {
            for side in &self.output.sides {
                let ce = g.cross_entropy(side.scores, labels)?;
                side_terms.push(g.value(ce).item());
                let weight = self.side_weights[side.resolution];
                let term = if weight == 1.0 {
                    ce
                } else {
                    g.scale(ce, F::of(weight))
                };
                total = g.add(total, term)?;
            }
        }
        Ok(LossBreakdown {
            total,
            total_value: g.value(total).item(),
            final_term,
            side_terms,
        })
    }
}
