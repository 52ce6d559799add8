//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes are only ever appended, so the tape is
//! already in topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::conv::ConvGeometry;
use crate::tensor::{ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Running per-channel statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub initialized: bool,
}

impl<F: Scalar> NormStats<F> {
    pub fn new(channels: usize) -> Self {
        NormStats {
            mean: vec![F::zero(); channels],
            var: vec![F::one(); channels],
            initialized: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParams {
    pub mode: Mode,
    /// Weight of the previous running value in the moving average.
    pub moving_average_fraction: f64,
    pub epsilon: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        NormParams {
            mode: Mode::Train,
            moving_average_fraction: 0.7,
            epsilon: 1e-5,
        }
    }
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
        cols: Vec<F>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: F,
    },
    Sum {
        input: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Softmax {
        input: Var,
    },
    CrossEntropy {
        input: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// Recorded computation. One graph per forward pass.
pub struct Graph<F = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free variable whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf holding a copy of a parameter's current value. Its gradient is
    /// accumulated into the parameter on backward.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (b, cin, h, w) = self.value(input).dims4()?;
        let (cout, kcin, kh, kw) = self.value(kernel).dims4().map_err(|_| {
            Error::Config(format!(
                "conv2d kernel must be rank 4, got {:?}",
                self.value(kernel).shape()
            ))
        })?;
        if kcin != cin {
            return Err(Error::Config(format!(
                "conv2d channel mismatch: input shape {:?} has {cin} channels, kernel shape {:?} expects {kcin}",
                self.value(input).shape(),
                self.value(kernel).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if let Some(bias) = bias {
            if self.value(bias).shape() != [cout] {
                return Err(Error::Config(format!(
                    "conv2d bias shape {:?} does not match {cout} output channels",
                    self.value(bias).shape()
                )));
            }
        }
        let geometry = ConvGeometry {
            channels: cin,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
        };
        let (oh, ow) = (geometry.out_height(), geometry.out_width());
        let (patch, positions) = (geometry.patch_len(), geometry.positions());
        let mut cols = vec![F::zero(); b * patch * positions];
        let mut out = vec![F::zero(); b * cout * positions];
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            for bi in 0..b {
                let col = &mut cols[bi * patch * positions..(bi + 1) * patch * positions];
                geometry.im2col(&x[bi * cin * h * w..(bi + 1) * cin * h * w], col);
                let dst = &mut out[bi * cout * positions..(bi + 1) * cout * positions];
                F::gemm(cout, patch, positions, F::one(), k, false, col, false, F::zero(), dst);
            }
            if let Some(bias) = bias {
                let bv = self.value(bias).data();
                for (i, chunk) in out.chunks_mut(positions).enumerate() {
                    let add = bv[i % cout];
                    chunk.iter_mut().for_each(|v| *v = *v + add);
                }
            }
        }
        let value = Tensor::new([b, cout, oh, ow], out)?;
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            },
            rg,
        ))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut NormStats<F>,
        params: NormParams,
        layer: &str,
    ) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::Shape(format!(
                    "batch_norm {what} shape {:?} does not match {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::Shape(format!(
                "running statistics of {layer} cover {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let spatial = h * w;
        let count = b * spatial;
        let train = params.mode == Mode::Train;
        if train && count < 2 {
            return Err(Error::Shape(format!(
                "batch_norm in train mode needs at least 2 values per channel, got {count}"
            )));
        }
        if !train && !stats.initialized {
            return Err(Error::UninitializedStats(layer.to_string()));
        }
        let x = self.value(input).data();
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        if train {
            for bi in 0..b {
                for ci in 0..c {
                    let s = &x[(bi * c + ci) * spatial..(bi * c + ci + 1) * spatial];
                    mean[ci] += s.iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for bi in 0..b {
                for ci in 0..c {
                    let s = &x[(bi * c + ci) * spatial..(bi * c + ci + 1) * spatial];
                    let m = mean[ci];
                    var[ci] += s.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
        } else {
            for ci in 0..c {
                mean[ci] = stats.mean[ci].as_f64();
                var[ci] = stats.var[ci].as_f64();
            }
        }
        let inv_std: Vec<F> = var
            .iter()
            .map(|v| F::of(1.0 / (v + params.epsilon).sqrt()))
            .collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![F::zero(); x.len()];
        let mut out = vec![F::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * spatial;
                let m = F::of(mean[ci]);
                for i in off..off + spatial {
                    let xh = (x[i] - m) * inv_std[ci];
                    xhat[i] = xh;
                    out[i] = g[ci] * xh + be[ci];
                }
            }
        }
        if train {
            let f = params.moving_average_fraction;
            // Running variance uses the unbiased estimate.
            let correction = count as f64 / (count as f64 - 1.0);
            for ci in 0..c {
                stats.mean[ci] = F::of(f * stats.mean[ci].as_f64() + (1.0 - f) * mean[ci]);
                stats.var[ci] =
                    F::of(f * stats.var[ci].as_f64() + (1.0 - f) * var[ci] * correction);
            }
            stats.initialized = true;
        }
        let value = Tensor::new([b, c, h, w], out)?;
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(F::zero()));
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: F) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Sum { input }, rg)
    }

    /// Spatial mean per (batch, channel): `[B,C,H,W] → [B,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let spatial = h * w;
        let inv = F::of(1.0 / spatial as f64);
        let data = self
            .value(input)
            .data()
            .chunks(spatial)
            .map(|s| s.iter().copied().sum::<F>() * inv)
            .collect();
        let value = Tensor::new([b, c], data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    /// Dense layer: `[B,In] × [Out,In]ᵀ + bias → [B,Out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (b, fin) = self.value(input).dims2()?;
        let (fout, win) = self.value(weight).dims2()?;
        if win != fin {
            return Err(Error::Config(format!(
                "linear: input shape {:?} incompatible with weight shape {:?}",
                self.value(input).shape(),
                self.value(weight).shape()
            )));
        }
        let mut out = vec![F::zero(); b * fout];
        F::gemm(
            b,
            fin,
            fout,
            F::one(),
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            F::zero(),
            &mut out,
        );
        if let Some(bias) = bias {
            let bv = self.value(bias).data();
            if bv.len() != fout {
                return Err(Error::Config(format!(
                    "linear: bias has {} entries, expected {fout}",
                    bv.len()
                )));
            }
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o = *o + bb);
            }
        }
        let value = Tensor::new([b, fout], out)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(value, Op::Linear { input, weight, bias }, rg))
    }

    /// Row-wise softmax of `[B,C]` scores.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let (b, c) = self.value(input).dims2()?;
        let data = softmax_rows(self.value(input).data(), c);
        let value = Tensor::new([b, c], data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Softmax { input }, rg))
    }

    /// Mean over the batch of `−log softmax(scores)[label]`.
    pub fn cross_entropy(&mut self, input: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(input).dims2()?;
        if labels.len() != b {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let scores = self.value(input).data();
        let mut total = 0f64;
        for (row, &label) in scores.chunks(c).zip(labels) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max).as_f64();
            let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
            total += lse - row[label].as_f64();
        }
        let probs = softmax_rows(scores, c);
        let value = Tensor::scalar(F::of(total / b as f64));
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                input,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Activation pattern of every ReLU in the graph (`true` where the
    /// input was positive). Two evaluations with equal patterns lie on the
    /// same smooth piece of the network function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu { input } = node.op {
                out.extend(self.value(input).data().iter().map(|&v| v > F::zero()));
            }
        }
        out
    }

    /// Back-propagates from a scalar `loss`, accumulating into the
    /// parameter gradients of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<F>) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads, store)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], var: Var, g: Tensor<F>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(
        &self,
        node: &Node<F>,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
        store: &mut ParamStore<F>,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            } => {
                let (b, cin, h, w) = self.value(*input).dims4()?;
                let kshape = self.value(*kernel).shape().to_vec();
                let cout = kshape[0];
                let (patch, positions) = (geometry.patch_len(), geometry.positions());
                let gd = g.data();
                if self.requires_grad(*kernel) {
                    let mut dk = vec![F::zero(); cout * patch];
                    for bi in 0..b {
                        F::gemm(
                            cout,
                            positions,
                            patch,
                            F::one(),
                            &gd[bi * cout * positions..(bi + 1) * cout * positions],
                            false,
                            &cols[bi * patch * positions..(bi + 1) * patch * positions],
                            true,
                            F::one(),
                            &mut dk,
                        );
                    }
                    self.accumulate(grads, *kernel, Tensor::new(kshape, dk)?);
                }
                if let Some(bias) = bias {
                    if self.requires_grad(*bias) {
                        let mut db = vec![F::zero(); cout];
                        for (i, chunk) in gd.chunks(positions).enumerate() {
                            db[i % cout] = db[i % cout] + chunk.iter().copied().sum::<F>();
                        }
                        self.accumulate(grads, *bias, Tensor::new([cout], db)?);
                    }
                }
                if self.requires_grad(*input) {
                    let k = self.value(*kernel).data();
                    let mut dx = vec![F::zero(); b * cin * h * w];
                    let mut dcols = vec![F::zero(); patch * positions];
                    for bi in 0..b {
                        F::gemm(
                            patch,
                            cout,
                            positions,
                            F::one(),
                            k,
                            true,
                            &gd[bi * cout * positions..(bi + 1) * cout * positions],
                            false,
                            F::zero(),
                            &mut dcols,
                        );
                        geometry.col2im(&dcols, &mut dx[bi * cin * h * w..(bi + 1) * cin * h * w]);
                    }
                    self.accumulate(grads, *input, Tensor::new([b, cin, h, w], dx)?);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (b, c, h, w) = self.value(*input).dims4()?;
                let spatial = h * w;
                let count = (b * spatial) as f64;
                let gd = g.data();
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![0f64; c];
                let mut sum_dy_xhat = vec![0f64; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * spatial;
                        for i in off..off + spatial {
                            let dy = gd[i].as_f64();
                            sum_dy[ci] += dy;
                            sum_dy_xhat[ci] += dy * xhat[i].as_f64();
                        }
                    }
                }
                if self.requires_grad(*gamma) {
                    let dg = sum_dy_xhat.iter().map(|&v| F::of(v)).collect();
                    self.accumulate(grads, *gamma, Tensor::new([c], dg)?);
                }
                if self.requires_grad(*beta) {
                    let db = sum_dy.iter().map(|&v| F::of(v)).collect();
                    self.accumulate(grads, *beta, Tensor::new([c], db)?);
                }
                if self.requires_grad(*input) {
                    let mut dx = vec![F::zero(); gd.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = (bi * c + ci) * spatial;
                            let scale = gam[ci] * inv_std[ci];
                            if *train {
                                let mean_dy = F::of(sum_dy[ci] / count);
                                let mean_dy_xhat = F::of(sum_dy_xhat[ci] / count);
                                for i in off..off + spatial {
                                    dx[i] = scale * (gd[i] - mean_dy - xhat[i] * mean_dy_xhat);
                                }
                            } else {
                                for i in off..off + spatial {
                                    dx[i] = scale * gd[i];
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new([b, c, h, w], dx)?);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let data = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                    .collect();
                let dx = Tensor::new(g.shape().to_vec(), data)?;
                self.accumulate(grads, *input, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), da)?);
                self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), db)?);
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(grads, *input, g.map(|v| v * f));
            }
            Op::Sum { input } => {
                let gv = g.item();
                let shape = self.value(*input).shape().to_vec();
                self.accumulate(grads, *input, Tensor::full(shape, gv));
            }
            Op::GlobalAvgPool { input } => {
                let (b, c, h, w) = self.value(*input).dims4()?;
                let spatial = h * w;
                let inv = F::of(1.0 / spatial as f64);
                let mut dx = Vec::with_capacity(b * c * spatial);
                for &gv in g.data() {
                    dx.extend(std::iter::repeat(gv * inv).take(spatial));
                }
                self.accumulate(grads, *input, Tensor::new([b, c, h, w], dx)?);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (b, fin) = self.value(*input).dims2()?;
                let (fout, _) = self.value(*weight).dims2()?;
                let gd = g.data();
                if self.requires_grad(*input) {
                    let mut dx = vec![F::zero(); b * fin];
                    let wv = self.value(*weight).data();
                    F::gemm(b, fout, fin, F::one(), gd, false, wv, false, F::zero(), &mut dx);
                    self.accumulate(grads, *input, Tensor::new([b, fin], dx)?);
                }
                if self.requires_grad(*weight) {
                    let mut dw = vec![F::zero(); fout * fin];
                    let xv = self.value(*input).data();
                    F::gemm(fout, b, fin, F::one(), gd, true, xv, false, F::zero(), &mut dw);
                    self.accumulate(grads, *weight, Tensor::new([fout, fin], dw)?);
                }
                if let Some(bias) = bias {
                    let mut db = vec![F::zero(); fout];
                    for row in gd.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    self.accumulate(grads, *bias, Tensor::new([fout], db)?);
                }
            }
            Op::Softmax { input } => {
                let (b, c) = node.value.dims2()?;
                let y = node.value.data();
                let gd = g.data();
                let mut dx = vec![F::zero(); b * c];
                for r in 0..b {
                    let row = r * c..(r + 1) * c;
                    let dot: F = y[row.clone()]
                        .iter()
                        .zip(&gd[row.clone()])
                        .map(|(&a, &bb)| a * bb)
                        .sum();
                    for i in row {
                        dx[i] = y[i] * (gd[i] - dot);
                    }
                }
                self.accumulate(grads, *input, Tensor::new([b, c], dx)?);
            }
            Op::CrossEntropy {
                input,
                labels,
                probs,
            } => {
                let (b, c) = self.value(*input).dims2()?;
                let scale = g.item() / F::of(b as f64);
                let mut dx = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    dx[r * c + label] = dx[r * c + label] - F::one();
                }
                dx.iter_mut().for_each(|v| *v = *v * scale);
                self.accumulate(grads, *input, Tensor::new([b, c], dx)?);
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax over consecutive rows of length `cols`.
pub fn softmax_rows<F: Scalar>(data: &[F], cols: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max).as_f64();
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| F::of(e / total)));
    }
    out
}
