use crate::error::Result;
use crate::model::Model;
use crate::tensor::{relative_error, GradCheckReport, Mode, ParamId, Tensor};

impl Model<f64> {
    /// Training loss on a fixed batch, with its ReLU activation pattern.
    fn loss_and_pattern(&mut self, batch: &Tensor<f64>, labels: &[usize]) -> Result<(f64, Vec<bool>)> {
        let mut fwd = self.forward(batch, Mode::Train)?;
        let loss = fwd.loss(labels)?;
        Ok((loss.total_value, fwd.graph.relu_pattern()))
    }

    /// Compares the backpropagated gradient of the training loss (batch
    /// statistics) with central differences `(L(θ+h) − L(θ−h)) / 2h` for
    /// every parameter scalar.
    ///
    /// Coordinates whose ±h perturbations put any ReLU input on different
    /// sides of zero are skipped: the loss is not differentiable there and a
    /// difference quotient straddling the kink is meaningless. Running
    /// statistics are restored afterwards.
    pub fn check_gradients(
        &mut self,
        batch: &Tensor<f64>,
        labels: &[usize],
        h: f64,
        tolerance: f64,
    ) -> Result<GradCheckReport> {
        let saved_norms = self.norm_layers().to_vec();
        self.params_mut().zero_grad();
        let mut fwd = self.forward(batch, Mode::Train)?;
        let loss = fwd.loss(labels)?;
        fwd.graph.backward(loss.total, self.params_mut())?;
        let analytic: Vec<Vec<f64>> = self.params().iter().map(|p| p.grad.data().to_vec()).collect();
        self.params_mut().zero_grad();

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            excluded: 0,
            tolerance,
        };
        let mut flat = 0;
        for (p, grads) in analytic.iter().enumerate() {
            let id = ParamId(p);
            for (i, &a) in grads.iter().enumerate() {
                let original = self.params().get(id).value.data()[i];
                self.params_mut().get_mut(id).value.data_mut()[i] = original + h;
                let (plus, pat_plus) = self.loss_and_pattern(batch, labels)?;
                self.params_mut().get_mut(id).value.data_mut()[i] = original - h;
                let (minus, pat_minus) = self.loss_and_pattern(batch, labels)?;
                self.params_mut().get_mut(id).value.data_mut()[i] = original;
                if pat_plus != pat_minus {
                    report.excluded += 1;
                } else {
                    let err = relative_error(a, (plus - minus) / (2.0 * h));
                    if err > report.max_rel_error || err.is_nan() {
                        report.max_rel_error = err;
                        report.worst_index = Some(flat);
                    }
                    report.checked += 1;
                }
                flat += 1;
            }
        }
        self.norm_layers_mut().clone_from_slice(&saved_norms);
        Ok(report)
    }
}
