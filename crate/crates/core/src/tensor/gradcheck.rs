use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub excluded: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error used by every gradient check in the crate.
///
/// The denominator is floored at `1e-8` so that two vanishing gradients do
/// not blow the ratio up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}

/// Checks `f`'s autodiff gradient at `point` against central differences
/// `(f(x+h) − f(x−h)) / 2h`, one coordinate at a time.
///
/// `f` receives a fresh graph and the variable holding the point and must
/// return a scalar node. Coordinates with `|x| < 10·h` are skipped, since a
/// kink at zero (ReLU) makes central differences meaningless there.
pub fn finite_diff_check<Func>(
    f: Func,
    point: &Tensor<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    Func: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |x: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.variable(x.clone());
        let out = f(&mut g, v)?;
        let value = g.value(out);
        if !value.is_scalar() {
            return Err(Error::Shape(format!(
                "finite_diff_check needs a scalar function, got shape {:?}",
                value.shape()
            )));
        }
        Ok(value.item())
    };

    let mut graph = Graph::new();
    let var = graph.variable(point.clone());
    let out = f(&mut graph, var)?;
    let mut unused = ParamStore::new();
    let grads = graph.backward(out, &mut unused)?;
    let zeros = Tensor::zeros(point.shape().to_vec());
    let analytic = grads.get(var).unwrap_or(&zeros);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
        tolerance: tol,
    };
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x0 = point.data()[i];
        if x0.abs() < 10.0 * h {
            report.excluded += 1;
            continue;
        }
        probe.data_mut()[i] = x0 + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = x0 - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic.data()[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
