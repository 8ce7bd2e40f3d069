//! Central finite-difference verification of graph gradients.

use crate::graph::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Per-tensor outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the graph gradient of `f` against central differences for every
/// coordinate of every tensor in `params`.
///
/// `f` builds a scalar loss from one graph variable per parameter tensor.
/// Parameters are restored to their original values before returning.
pub fn grad_check_report<F>(f: F, params: &mut [Tensor], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::Domain {
            op: "grad_check",
            msg: format!("epsilon must be positive, got {epsilon}"),
        });
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.shape(v)))
        })
        .collect();
    drop(g);

    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensors: Vec::with_capacity(params.len()),
    };
    for t in 0..params.len() {
        let mut check = TensorCheck {
            index: t,
            max_rel_error: 0.0,
            max_abs_analytic: analytic[t].max_abs(),
            max_abs_numeric: 0.0,
        };
        for j in 0..params[t].numel() {
            let orig = params[t].data()[j];
            params[t].data_mut()[j] = orig + epsilon;
            let plus = eval(params);
            params[t].data_mut()[j] = orig - epsilon;
            let minus = eval(params);
            params[t].data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            check.max_abs_numeric = check.max_abs_numeric.max(numeric.abs());
            check.max_rel_error = check
                .max_rel_error
                .max(relative_error(analytic[t].data()[j], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.tensors.push(check);
    }
    Ok(report)
}

/// Maximum relative error over all coordinates; see [`grad_check_report`].
pub fn grad_check<F>(f: F, params: &mut [Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_report(f, params, epsilon).map(|r| r.max_rel_error)
}
