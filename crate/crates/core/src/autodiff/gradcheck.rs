use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-tensor `‖analytic − numeric‖ / max(1e-8, ‖analytic‖ + ‖numeric‖)`
    /// over all parameters, using Euclidean norms.
    pub max_relative_error: f64,
    /// Parameter attaining `max_relative_error`.
    pub worst_param: String,
    /// Entry of `worst_param` with the largest absolute discrepancy.
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Check `∂f/∂params` from [`Graph::backward`] against central differences
/// with step `eps`. `f` builds a scalar loss from leaves bound to `params`
/// (in order) and must be deterministic.
pub fn grad_check<S, F>(f: F, params: &[(String, Tensor<S>)], eps: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |values: &[Tensor<S>], grad: bool| -> Result<(f64, Option<Vec<Tensor<S>>>)> {
        let mut g = Graph::new();
        g.set_check_finite(false);
        let ids: Vec<NodeId> = values.iter().map(|v| g.param(v.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let value = g.value(loss).item().as_f64();
        if !grad {
            return Ok((value, None));
        }
        g.backward(loss)?;
        let grads = ids
            .iter()
            .zip(values)
            .map(|(&id, v)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect();
        Ok((value, Some(grads)))
    };

    let mut values: Vec<Tensor<S>> = params.iter().map(|(_, t)| t.clone()).collect();
    let (base, analytic) = eval(&values, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }
    let analytic = analytic.expect("requested gradients");

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };
    let step = S::of(eps);
    for (p, (name, _)) in params.iter().enumerate() {
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        let (mut worst_abs, mut worst_k) = (-1.0, 0);
        for k in 0..values[p].numel() {
            let orig = values[p].data()[k];
            values[p].data_mut()[k] = orig + step;
            let (plus, _) = eval(&values, false)?;
            values[p].data_mut()[k] = orig - step;
            let (minus, _) = eval(&values, false)?;
            values[p].data_mut()[k] = orig;

            let a = analytic[p].data()[k].as_f64();
            if !plus.is_finite() || !minus.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("{name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let d = (a - numeric).abs();
            if d > worst_abs {
                worst_abs = d;
                worst_k = k;
            }
            diff_sq += d * d;
            a_sq += a * a;
            n_sq += numeric * numeric;
            report.entries_checked += 1;
        }
        let rel = diff_sq.sqrt() / (a_sq.sqrt() + n_sq.sqrt()).max(1e-8);
        if rel > report.max_relative_error || report.worst_param.is_empty() {
            report.max_relative_error = rel.max(report.max_relative_error);
            report.worst_param = name.clone();
            report.worst_index = worst_k;
        }
    }
    Ok(report)
}
