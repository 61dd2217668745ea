use candle_core::Tensor;

use super::{device, scalar, to_vec, ParamStore};
use crate::error::Result;

/// Worst per-tensor disagreement between autograd and central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)` for the worst parameter tensor.
    pub max_relative_error: f64,
    pub worst_param: String,
    pub coordinates_checked: usize,
}

/// Compare backprop gradients of `loss` against central finite differences over
/// every scalar of every parameter. `loss` must be a deterministic function of the
/// parameters (fix any sampling noise before calling).
///
/// Tensors whose gradient norm is below `1e-9` on both sides are compared by
/// absolute error instead, so exactly-zero gradients don't divide by zero.
pub fn finite_difference_check(
    params: &ParamStore,
    eps: f64,
    loss: impl Fn() -> Result<Tensor>,
) -> Result<GradCheckReport> {
    let value = loss()?;
    let grads = value.backward()?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        coordinates_checked: 0,
    };
    for (name, var) in params.iter() {
        let shape = var.shape().clone();
        let original = to_vec(var.as_tensor())?;
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => to_vec(g)?,
            None => vec![0.0; original.len()],
        };
        let mut numeric = Vec::with_capacity(original.len());
        let mut probe = original.clone();
        for i in 0..original.len() {
            probe[i] = original[i] + eps;
            var.set(&Tensor::from_vec(probe.clone(), shape.clone(), &device())?)?;
            let up = scalar(&loss()?)?;
            probe[i] = original[i] - eps;
            var.set(&Tensor::from_vec(probe.clone(), shape.clone(), &device())?)?;
            let down = scalar(&loss()?)?;
            probe[i] = original[i];
            numeric.push((up - down) / (2.0 * eps));
        }
        var.set(&Tensor::from_vec(original, shape, &device())?)?;
        report.coordinates_checked += numeric.len();

        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let err = if scale < 1e-9 { norm(&diff) } else { norm(&diff) / scale };
        if err > report.max_relative_error || report.worst_param.is_empty() {
            report.max_relative_error = err;
            report.worst_param = name.clone();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let mut ps = ParamStore::new();
        let w = ps.uniform("w", (2, 3), 1.0, &mut SeededRng::new(0)).unwrap();
        let ok = finite_difference_check(&ps, 1e-6, || Ok((w.sqr()?.sum_all()? * 0.5)?)).unwrap();
        assert!(ok.max_relative_error < 1e-8, "{ok:?}");
        // detach hides the true gradient from autograd, so the check must flag it
        let bad = finite_difference_check(&ps, 1e-6, || Ok((w.sqr()?.sum_all()? + w.detach().sum_all()?)?)).unwrap();
        assert!(bad.max_relative_error > 0.1, "{bad:?}");
    }
}
