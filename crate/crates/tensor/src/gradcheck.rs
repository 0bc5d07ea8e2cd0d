//! Central finite-difference gradient checking at `f64`.

use crate::error::Result;
use crate::tensor::Tensor;

/// Settings for [`check_gradient`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Finite-difference half-width.
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged by absolute error at this scale.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5, floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub checked: Vec<usize>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Worst relative error between the autodiff gradient of `f` at `input` and
/// central differences, over every entry.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let all: Vec<usize> = (0..input.numel()).collect();
    let cfg = GradCheck { step, ..GradCheck::default() };
    Ok(check_gradient(f, input, &all, cfg)?.max_rel_error)
}

/// Compares gradients at the given flat indices only.
pub fn check_gradient<F>(f: F, input: &Tensor<f64>, indices: &[usize], cfg: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let x = input.with_grad(true);
    f(&x)?.backward()?;
    let grad = x.grad().unwrap_or_else(|| vec![0.0; input.numel()]);

    let base = input.to_vec();
    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut v = base.clone();
        v[i] += delta;
        f(&Tensor::from_vec(input.shape(), v)?)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        analytic: Vec::with_capacity(indices.len()),
        numeric: Vec::with_capacity(indices.len()),
        checked: indices.to_vec(),
    };
    for &i in indices {
        let numeric = (eval(i, cfg.step)? - eval(i, -cfg.step)?) / (2.0 * cfg.step);
        let analytic = grad[i];
        let rel = relative_error(analytic, numeric, cfg.floor);
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}
