//! Central finite-difference checks of tape gradients (64-bit only).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// `name[flat index]` of the worst coordinate
    pub worst: String,
    pub coords_checked: usize,
}

/// Checks every coordinate of every named input.
pub fn grad_check<F>(f: F, point: &[(&str, Tensor<f64>)], step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    grad_check_sampled(f, point, step, usize::MAX)
}

/// Like [`grad_check`] but checks at most `per_tensor` evenly spaced
/// coordinates of each input.
pub fn grad_check_sampled<F>(
    f: F,
    point: &[(&str, Tensor<f64>)],
    step: f64,
    per_tensor: usize,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.value().numel() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(out.value().item())
    };

    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = point.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut values: Vec<Tensor<f64>> = point.iter().map(|(_, v)| v.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        coords_checked: 0,
    };
    for (t, (name, base)) in point.iter().enumerate() {
        let n = base.numel();
        let stride = n.div_ceil(per_tensor.min(n)).max(1);
        for k in (0..n).step_by(stride) {
            let x0 = base.data()[k];
            values[t].data_mut()[k] = x0 + step;
            let up = eval(&values)?;
            values[t].data_mut()[k] = x0 - step;
            let down = eval(&values)?;
            values[t].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[t].data()[k];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::GradCheck(format!(
                    "non-finite value at {name}[{k}] (analytic {a}, numeric {numeric})"
                )));
            }
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if report.worst.is_empty() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{k}]");
            }
        }
    }
    Ok(report)
}
