//! Finite-difference gradient verification.
//!
//! Uses only forward evaluations, so it stays independent of every backward
//! rule it checks.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation size.
    pub step: f64,
    /// Maximum relative error `|a - n| / max(|a|, |n|)`.
    pub rel_tol: f64,
    /// Absolute differences below this always pass.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            rel_tol: 1e-6,
            abs_floor: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Compares tape gradients of the scalar `f(inputs)` against a fourth-order
/// central difference
/// `(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h` for every input element.
///
/// Non-scalar outputs are summed.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], config: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        Ok(f(&tape, &vars)?.value().sum_f64())
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    let root = if out.shape().numel() == 1 { out } else { out.sum()? };
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
    };
    let h = config.step;
    let mut worst_score = -1.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .map(Tensor::to_f64_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut values = inputs.to_vec();
                let mut data = values[i].to_f64_vec();
                data[j] += delta;
                values[i] = Tensor::from_vec(values[i].shape(), data)?;
                eval(&values)
            };
            let numeric = (-shifted(2.0 * h)? + 8.0 * shifted(h)? - 8.0 * shifted(-h)? + shifted(-2.0 * h)?)
                / (12.0 * h);
            let a = analytic[j];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > config.abs_floor {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= config.rel_tol {
                    report.failures += 1;
                }
            }
            let score = if abs > config.abs_floor { rel } else { 0.0 };
            if score > worst_score {
                worst_score = score;
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}
