use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dual, Tensor};
use crate::error::{Error, Result};

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Clone, Debug)]
pub struct InputCheck {
    pub input: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub rel_errors: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compares the analytic gradient returned by `f` with central differences
/// `(f(x+h·e) − f(x−h·e)) / 2h`, one coordinate at a time.
///
/// `f` returns the scalar value and one gradient per input. It must be
/// deterministic; two evaluations at the same point that disagree are an error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    if !(h > 0.0) {
        return Err(Error::validation("finite-difference step must be positive"));
    }
    let (value, analytic) = f(inputs)?;
    let (again, analytic_again) = f(inputs)?;
    let grads_agree = analytic.len() == analytic_again.len()
        && analytic.iter().zip(&analytic_again).all(|(a, b)| a.bit_eq(b));
    if value.to_bits() != again.to_bits() || !grads_agree {
        return Err(Error::GradCheck(format!(
            "function is not deterministic: {value} vs {again}"
        )));
    }
    if analytic.len() != inputs.len() {
        return Err(Error::GradCheck(format!(
            "expected {} gradients, got {}",
            inputs.len(),
            analytic.len()
        )));
    }

    let mut work = inputs.to_vec();
    let mut checks = Vec::with_capacity(inputs.len());
    for (idx, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[idx].shape() {
            return Err(Error::GradCheck(format!(
                "gradient {idx} has shape {:?}, input has {:?}",
                grad.shape(),
                inputs[idx].shape()
            )));
        }
        let mut rel_errors = Vec::with_capacity(grad.len());
        for k in 0..grad.len() {
            let orig = work[idx].data()[k];
            work[idx].data_mut()[k] = orig + h;
            let plus = f(&work)?.0;
            work[idx].data_mut()[k] = orig - h;
            let minus = f(&work)?.0;
            work[idx].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            rel_errors.push(relative_error(grad.data()[k], numeric));
        }
        let (worst_entry, max_rel_error) = rel_errors
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        checks.push(InputCheck {
            input: idx,
            max_rel_error,
            worst_entry,
            rel_errors,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        inputs: checks,
        max_rel_error,
        tol,
    })
}

/// Gradient-checks a [`Dual`]-producing op by contracting its output with a
/// fixed random projection, which turns it into a scalar function.
///
/// Only the inputs listed in `wrt` are perturbed; the rest are held fixed.
pub fn check_dual<F>(op: F, inputs: &[Tensor], wrt: &[usize], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Dual>,
{
    let probe_shape = op(inputs)?.output.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n: usize = probe_shape.iter().product();
    let projection = Tensor::new(
        probe_shape,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;

    let assemble = |subset: &[Tensor]| -> Vec<Tensor> {
        let mut full = inputs.to_vec();
        for (slot, t) in wrt.iter().zip(subset) {
            full[*slot] = t.clone();
        }
        full
    };
    let f = |subset: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        let full = assemble(subset);
        let dual = op(&full)?;
        let value = dual.output.dot(&projection);
        let grads = dual.backward(&projection);
        Ok((value, wrt.iter().map(|&i| grads[i].clone()).collect()))
    };
    let subset: Vec<Tensor> = wrt.iter().map(|&i| inputs[i].clone()).collect();
    grad_check(f, &subset, h, tol)
}
