//! Central-difference gradient checking (64-bit).

use crate::error::{DiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates, evenly spaced over the tensor.
    pub max_coords: Option<usize>,
    /// Skip coordinates whose value lies within this distance of zero
    /// (kinks of abs/relu).
    pub skip_near_zero: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: None,
            skip_near_zero: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, x: Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::checked();
    let xv = tape.param(x);
    let y = f(&mut tape, xv)?;
    let out = tape.value(y);
    if out.len() != 1 {
        return Err(DiffError::Usage(format!(
            "gradient check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    Ok(out.item())
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// `(f(x+εe) − f(x−εe)) / 2ε`, returning the worst relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::checked();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    let mut grads = tape.backward(y)?;
    let analytic = grads
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()))
        .into_data();

    let n = x.len();
    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for idx in coords {
        let xi = x.data()[idx];
        if opts.skip_near_zero.is_some_and(|z| xi.abs() <= z) {
            report.skipped += 1;
            continue;
        }
        let mut plus = x.clone();
        plus.data_mut()[idx] = xi + opts.eps;
        let mut minus = x.clone();
        minus.data_mut()[idx] = xi - opts.eps;
        let numeric = (eval(&f, plus)? - eval(&f, minus)?) / (2.0 * opts.eps);
        let e = rel_err(analytic[idx], numeric);
        report.checked += 1;
        if e > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst_index = Some(idx);
        }
    }
    Ok(report)
}
