use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::Objective;
use crate::{Error, Result};

/// Per-coordinate step for finite-difference Hessians.
pub const FD_STEP: f64 = 1e-5;

fn weighted_gradient<O: Objective>(obj: &O, params: &[f64], examples: &[(&O::Example, f64)]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; params.len()];
    for (ex, w) in examples {
        let g = obj.gradient_at(params, ex)?;
        for (a, gi) in acc.iter_mut().zip(g) {
            *a += w * gi;
        }
    }
    Ok(acc)
}

/// Central differences of the analytic gradient of `sum_i w_i L(ex_i)` at
/// `params`, column `k` from perturbing coordinate `k`. Not symmetrized.
pub fn hessian_weighted<O: Objective>(obj: &O, params: &[f64], examples: &[(&O::Example, f64)]) -> Result<DMatrix<f64>> {
    let p = params.len();
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let mut theta = params.to_vec();
            theta[k] = params[k] + FD_STEP;
            let plus = weighted_gradient(obj, &theta, examples)?;
            theta[k] = params[k] - FD_STEP;
            let minus = weighted_gradient(obj, &theta, examples)?;
            Ok(plus
                .iter()
                .zip(&minus)
                .map(|(a, b)| (a - b) / (2.0 * FD_STEP))
                .collect())
        })
        .collect::<Result<_>>()?;
    let m = DMatrix::from_fn(p, p, |i, k| columns[k][i]);
    if let Some(index) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "Hessian".into(),
            index,
        });
    }
    Ok(m)
}

/// Finite-difference Hessian of the mean loss over `examples`, before
/// symmetrization.
pub fn hessian_unsymmetrized<O: Objective>(obj: &O, examples: &[O::Example]) -> Result<DMatrix<f64>> {
    if examples.is_empty() {
        return Err(Error::Invalid("Hessian needs at least one example".into()));
    }
    let w = 1.0 / examples.len() as f64;
    let weighted: Vec<(&O::Example, f64)> = examples.iter().map(|e| (e, w)).collect();
    hessian_weighted(obj, obj.current_params(), &weighted)
}

/// `(M + M^T)/2 + damping * I` where `M` is the finite-difference Hessian of
/// the mean loss over `examples`.
pub fn hessian<O: Objective>(obj: &O, examples: &[O::Example], damping: f64) -> Result<DMatrix<f64>> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::Invalid(format!("damping must be finite and >= 0, got {damping}")));
    }
    let m = hessian_unsymmetrized(obj, examples)?;
    Ok(symmetrize_and_damp(&m, damping))
}

pub(crate) fn symmetrize_and_damp(m: &DMatrix<f64>, damping: f64) -> DMatrix<f64> {
    let mut h = (m + m.transpose()) * 0.5;
    for i in 0..h.nrows() {
        h[(i, i)] += damping;
    }
    h
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
