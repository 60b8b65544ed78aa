//! Finite-difference gradient oracle.
//!
//! Central differences are taken in double-double arithmetic so the oracle's
//! own cancellation error (about `eps * |L| / h` in plain f64, i.e. ~1e-11 at
//! `h = 1e-5`) does not swamp coordinates whose true gradient is tiny.

use rayon::prelude::*;
use twofloat::TwoFloat;

use super::{conditional_loss_with, TinyModel};
use crate::corpus::Task;
use crate::Result;

/// Central-difference gradient of the conditional loss with per-coordinate
/// step `step`, evaluated in double-double precision.
pub fn finite_difference_gradient(model: &TinyModel, task: &Task, step: f64) -> Result<Vec<f64>> {
    let base: Vec<TwoFloat> = model.params().as_slice().iter().map(|&v| TwoFloat::from(v)).collect();
    let h = TwoFloat::from(step);
    (0..base.len())
        .into_par_iter()
        .map(|k| {
            let mut theta = base.clone();
            theta[k] = base[k] + h;
            let plus = conditional_loss_with(model, &theta, task)?;
            theta[k] = base[k] - h;
            let minus = conditional_loss_with(model, &theta, task)?;
            Ok(f64::from((plus - minus) / (h * 2.0)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Coordinates with `|analytic| > threshold`.
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradientMismatch>,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares analytic and numeric gradients coordinate-wise with relative
/// error `|a - n| / max(|a|, |n|)`, over coordinates with `|a| > threshold`.
pub fn check_gradient(analytic: &[f64], numeric: &[f64], threshold: f64, tolerance: f64) -> GradientCheck {
    let mut report = GradientCheck {
        checked: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };
    for (index, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if !(a.abs() > threshold) && a.is_finite() {
            continue;
        }
        report.checked += 1;
        let rel_error = (a - n).abs() / a.abs().max(n.abs());
        let rel_error = if rel_error.is_nan() { f64::INFINITY } else { rel_error };
        report.max_rel_error = report.max_rel_error.max(rel_error);
        if !(rel_error < tolerance) {
            report.failures.push(GradientMismatch {
                index,
                analytic: a,
                numeric: n,
                rel_error,
            });
        }
    }
    report
}
