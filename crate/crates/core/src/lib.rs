//! Training-data valuation laboratory on a miniature autoregressive model.
//!
//! Two valuation families are implemented side by side and cross-checked:
//! in-context probing (prepend a candidate as a demonstration and watch the
//! anchor answers' likelihood) and gradient influence (inner products of loss
//! gradients, optionally preconditioned by an exact damped Hessian). The
//! model is small enough that every quantity can be checked against a brute
//! force oracle.
//!
//! Modules:
//! - [`corpus`]: tasks, vocabularies, task files and synthetic bundles
//! - [`tinylm`]: the model, analytic gradients, SGD, finite-difference Hessians
//! - [`valuation`]: ICP, soft ICP, Infl_IP, damped-Hessian influence, FT scores
//! - [`implicit_gd`]: linear-attention decomposition and one-shot vs one-step
//! - [`analysis`]: Spearman correlation, top-k overlap, score bins
//! - [`pipeline`]: experiment config, CLI command bodies, verification suite

pub mod analysis;
pub mod corpus;
mod error;
pub mod implicit_gd;
pub mod pipeline;
pub mod tinylm;
pub mod valuation;

pub use error::{Error, Result};

/// Floats in every CSV output: scientific notation, 17 significant digits.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}
