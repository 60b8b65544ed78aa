//! Linear attention as zero-shot weights plus an in-context update, and the
//! empirical comparison of one-shot inference with one SGD step.
//!
//! With columns `X = [X_train, X_test]` and no softmax,
//! `W_v X (W_k X)^T q = W_v X_test (W_k X_test)^T q + W_v X_train (W_k X_train)^T q`:
//! the first addend only sees the query, the second is the update contributed
//! by the demonstration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::analysis::binomial_sign_test;
use crate::corpus::Task;
use crate::tinylm::{prompt, AttentionKind, TinyModel};
use crate::valuation::{score_one_shot, score_zero_shot};
use crate::{Error, Result};

/// Query, key and value projections, each `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProjection {
    wq: DMatrix<f64>,
    wk: DMatrix<f64>,
    wv: DMatrix<f64>,
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    match m.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what: what.into(), index }),
        None => Ok(()),
    }
}

fn shape_error(what: &str, expected: (usize, usize), actual: (usize, usize)) -> Error {
    Error::Invalid(format!("{what} has shape {actual:?}, expected {expected:?}"))
}

impl AttentionProjection {
    pub fn new(wq: DMatrix<f64>, wk: DMatrix<f64>, wv: DMatrix<f64>) -> Result<Self> {
        let shape = wq.shape();
        for (m, name) in [(&wk, "W_k"), (&wv, "W_v")] {
            if m.shape() != shape {
                return Err(shape_error(name, shape, m.shape()));
            }
        }
        for (m, name) in [(&wq, "W_q"), (&wk, "W_k"), (&wv, "W_v")] {
            check_finite(m, name)?;
        }
        Ok(AttentionProjection { wq, wk, wv })
    }

    /// Projections of attention layer `layer` of `model`.
    pub fn from_model(model: &TinyModel, layer: usize) -> Result<Self> {
        let ll = model
            .layout()
            .layers
            .get(layer)
            .ok_or_else(|| Error::Invalid(format!("layer {layer} out of range")))?;
        let cfg = model.config();
        let p = model.params().as_slice();
        let m = |r: &std::ops::Range<usize>| DMatrix::from_row_slice(cfg.d_attn, cfg.d_model, &p[r.clone()]);
        Self::new(m(&ll.wq), m(&ll.wk), m(&ll.wv))
    }

    pub fn d_in(&self) -> usize {
        self.wq.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.wq.nrows()
    }
}

/// Demonstration columns and query-side columns, both `d_in` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSplit {
    pub train: DMatrix<f64>,
    pub test: DMatrix<f64>,
}

impl ContextSplit {
    pub fn new(train: DMatrix<f64>, test: DMatrix<f64>) -> Result<Self> {
        if train.nrows() != test.nrows() {
            return Err(Error::Invalid(format!(
                "train columns have dimension {} but test columns {}",
                train.nrows(),
                test.nrows()
            )));
        }
        Ok(ContextSplit { train, test })
    }

    /// Layer-0 input representations of the one-shot prompt for `(z, x)`.
    /// The demonstration segment `[SEP; z^q; z^a]` forms `X_train`; the rest
    /// of the context (`[SEP; x^q]`) forms `X_test`, whose last column is
    /// the position predicting the first answer token.
    pub fn from_model(model: &TinyModel, z: &Task, x: &Task) -> Result<Self> {
        let (ctx, _) = prompt::one_shot(z, x);
        let (inputs, _) = model.attention_io(&ctx, 0)?;
        let split = 1 + z.query.len() + z.answer.len();
        let d = model.config().d_model;
        let cols = |rows: &[Vec<f64>]| DMatrix::from_fn(d, rows.len(), |i, j| rows[j][i]);
        Self::new(cols(&inputs[..split]), cols(&inputs[split..]))
    }

    pub fn n_train(&self) -> usize {
        self.train.ncols()
    }

    pub fn n_test(&self) -> usize {
        self.test.ncols()
    }
}

/// The two addends of a linear-attention output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `W_v X_test (W_k X_test)^T q`.
    pub zero_shot: DVector<f64>,
    /// `W_v X_train (W_k X_train)^T q`.
    pub in_context: DVector<f64>,
}

impl Decomposition {
    pub fn sum(&self) -> DVector<f64> {
        &self.zero_shot + &self.in_context
    }
}

fn query(proj: &AttentionProjection, split: &ContextSplit, query_index: usize) -> Result<DVector<f64>> {
    if split.test.nrows() != proj.d_in() {
        return Err(shape_error("X_test", (proj.d_in(), split.n_test()), split.test.shape()));
    }
    if query_index >= split.n_test() {
        return Err(Error::Invalid(format!(
            "query index {query_index} out of range for {} test columns",
            split.n_test()
        )));
    }
    Ok(&proj.wq * split.test.column(query_index))
}

/// `W_v X (W_k X)^T q` over the concatenated columns `X = [X_train, X_test]`.
pub fn linear_attention(proj: &AttentionProjection, split: &ContextSplit, query_index: usize) -> Result<DVector<f64>> {
    let q = query(proj, split, query_index)?;
    let x = DMatrix::from_columns(
        &split
            .train
            .column_iter()
            .chain(split.test.column_iter())
            .map(|c| c.into_owned())
            .collect::<Vec<_>>(),
    );
    let x = if x.ncols() == 0 { DMatrix::zeros(proj.d_in(), 0) } else { x };
    Ok(&proj.wv * &x * (&proj.wk * &x).transpose() * q)
}

pub fn decompose(proj: &AttentionProjection, split: &ContextSplit, query_index: usize) -> Result<Decomposition> {
    let q = query(proj, split, query_index)?;
    let term = |x: &DMatrix<f64>| &proj.wv * x * (&proj.wk * x).transpose() * &q;
    Ok(Decomposition {
        zero_shot: term(&split.test),
        in_context: term(&split.train),
    })
}

/// Both sides of the one-shot vs one-step comparison for one `(z, x)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneShotOneStep {
    /// `s_os(x; z, theta)`.
    pub one_shot: f64,
    /// `s_zs(x; theta)`.
    pub zero_shot_before: f64,
    /// `s_zs(x; theta - eta grad L(z))`.
    pub zero_shot_after: f64,
    /// `|one_shot - zero_shot_after|`.
    pub gap: f64,
}

impl OneShotOneStep {
    pub fn in_context_gain(&self) -> f64 {
        self.one_shot - self.zero_shot_before
    }

    pub fn one_step_gain(&self) -> f64 {
        self.zero_shot_after - self.zero_shot_before
    }

    /// Both gains are nonzero and share a sign.
    pub fn signs_agree(&self) -> bool {
        self.in_context_gain() * self.one_step_gain() > 0.0
    }
}

pub fn one_shot_vs_one_step(model: &TinyModel, z: &Task, x: &Task, eta: f64) -> Result<OneShotOneStep> {
    let stepped = model.sgd_step(&model.gradient(z)?, eta)?;
    let one_shot = score_one_shot(model, z, x)?;
    let zero_shot_after = score_zero_shot(&stepped, x)?;
    Ok(OneShotOneStep {
        one_shot,
        zero_shot_before: score_zero_shot(model, x)?,
        zero_shot_after,
        gap: (one_shot - zero_shot_after).abs(),
    })
}

/// Sign agreement between in-context and one-step gains over many pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SignAgreement {
    pub attention: AttentionKind,
    pub eta: f64,
    pub pairs: Vec<OneShotOneStep>,
    pub agreements: usize,
    pub fraction: f64,
    /// One-sided sign-test p-value against chance agreement.
    pub p_value: f64,
    pub mean_gap: f64,
}

pub fn sign_agreement(model: &TinyModel, pairs: &[(&Task, &Task)], eta: f64) -> Result<SignAgreement> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no (z, x) pairs to compare".into()));
    }
    let results = pairs
        .par_iter()
        .map(|(z, x)| one_shot_vs_one_step(model, z, x, eta))
        .collect::<Result<Vec<_>>>()?;
    let agreements = results.iter().filter(|r| r.signs_agree()).count();
    let n = results.len();
    Ok(SignAgreement {
        attention: model.config().attention,
        eta,
        agreements,
        fraction: agreements as f64 / n as f64,
        p_value: binomial_sign_test(agreements, n),
        mean_gap: results.iter().map(|r| r.gap).sum::<f64>() / n as f64,
        pairs: results,
    })
}
