//! Convex diagnostic: a linear output head trained on frozen features.
//!
//! Features are the tiny model's final hidden states at each answer-predicting
//! position; only the head `W phi + b` is trainable. With cross-entropy and a
//! ridge term the training problem is strictly convex, so the empirical risk
//! minimizer is unique and can be refit with an example up-weighted. That is
//! the brute-force influence oracle. The squared-error loss turns the head
//! into an exactly quadratic objective.

use nalgebra::{Cholesky, DVector};

use crate::corpus::Task;
use crate::tinylm::{dot, hessian_weighted, Objective, TinyModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadLoss {
    /// Multinomial logistic loss.
    CrossEntropy,
    /// `1/2 |W phi + b - onehot(y)|^2`.
    Squared,
}

/// Frozen features with their target classes, one row per answer token.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadExample {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHead {
    classes: usize,
    dim: usize,
    bias: bool,
    loss: HeadLoss,
    params: Vec<f64>,
}

impl ConvexHead {
    /// Zero-initialized head. Parameters are `W` (`classes x dim`, row-major)
    /// followed by the bias when enabled.
    pub fn new(classes: usize, dim: usize, bias: bool, loss: HeadLoss) -> Self {
        let n = classes * dim + if bias { classes } else { 0 };
        ConvexHead {
            classes,
            dim,
            bias,
            loss,
            params: vec![0.0; n],
        }
    }

    /// Head over the model's vocabulary and hidden width.
    pub fn for_model(model: &TinyModel, loss: HeadLoss) -> Self {
        Self::new(model.config().vocab_size, model.config().d_model, true, loss)
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        Ok(ConvexHead { params, ..self.clone() })
    }

    pub fn loss_kind(&self) -> HeadLoss {
        self.loss
    }

    /// Frozen features for `tasks` under `model`.
    pub fn featurize(model: &TinyModel, tasks: &[Task]) -> Result<Vec<HeadExample>> {
        tasks
            .iter()
            .map(|t| {
                Ok(HeadExample {
                    id: t.id.clone(),
                    features: model.answer_features(t)?,
                    targets: t.answer.clone(),
                })
            })
            .collect()
    }

    fn scores(&self, params: &[f64], phi: &[f64]) -> Vec<f64> {
        let (c, d) = (self.classes, self.dim);
        (0..c)
            .map(|k| {
                let s = dot(&params[k * d..(k + 1) * d], phi);
                if self.bias {
                    s + params[c * d + k]
                } else {
                    s
                }
            })
            .collect()
    }

    fn check(&self, params: &[f64], ex: &HeadExample) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        if ex.features.len() != ex.targets.len() || ex.targets.is_empty() {
            return Err(Error::Invalid(format!("example {} has mismatched features/targets", ex.id)));
        }
        if ex.features.iter().any(|f| f.len() != self.dim) || ex.targets.iter().any(|&y| y >= self.classes) {
            return Err(Error::Invalid(format!("example {} does not fit the head", ex.id)));
        }
        Ok(())
    }

    /// Per-position derivative of the loss with respect to the scores.
    fn score_residual(&self, s: &[f64], y: usize) -> Vec<f64> {
        match self.loss {
            HeadLoss::CrossEntropy => {
                let m = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                s.iter()
                    .enumerate()
                    .map(|(k, v)| (v - m).exp() / z - if k == y { 1.0 } else { 0.0 })
                    .collect()
            }
            HeadLoss::Squared => s
                .iter()
                .enumerate()
                .map(|(k, v)| v - if k == y { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

impl Objective for ConvexHead {
    type Example = HeadExample;

    fn current_params(&self) -> &[f64] {
        &self.params
    }

    fn loss_at(&self, params: &[f64], ex: &HeadExample) -> Result<f64> {
        self.check(params, ex)?;
        let mut total = 0.0;
        for (phi, &y) in ex.features.iter().zip(&ex.targets) {
            let s = self.scores(params, phi);
            total += match self.loss {
                HeadLoss::CrossEntropy => {
                    let m = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                    m + z.ln() - s[y]
                }
                HeadLoss::Squared => {
                    0.5 * s
                        .iter()
                        .enumerate()
                        .map(|(k, v)| {
                            let r = v - if k == y { 1.0 } else { 0.0 };
                            r * r
                        })
                        .sum::<f64>()
                }
            };
        }
        Ok(total / ex.targets.len() as f64)
    }

    fn gradient_at(&self, params: &[f64], ex: &HeadExample) -> Result<Vec<f64>> {
        self.check(params, ex)?;
        let (c, d) = (self.classes, self.dim);
        let inv = 1.0 / ex.targets.len() as f64;
        let mut g = vec![0.0; params.len()];
        for (phi, &y) in ex.features.iter().zip(&ex.targets) {
            let r = self.score_residual(&self.scores(params, phi), y);
            for k in 0..c {
                let rk = r[k] * inv;
                for j in 0..d {
                    g[k * d + j] += rk * phi[j];
                }
                if self.bias {
                    g[c * d + k] += rk;
                }
            }
        }
        Ok(g)
    }
}

/// Settings for refitting the head to its empirical risk minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrainHyper {
    /// Ridge coefficient `mu` in `(1/N) sum L + eps L(z) + mu/2 |theta|^2`.
    pub ridge: f64,
    /// Stop once the objective gradient norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RetrainHyper {
    fn default() -> Self {
        RetrainHyper {
            ridge: 1e-4,
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

fn weighted_terms<'a>(base: &'a [HeadExample], upweight: Option<(&'a HeadExample, f64)>) -> Vec<(&'a HeadExample, f64)> {
    let w = 1.0 / base.len() as f64;
    let mut terms: Vec<(&HeadExample, f64)> = base.iter().map(|e| (e, w)).collect();
    if let Some((z, eps)) = upweight {
        if eps != 0.0 {
            terms.push((z, eps));
        }
    }
    terms
}

fn risk(head: &ConvexHead, params: &[f64], terms: &[(&HeadExample, f64)], ridge: f64) -> Result<f64> {
    let mut total = 0.5 * ridge * dot(params, params);
    for (ex, w) in terms {
        total += w * head.loss_at(params, ex)?;
    }
    Ok(total)
}

fn risk_gradient(head: &ConvexHead, params: &[f64], terms: &[(&HeadExample, f64)], ridge: f64) -> Result<Vec<f64>> {
    let mut g: Vec<f64> = params.iter().map(|p| ridge * p).collect();
    for (ex, w) in terms {
        for (gi, v) in g.iter_mut().zip(head.gradient_at(params, ex)?) {
            *gi += w * v;
        }
    }
    Ok(g)
}

/// Damped Newton iterations on the ridge-regularized empirical risk, starting
/// from the head's current parameters.
pub fn fit_head(
    head: &ConvexHead,
    base: &[HeadExample],
    upweight: Option<(&HeadExample, f64)>,
    hyper: &RetrainHyper,
) -> Result<ConvexHead> {
    if base.is_empty() {
        return Err(Error::Invalid("retraining corpus is empty".into()));
    }
    let terms = weighted_terms(base, upweight);
    let mut theta = head.params.clone();
    let mut grad = risk_gradient(head, &theta, &terms, hyper.ridge)?;
    let mut norm = dot(&grad, &grad).sqrt();
    for _ in 0..hyper.max_iterations {
        if norm < hyper.tolerance {
            return head.with_params(theta);
        }
        let raw = hessian_weighted(head, &theta, &terms)?;
        let mut h = (&raw + raw.transpose()) * 0.5;
        for i in 0..h.nrows() {
            h[(i, i)] += hyper.ridge;
        }
        let factor = Cholesky::new(h).ok_or_else(|| Error::NonConvergence {
            iterations: 0,
            grad_norm: norm,
        })?;
        let direction = -factor.solve(&DVector::from_column_slice(&grad));
        let slope = dot(direction.as_slice(), &grad);
        let current = risk(head, &theta, &terms, hyper.ridge)?;
        // Newton decrement below the resolution of the risk itself: no step
        // can be measured to improve, so theta is optimal in f64.
        if -slope < 4.0 * f64::EPSILON * current.abs() {
            return head.with_params(theta);
        }
        let mut t = 1.0;
        let mut next = theta.clone();
        for _ in 0..60 {
            next = theta.iter().zip(direction.iter()).map(|(p, d)| p + t * d).collect();
            if risk(head, &next, &terms, hyper.ridge)? <= current + 1e-4 * t * slope {
                break;
            }
            t *= 0.5;
        }
        theta = next;
        grad = risk_gradient(head, &theta, &terms, hyper.ridge)?;
        norm = dot(&grad, &grad).sqrt();
    }
    if norm < hyper.tolerance {
        return head.with_params(theta);
    }
    Err(Error::NonConvergence {
        iterations: hyper.max_iterations,
        grad_norm: norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainingEstimate {
    pub epsilon: f64,
    /// `L(x, theta*) - L(x, theta*(eps))`.
    pub loss_change: f64,
    /// `loss_change / eps`, or the raw change when `eps = 0`.
    pub estimate: f64,
}

/// Brute-force influence of up-weighting `z` by `epsilon` on the loss of `x`:
/// fit the head to convergence with uniform weights and again with `z`
/// up-weighted, then difference the losses of `x`.
pub fn retraining_oracle(
    head: &ConvexHead,
    base: &[HeadExample],
    z: &HeadExample,
    x: &HeadExample,
    epsilon: f64,
    hyper: &RetrainHyper,
) -> Result<RetrainingEstimate> {
    let optimum = fit_head(head, base, None, hyper)?;
    let upweighted = fit_head(&optimum, base, Some((z, epsilon)), hyper)?;
    let loss_change = optimum.loss(x)? - upweighted.loss(x)?;
    Ok(RetrainingEstimate {
        epsilon,
        loss_change,
        estimate: if epsilon == 0.0 { loss_change } else { loss_change / epsilon },
    })
}
