//! Valuation scores for a candidate training task `z` against anchor tasks.
//!
//! In-context scores compare the answer log-likelihood of an anchor with and
//! without `z` prepended as a demonstration. Gradient scores use inner
//! products of conditional-loss gradients, optionally preconditioned by an
//! exact damped Hessian. The one-step fine-tune score takes an actual SGD
//! step on `z` and checks which anchors improved.

mod convex_head;
mod influence;
mod scoring;
mod table;

pub use convex_head::{fit_head, retraining_oracle, ConvexHead, HeadExample, HeadLoss, RetrainHyper, RetrainingEstimate};
pub use influence::{first_order_residual, infl_hessian, infl_ip, relative_damping, DampedHessian, InverseHessianProduct};
pub use scoring::{score_candidates, AnchorSet, Method, ScoreOptions};
pub use table::{ScoreRecord, ScoreTable};

use crate::corpus::Task;
use crate::tinylm::{prompt, TinyModel};
use crate::{Error, Result};

/// `s_zs`: mean answer log-probability given `[SEP; x^q]`.
pub fn score_zero_shot(model: &TinyModel, task: &Task) -> Result<f64> {
    let (ctx, answer) = prompt::zero_shot(task);
    model.mean_log_prob(model.params().as_slice(), &ctx, answer, None)
}

/// `s_os`: mean answer log-probability with `demo` prepended.
pub fn score_one_shot(model: &TinyModel, demo: &Task, task: &Task) -> Result<f64> {
    let (ctx, answer) = prompt::one_shot(demo, task);
    model.mean_log_prob(model.params().as_slice(), &ctx, answer, Some((&demo.id, &task.id)))
}

fn require_anchors(anchors: &[Task]) -> Result<()> {
    if anchors.is_empty() {
        return Err(Error::Invalid("anchor set is empty".into()));
    }
    Ok(())
}

/// Per-anchor `s_os - s_zs` for demonstration `z`, in anchor order.
pub fn one_shot_gains(model: &TinyModel, z: &Task, anchors: &[Task]) -> Result<Vec<f64>> {
    anchors
        .iter()
        .map(|x| Ok(score_one_shot(model, z, x)? - score_zero_shot(model, x)?))
        .collect()
}

/// Fraction of anchors whose answer likelihood strictly improves with `z` in
/// context. Ties count as no improvement.
pub fn icp_score(model: &TinyModel, z: &Task, anchors: &[Task]) -> Result<f64> {
    require_anchors(anchors)?;
    let wins = anchors.iter().try_fold(0usize, |acc, x| {
        Ok::<_, Error>(acc + usize::from(score_one_shot(model, z, x)? > score_zero_shot(model, x)?))
    })?;
    Ok(wins as f64 / anchors.len() as f64)
}

/// Mean of `s_os - s_zs` over anchors.
pub fn icp_soft_score(model: &TinyModel, z: &Task, anchors: &[Task]) -> Result<f64> {
    require_anchors(anchors)?;
    let gains = one_shot_gains(model, z, anchors)?;
    Ok(gains.iter().sum::<f64>() / anchors.len() as f64)
}

/// Mean over anchors of `grad L(x_i) . grad L(z)`.
pub fn infl_ip_score(model: &TinyModel, z: &Task, anchors: &[Task]) -> Result<f64> {
    require_anchors(anchors)?;
    let gz = model.gradient(z)?;
    let mut sum = 0.0;
    for x in anchors {
        sum += model.gradient(x)?.dot(&gz);
    }
    Ok(sum / anchors.len() as f64)
}

/// Fraction of anchors whose zero-shot score strictly improves after one SGD
/// step of size `eta` on `z`.
pub fn ft_score(model: &TinyModel, z: &Task, anchors: &[Task], eta: f64) -> Result<f64> {
    require_anchors(anchors)?;
    let stepped = model.sgd_step(&model.gradient(z)?, eta)?;
    let mut wins = 0usize;
    for x in anchors {
        wins += usize::from(score_zero_shot(&stepped, x)? > score_zero_shot(model, x)?);
    }
    Ok(wins as f64 / anchors.len() as f64)
}

#[cfg(test)]
mod tests;
