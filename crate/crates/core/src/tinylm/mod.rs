//! The miniature decoder-only model.
//!
//! Token and learned position embeddings feed 1-2 single-head attention
//! layers with residual connections and a linear output head. Attention is
//! either softmax (scaled by `1/sqrt(d_attn)`) or unnormalized linear
//! attention. All parameters live in one flat [`ParameterVector`] whose block
//! order is documented on [`ParamLayout`].

mod checkpoint;
mod forward;
mod gradcheck;
mod hessian;
mod layout;
mod objective;
pub mod prompt;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{checkpoint_id, load_checkpoint, save_checkpoint};
pub use forward::Real;
pub use gradcheck::{check_gradient, finite_difference_gradient, GradientCheck};
pub use hessian::{hessian, hessian_unsymmetrized, hessian_weighted, smallest_eigenvalue, FD_STEP};
pub use layout::{LayerLayout, ParamLayout};
pub use objective::Objective;
pub use train::{mean_loss, train, write_trajectory, TrainHyper, TrainOutcome, TrajectoryPoint};

use crate::corpus::Task;
use crate::{Error, Result};
use forward::Scored;

/// Largest parameter count for which exact P x P Hessians are allowed.
pub const HESSIAN_PARAM_CAP: usize = 5000;
/// Half-width of the uniform initialization.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Softmax,
    Linear,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Softmax => "softmax",
            AttentionKind::Linear => "linear",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(AttentionKind::Softmax),
            "linear" => Ok(AttentionKind::Linear),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Embedding / residual width (`d_in`).
    pub d_model: usize,
    /// Attention projection width (`d_out`).
    pub d_attn: usize,
    pub n_layers: usize,
    pub attention: AttentionKind,
    /// Longest prompt (in tokens) the position embedding covers.
    pub context_cap: usize,
    pub tied_output: bool,
    /// Diagnostic: tokens from the last separator on cannot attend to
    /// anything before it, and their positions restart at zero.
    pub isolate_demonstration: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 8,
            d_attn: 8,
            n_layers: 2,
            attention: AttentionKind::Softmax,
            context_cap: 24,
            tied_output: false,
            isolate_demonstration: false,
        }
    }

    pub fn num_params(&self) -> usize {
        ParamLayout::new(self).total
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary size must be at least 2".into()));
        }
        if !(1..=2).contains(&self.n_layers) {
            return Err(Error::Config(format!("n_layers must be 1 or 2, got {}", self.n_layers)));
        }
        if self.d_model == 0 || self.d_attn == 0 || self.context_cap < 2 {
            return Err(Error::Config("dimensions and context cap must be positive".into()));
        }
        Ok(())
    }
}

/// Flat parameter (or gradient) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        ParameterVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Left-to-right inner product.
    pub fn dot(&self, other: &ParameterVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ParameterVector) -> ParameterVector {
        ParameterVector(self.0.iter().zip(&other.0).map(|(a, b)| a + alpha * b).collect())
    }

    pub fn scale(&self, alpha: f64) -> ParameterVector {
        ParameterVector(self.0.iter().map(|a| alpha * a).collect())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

/// Left-to-right inner product of two slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Gradient of a task's conditional loss at a given training step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: ParameterVector,
    pub source: String,
    pub step: u64,
}

impl GradientVector {
    pub fn dot(&self, other: &GradientVector) -> f64 {
        self.values.dot(&other.values)
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyModel {
    config: ModelConfig,
    layout: ParamLayout,
    params: ParameterVector,
    step: u64,
}

/// Builds a model with parameters drawn uniformly from
/// `[-INIT_SCALE, INIT_SCALE]` by a ChaCha8 stream seeded with `seed`.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<TinyModel> {
    init_model_with_scale(config, seed, INIT_SCALE)
}

/// [`init_model`] with parameters drawn from `[-scale, scale]`.
pub fn init_model_with_scale(config: ModelConfig, seed: u64, scale: f64) -> Result<TinyModel> {
    config.validate()?;
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::Config(format!("init scale must be finite and non-negative, got {scale}")));
    }
    let p = config.num_params();
    if p > HESSIAN_PARAM_CAP {
        return Err(Error::Config(format!(
            "model has {p} parameters, above the Hessian feasibility cap of {HESSIAN_PARAM_CAP}; reduce d_model, d_attn, layers or context_cap"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..p).map(|_| rng.gen_range(-scale..=scale)).collect();
    TinyModel::from_parts(config, ParameterVector(values), 0)
}

impl TinyModel {
    pub fn from_parts(config: ModelConfig, params: ParameterVector, step: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::LengthMismatch {
                expected: layout.total,
                actual: params.len(),
            });
        }
        if let Some(index) = params.first_non_finite() {
            return Err(Error::NonFinite {
                what: "model parameters".into(),
                index,
            });
        }
        Ok(TinyModel {
            config,
            layout,
            params,
            step,
        })
    }

    /// All-zero parameters: every next-token distribution is uniform.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let p = config.num_params();
        Self::from_parts(config, ParameterVector::zeros(p), 0)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same parameters evaluated under a different diagnostic switch.
    pub fn with_isolation(&self, isolate: bool) -> TinyModel {
        let mut m = self.clone();
        m.config.isolate_demonstration = isolate;
        m
    }

    pub(crate) fn with_params(&self, params: ParameterVector, step: u64) -> Result<TinyModel> {
        Self::from_parts(self.config.clone(), params, step)
    }

    fn check_tokens(&self, tokens: &[usize], pair: Option<(&str, &str)>) -> Result<()> {
        if tokens.len() > self.config.context_cap {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                cap: self.config.context_cap,
                pair: pair.map(|(z, x)| (z.to_string(), x.to_string())),
            });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// `log p(target_j | context, target_<j)` for every target token.
    pub fn log_prob_sequence(&self, context: &[usize], target: &[usize]) -> Result<Vec<f64>> {
        self.log_probs_in(self.params.as_slice(), context, target, None)
    }

    pub(crate) fn log_probs_in<T: Real>(
        &self,
        params: &[T],
        context: &[usize],
        target: &[usize],
        pair: Option<(&str, &str)>,
    ) -> Result<Vec<T>> {
        if target.is_empty() {
            return Ok(Vec::new());
        }
        if context.is_empty() {
            return Err(Error::Invalid("target needs a non-empty context".into()));
        }
        let mut tokens = context.to_vec();
        tokens.extend_from_slice(target);
        self.check_tokens(&tokens, pair)?;
        tokens.pop();
        let trace = forward::trace(&self.config, &self.layout, params, &tokens);
        Ok(target
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let lp = forward::log_softmax_at(&self.config, &self.layout, params, &trace, context.len() - 1 + j);
                lp[y]
            })
            .collect())
    }

    /// Full next-token log-distribution after every prefix of `tokens`.
    pub fn next_token_log_probs(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_tokens(tokens, None)?;
        let p = self.params.as_slice();
        let trace = forward::trace(&self.config, &self.layout, p, tokens);
        Ok((0..tokens.len())
            .map(|t| forward::log_softmax_at(&self.config, &self.layout, p, &trace, t))
            .collect())
    }

    /// Per-position input representations of attention layer `layer` and the
    /// attention outputs (before the output projection) it produces.
    pub fn attention_io(&self, tokens: &[usize], layer: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if layer >= self.config.n_layers {
            return Err(Error::Invalid(format!("layer {layer} out of range for a {}-layer model", self.config.n_layers)));
        }
        self.check_tokens(tokens, None)?;
        let trace = forward::trace(&self.config, &self.layout, self.params.as_slice(), tokens);
        let lt = &trace.layers[layer];
        let (d, da) = (self.config.d_model, self.config.d_attn);
        Ok((
            lt.input.chunks(d).map(<[f64]>::to_vec).collect(),
            lt.out.chunks(da).map(<[f64]>::to_vec).collect(),
        ))
    }

    /// Mean per-token answer log-probability given `context`.
    pub(crate) fn mean_log_prob<T: Real>(&self, params: &[T], context: &[usize], answer: &[usize], pair: Option<(&str, &str)>) -> Result<T> {
        let lps = self.log_probs_in(params, context, answer, pair)?;
        let sum = lps.iter().fold(T::zero(), |acc, &x| acc + x);
        Ok(sum / T::from_usize(answer.len()).unwrap())
    }

    /// `L(x, theta) = -(1/L) sum_j log p(a_j | [SEP; q], a_<j)`, in nats per
    /// answer token.
    pub fn conditional_loss(&self, task: &Task) -> Result<f64> {
        conditional_loss_with(self, self.params.as_slice(), task)
    }

    /// Exact gradient of [`TinyModel::conditional_loss`].
    pub fn gradient(&self, task: &Task) -> Result<GradientVector> {
        let (_, g) = self.loss_and_gradient_at(self.params.as_slice(), task)?;
        let values = ParameterVector(g);
        if let Some(index) = values.first_non_finite() {
            return Err(Error::NonFinite {
                what: format!("gradient of task {}", task.id),
                index,
            });
        }
        Ok(GradientVector {
            values,
            source: task.id.clone(),
            step: self.step,
        })
    }

    pub(crate) fn loss_and_gradient_at(&self, params: &[f64], task: &Task) -> Result<(f64, Vec<f64>)> {
        let (context, answer) = prompt::zero_shot(task);
        let mut tokens = context.clone();
        tokens.extend_from_slice(answer);
        self.check_tokens(&tokens, None)?;
        tokens.pop();
        let trace = forward::trace(&self.config, &self.layout, params, &tokens);
        let l = answer.len();
        let weight = -1.0 / l as f64;
        let scored: Vec<Scored> = answer
            .iter()
            .enumerate()
            .map(|(j, &target)| Scored {
                position: context.len() - 1 + j,
                target,
                weight,
            })
            .collect();
        let mut sum = 0.0;
        for s in &scored {
            sum += forward::log_softmax_at(&self.config, &self.layout, params, &trace, s.position)[s.target];
        }
        let loss = -(sum / l as f64);
        let grad = forward::backward(&self.config, &self.layout, params, &trace, &scored);
        Ok((loss, grad))
    }

    /// Final-layer hidden states at the positions that predict each answer
    /// token of the zero-shot prompt.
    pub fn answer_features(&self, task: &Task) -> Result<Vec<Vec<f64>>> {
        let (context, answer) = prompt::zero_shot(task);
        let mut tokens = context.clone();
        tokens.extend_from_slice(answer);
        self.check_tokens(&tokens, None)?;
        tokens.pop();
        let d = self.config.d_model;
        let trace = forward::trace(&self.config, &self.layout, self.params.as_slice(), &tokens);
        Ok((0..answer.len())
            .map(|j| {
                let t = context.len() - 1 + j;
                trace.hidden[t * d..(t + 1) * d].to_vec()
            })
            .collect())
    }

    /// `theta - eta * grad` with the step counter advanced. `eta = 0` is a
    /// valid identity update.
    pub fn sgd_step(&self, grad: &GradientVector, eta: f64) -> Result<TinyModel> {
        if grad.values.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                actual: grad.values.len(),
            });
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be finite and >= 0, got {eta}")));
        }
        self.with_params(self.params.axpy(-eta, &grad.values), self.step + 1)
    }
}

/// Conditional loss evaluated at arbitrary parameters in any scalar type.
/// Used by the extended-precision finite-difference oracle.
pub fn conditional_loss_with<T: Real>(model: &TinyModel, params: &[T], task: &Task) -> Result<T> {
    if params.len() != model.num_params() {
        return Err(Error::LengthMismatch {
            expected: model.num_params(),
            actual: params.len(),
        });
    }
    let (context, answer) = prompt::zero_shot(task);
    Ok(-model.mean_log_prob(params, &context, answer, None)?)
}

impl Objective for TinyModel {
    type Example = Task;

    fn current_params(&self) -> &[f64] {
        self.params.as_slice()
    }

    fn loss_at(&self, params: &[f64], task: &Task) -> Result<f64> {
        conditional_loss_with(self, params, task)
    }

    fn gradient_at(&self, params: &[f64], task: &Task) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient_at(params, task)?.1)
    }
}
