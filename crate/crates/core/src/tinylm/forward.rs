//! Forward pass (generic over the scalar type) and reverse-mode gradient.
//!
//! The forward pass runs in any [`Real`] so that the finite-difference
//! oracle can evaluate the loss in extended precision; the backward pass is
//! f64 only. All reductions run in a fixed left-to-right order.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

use super::layout::ParamLayout;
use super::{AttentionKind, ModelConfig};
use crate::corpus::SEP_ID;

pub trait Real: Float + FromPrimitive + Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Send + Sync + 'static {}

pub(crate) struct LayerTrace<T> {
    pub input: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// Per position: softmax probabilities (or raw scores for linear
    /// attention) over the visible window.
    pub weights: Vec<Vec<T>>,
    pub out: Vec<T>,
}

pub(crate) struct Trace<T> {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub windows: Vec<usize>,
    pub layers: Vec<LayerTrace<T>>,
    pub hidden: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out = W x` with `W` row-major `rows x cols`.
fn matvec<T: Real>(w: &[T], cols: usize, x: &[T], out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// Position index and first visible position for every token.
///
/// With demonstration isolation on, tokens from the last separator onward
/// cannot see anything before it and their positions restart at zero, so the
/// scored segment is evaluated exactly as if it were the whole prompt.
pub(crate) fn positions_and_windows(cfg: &ModelConfig, tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let seg = if cfg.isolate_demonstration {
        tokens.iter().rposition(|&t| t == SEP_ID).unwrap_or(0)
    } else {
        0
    };
    tokens
        .iter()
        .enumerate()
        .map(|(t, _)| if t < seg { (t, 0) } else { (t - seg, seg) })
        .unzip()
}

pub(crate) fn trace<T: Real>(cfg: &ModelConfig, layout: &ParamLayout, params: &[T], tokens: &[usize]) -> Trace<T> {
    let (d, da) = (cfg.d_model, cfg.d_attn);
    let n = tokens.len();
    let (positions, windows) = positions_and_windows(cfg, tokens);

    let emb = &params[layout.token_embedding.clone()];
    let pos = &params[layout.position_embedding.clone()];
    let mut x = vec![T::zero(); n * d];
    for t in 0..n {
        let (tok, p) = (tokens[t], positions[t]);
        for c in 0..d {
            x[t * d + c] = emb[tok * d + c] + pos[p * d + c];
        }
    }

    let scale = match cfg.attention {
        AttentionKind::Softmax => T::one() / T::from_usize(da).unwrap().sqrt(),
        AttentionKind::Linear => T::one(),
    };

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for ll in &layout.layers {
        let (wq, wk, wv, wo) = (
            &params[ll.wq.clone()],
            &params[ll.wk.clone()],
            &params[ll.wv.clone()],
            &params[ll.wo.clone()],
        );
        let mut q = vec![T::zero(); n * da];
        let mut k = vec![T::zero(); n * da];
        let mut v = vec![T::zero(); n * da];
        for t in 0..n {
            let xt = &x[t * d..(t + 1) * d];
            matvec(wq, d, xt, &mut q[t * da..(t + 1) * da]);
            matvec(wk, d, xt, &mut k[t * da..(t + 1) * da]);
            matvec(wv, d, xt, &mut v[t * da..(t + 1) * da]);
        }

        let mut weights = Vec::with_capacity(n);
        let mut out = vec![T::zero(); n * da];
        for t in 0..n {
            let qt = &q[t * da..(t + 1) * da];
            let mut w: Vec<T> = (windows[t]..=t)
                .map(|j| dot(qt, &k[j * da..(j + 1) * da]) * scale)
                .collect();
            if cfg.attention == AttentionKind::Softmax {
                let m = w.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
                let mut z = T::zero();
                for s in w.iter_mut() {
                    *s = (*s - m).exp();
                    z = z + *s;
                }
                for s in w.iter_mut() {
                    *s = *s / z;
                }
            }
            let ot = &mut out[t * da..(t + 1) * da];
            for (jj, &a) in w.iter().enumerate() {
                let j = windows[t] + jj;
                for i in 0..da {
                    ot[i] = ot[i] + a * v[j * da + i];
                }
            }
            weights.push(w);
        }

        let mut next = x.clone();
        let mut proj = vec![T::zero(); d];
        for t in 0..n {
            matvec(wo, da, &out[t * da..(t + 1) * da], &mut proj);
            for c in 0..d {
                next[t * d + c] = next[t * d + c] + proj[c];
            }
        }
        layers.push(LayerTrace {
            input: x,
            q,
            k,
            v,
            weights,
            out,
        });
        x = next;
    }

    Trace {
        tokens: tokens.to_vec(),
        positions,
        windows,
        layers,
        hidden: x,
    }
}

/// Log-softmax of the output logits at position `t`.
pub(crate) fn log_softmax_at<T: Real>(cfg: &ModelConfig, layout: &ParamLayout, params: &[T], trace: &Trace<T>, t: usize) -> Vec<T> {
    let d = cfg.d_model;
    let head = &params[layout.head.clone()];
    let bias = &params[layout.bias.clone()];
    let h = &trace.hidden[t * d..(t + 1) * d];
    let logits: Vec<T> = (0..cfg.vocab_size)
        .map(|v| dot(&head[v * d..(v + 1) * d], h) + bias[v])
        .collect();
    let m = logits.iter().fold(T::neg_infinity(), |m, &l| m.max(l));
    let z = logits.iter().fold(T::zero(), |acc, &l| acc + (l - m).exp());
    let lse = m + z.ln();
    logits.into_iter().map(|l| l - lse).collect()
}

/// One scored prediction: the token at `position + 1` must be `target`; its
/// log-probability enters the objective with coefficient `weight`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scored {
    pub position: usize,
    pub target: usize,
    pub weight: f64,
}

/// Gradient of `sum_i weight_i * log p(target_i | tokens[..=position_i])`.
pub(crate) fn backward(cfg: &ModelConfig, layout: &ParamLayout, params: &[f64], trace: &Trace<f64>, scored: &[Scored]) -> Vec<f64> {
    let (d, da, vsz) = (cfg.d_model, cfg.d_attn, cfg.vocab_size);
    let n = trace.tokens.len();
    let mut grad = vec![0.0; params.len()];
    let mut dh = vec![0.0; n * d];

    let head = &params[layout.head.clone()];
    for s in scored {
        let t = s.position;
        let logp = log_softmax_at(cfg, layout, params, trace, t);
        let h = &trace.hidden[t * d..(t + 1) * d];
        for v in 0..vsz {
            let indicator = if v == s.target { 1.0 } else { 0.0 };
            let g = s.weight * (indicator - logp[v].exp());
            let row = layout.head.start + v * d;
            for c in 0..d {
                grad[row + c] += g * h[c];
                dh[t * d + c] += g * head[v * d + c];
            }
            grad[layout.bias.start + v] += g;
        }
    }

    let scale = match cfg.attention {
        AttentionKind::Softmax => 1.0 / (da as f64).sqrt(),
        AttentionKind::Linear => 1.0,
    };

    for (lt, ll) in trace.layers.iter().zip(&layout.layers).rev() {
        let (wq, wk, wv, wo) = (
            &params[ll.wq.clone()],
            &params[ll.wk.clone()],
            &params[ll.wv.clone()],
            &params[ll.wo.clone()],
        );
        let mut dx = dh.clone();
        let mut dout = vec![0.0; n * da];
        for t in 0..n {
            for c in 0..d {
                let g = dh[t * d + c];
                if g == 0.0 {
                    continue;
                }
                for i in 0..da {
                    grad[ll.wo.start + c * da + i] += g * lt.out[t * da + i];
                    dout[t * da + i] += g * wo[c * da + i];
                }
            }
        }

        let mut dq = vec![0.0; n * da];
        let mut dk = vec![0.0; n * da];
        let mut dv = vec![0.0; n * da];
        for t in 0..n {
            let dot_ = &dout[t * da..(t + 1) * da];
            let w = &lt.weights[t];
            let start = trace.windows[t];
            let dw: Vec<f64> = (0..w.len())
                .map(|jj| dot(dot_, &lt.v[(start + jj) * da..(start + jj + 1) * da]))
                .collect();
            let ds: Vec<f64> = match cfg.attention {
                AttentionKind::Softmax => {
                    let mean = w.iter().zip(&dw).fold(0.0, |acc, (a, g)| acc + a * g);
                    w.iter().zip(&dw).map(|(a, g)| a * (g - mean) * scale).collect()
                }
                AttentionKind::Linear => dw.clone(),
            };
            for jj in 0..w.len() {
                let j = start + jj;
                for i in 0..da {
                    dv[j * da + i] += w[jj] * dot_[i];
                    dq[t * da + i] += ds[jj] * lt.k[j * da + i];
                    dk[j * da + i] += ds[jj] * lt.q[t * da + i];
                }
            }
        }

        for t in 0..n {
            let xt = &lt.input[t * d..(t + 1) * d];
            for (w, range, dy) in [(wq, &ll.wq, &dq), (wk, &ll.wk, &dk), (wv, &ll.wv, &dv)] {
                for i in 0..da {
                    let g = dy[t * da + i];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        grad[range.start + i * d + c] += g * xt[c];
                        dx[t * d + c] += g * w[i * d + c];
                    }
                }
            }
        }
        dh = dx;
    }

    for t in 0..n {
        let (tok, p) = (trace.tokens[t], trace.positions[t]);
        for c in 0..d {
            grad[layout.token_embedding.start + tok * d + c] += dh[t * d + c];
            grad[layout.position_embedding.start + p * d + c] += dh[t * d + c];
        }
    }
    grad
}
