use std::ops::Range;

use super::ModelConfig;

/// Offsets of every parameter block inside the flat parameter vector.
///
/// Blocks are laid out in this order, matrices row-major:
///
/// | block          | shape            |
/// |----------------|------------------|
/// | token embedding| `V x d`          |
/// | position emb.  | `C x d`          |
/// | per layer `Wq` | `d_attn x d`     |
/// | per layer `Wk` | `d_attn x d`     |
/// | per layer `Wv` | `d_attn x d`     |
/// | per layer `Wo` | `d x d_attn`     |
/// | output head    | `V x d` (absent when tied to the token embedding) |
/// | output bias    | `V`              |
///
/// so `P = V*d + C*d + layers*4*d_attn*d + (tied ? 0 : V*d) + V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub token_embedding: Range<usize>,
    pub position_embedding: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub head: Range<usize>,
    pub bias: Range<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, da, c) = (cfg.vocab_size, cfg.d_model, cfg.d_attn, cfg.context_cap);
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let token_embedding = take(v * d);
        let position_embedding = take(c * d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerLayout {
                wq: take(da * d),
                wk: take(da * d),
                wv: take(da * d),
                wo: take(d * da),
            })
            .collect();
        let head = if cfg.tied_output {
            token_embedding.clone()
        } else {
            take(v * d)
        };
        let bias = take(v);
        ParamLayout {
            token_embedding,
            position_embedding,
            layers,
            head,
            bias,
            total: cursor,
        }
    }
}
