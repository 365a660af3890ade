//! Layers built on the tape: linear maps, layer norm, and a pre-norm
//! self-attention stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        let std = (1.0 / fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::randn(fan_in, fan_out, std, rng), group);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out), group);
        Self { weight, bias }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, dim: usize, group: ParamGroup) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::filled(1, dim, F::one()), group);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, dim), group);
        Self { gain, bias }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: NodeId) -> NodeId {
        let n = g.layer_norm(x, F::of(Self::EPS));
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let h = g.mul_row(n, gain);
        g.add_row(h, bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
}

#[derive(Debug, Clone)]
struct SelfAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    heads: usize,
}

impl SelfAttention {
    fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, x: NodeId) -> NodeId {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let dim = g.value(x).cols();
        let head_dim = dim / self.heads;
        let scale = F::of(1.0 / (head_dim as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * head_dim, (h + 1) * head_dim);
            let qh = g.slice_cols(q, s, e);
            let kh = g.slice_cols(k, s, e);
            let vh = g.slice_cols(v, s, e);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores);
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.out.forward(g, merged)
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm_attn: LayerNorm,
    attn: SelfAttention,
    norm_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

/// Pre-norm transformer encoder stack with a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub config: TransformerConfig,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
}

impl TransformerStack {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        config: TransformerConfig,
        group: ParamGroup,
        rng: &mut R,
    ) -> Self {
        assert!(
            config.heads > 0 && config.dim.is_multiple_of(config.heads),
            "dim {} not divisible by {} heads",
            config.dim,
            config.heads
        );
        let d = config.dim;
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                Block {
                    norm_attn: LayerNorm::new(store, &format!("{p}.norm_attn"), d, group),
                    attn: SelfAttention {
                        query: Linear::new(store, &format!("{p}.attn.query"), d, d, group, rng),
                        key: Linear::new(store, &format!("{p}.attn.key"), d, d, group, rng),
                        value: Linear::new(store, &format!("{p}.attn.value"), d, d, group, rng),
                        out: Linear::new(store, &format!("{p}.attn.out"), d, d, group, rng),
                        heads: config.heads,
                    },
                    norm_ffn: LayerNorm::new(store, &format!("{p}.norm_ffn"), d, group),
                    ffn_in: Linear::new(store, &format!("{p}.ffn_in"), d, config.ffn_dim, group, rng),
                    ffn_out: Linear::new(store, &format!("{p}.ffn_out"), config.ffn_dim, d, group, rng),
                }
            })
            .collect();
        let final_norm = LayerNorm::new(store, &format!("{name}.final_norm"), d, group);
        Self {
            config,
            blocks,
            final_norm,
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<'_, F>, mut x: NodeId) -> NodeId {
        for b in &self.blocks {
            let h = b.norm_attn.forward(g, x);
            let h = b.attn.forward(g, h);
            x = g.add(x, h);
            let h = b.norm_ffn.forward(g, x);
            let h = b.ffn_in.forward(g, h);
            let h = g.gelu(h);
            let h = b.ffn_out.forward(g, h);
            x = g.add(x, h);
        }
        self.final_norm.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stack_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let cfg = TransformerConfig {
            dim: 8,
            heads: 2,
            ffn_dim: 16,
            layers: 2,
        };
        let stack = TransformerStack::new(&mut store, "t", cfg, ParamGroup::Head, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::randn(5, 8, 1.0, &mut rng));
        let y = stack.forward(&mut g, x);
        assert_eq!(g.value(y).shape(), (5, 8));
        assert!(g.value(y).is_finite());
    }
}
