//! The target-conditioned opinion tagger.
//!
//! Encoder states are concatenated with a learned embedding of a 0/1
//! "inside the target" indicator, refined by a self-attention stack, and
//! classified per token into B/I/O.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::checkpoint::{self, Describe, Sidecar};
use crate::corpus::{decode_bio, Span, SpanSet, Tag, ToweInstance};
use crate::encoder::{EncoderConfig, EncoderHandle, Vocab};
use crate::error::{Error, Result};
use crate::nn::{Linear, TransformerConfig, TransformerStack};
use crate::params::{Gradients, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{softmax_rows, Tensor};

pub const NUM_TAGS: usize = 3;
pub const CHECKPOINT_KIND: &str = "towe";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToweConfig {
    pub encoder: EncoderConfig,
    pub pos_dim: usize,
    /// Refiner width; a projection is inserted when it differs from
    /// `encoder.hidden_dim + pos_dim`.
    pub refiner_dim: usize,
    pub refiner_layers: usize,
    pub refiner_heads: usize,
    pub refiner_ffn_dim: usize,
    pub init_seed: u64,
}

impl ToweConfig {
    /// Hidden 512 encoder and refiner, position width 64, 2 refiner layers
    /// with 4 heads.
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::pretrained(),
            pos_dim: 64,
            refiner_dim: 512,
            refiner_layers: 2,
            refiner_heads: 4,
            refiner_ffn_dim: 2048,
            init_seed: 0,
        }
    }

    pub fn small() -> Self {
        Self {
            encoder: EncoderConfig::small(),
            pos_dim: 8,
            refiner_dim: 64,
            refiner_layers: 2,
            refiner_heads: 4,
            refiner_ffn_dim: 128,
            init_seed: 0,
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.encoder.hidden_dim + self.pos_dim
    }
}

/// Per-token distributions over (B, I, O) with argmax labels and
/// confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSequence<F> {
    pub distributions: Tensor<F>,
    pub argmax_labels: Vec<Tag>,
    pub confidences: Vec<F>,
}

impl<F: Scalar> PredictionSequence<F> {
    pub fn from_distributions(distributions: Tensor<F>) -> Self {
        assert_eq!(distributions.cols(), NUM_TAGS);
        let n = distributions.rows();
        let argmax_labels = (0..n).map(|i| Tag::from_index(distributions.argmax_row(i))).collect();
        let confidences = (0..n).map(|i| distributions.max_row(i)).collect();
        Self {
            distributions,
            argmax_labels,
            confidences,
        }
    }

    pub fn from_logits(logits: &Tensor<F>) -> Self {
        Self::from_distributions(softmax_rows(logits))
    }

    pub fn len(&self) -> usize {
        self.argmax_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argmax_labels.is_empty()
    }

    pub fn spans(&self) -> SpanSet {
        decode_bio(&self.argmax_labels)
    }
}

/// 0/1 indicator per token: 1 inside the target span.
pub fn target_indicators(n: usize, target: Span) -> Vec<usize> {
    (0..n).map(|i| usize::from(target.contains_index(i))).collect()
}

fn check_target(n: usize, target: Span) -> Result<()> {
    if target.is_empty() || target.end > n {
        return Err(Error::SpanOutOfRange {
            start: target.start,
            end: target.end,
            len: n,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ToweMeta {
    config: ToweConfig,
    vocab: Vocab,
}

#[derive(Debug, Clone)]
pub struct ToweModel<F> {
    pub config: ToweConfig,
    pub params: ParamStore<F>,
    encoder: EncoderHandle,
    position_embedding: ParamId,
    projection: Option<Linear>,
    refiner: TransformerStack,
    head: Linear,
}

impl<F: Scalar> ToweModel<F> {
    pub fn new(config: ToweConfig, vocab: Vocab) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let encoder = EncoderHandle::new(&mut params, "encoder", config.encoder.clone(), vocab, &mut rng);
        let position_embedding = params.add(
            "target_position_embedding",
            Tensor::randn(2, config.pos_dim, 0.5, &mut rng),
            ParamGroup::Head,
        );
        let fused = config.fused_dim();
        let projection = (fused != config.refiner_dim).then(|| {
            Linear::new(&mut params, "projection", fused, config.refiner_dim, ParamGroup::Head, &mut rng)
        });
        let refiner = TransformerStack::new(
            &mut params,
            "refiner",
            TransformerConfig {
                dim: config.refiner_dim,
                heads: config.refiner_heads,
                ffn_dim: config.refiner_ffn_dim,
                layers: config.refiner_layers,
            },
            ParamGroup::Head,
            &mut rng,
        );
        let head = Linear::new(&mut params, "head", config.refiner_dim, NUM_TAGS, ParamGroup::Head, &mut rng);
        Self {
            config,
            params,
            encoder,
            position_embedding,
            projection,
            refiner,
            head,
        }
    }

    pub fn encoder(&self) -> &EncoderHandle {
        &self.encoder
    }

    pub fn vocab(&self) -> &Vocab {
        self.encoder.vocab()
    }

    /// The target-position embeddings `e_i` for a sentence of `n` tokens.
    pub fn position_embeddings(&self, n: usize, target: Span) -> Tensor<F> {
        let table = self.params.get(self.position_embedding);
        let ind = target_indicators(n, target);
        let mut out = Tensor::zeros(n, table.cols());
        for (i, &b) in ind.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(b));
        }
        out
    }

    /// `n × 3` logits on `g`.
    pub fn logits(&self, g: &mut Graph<'_, F>, tokens: &[String], target: Span) -> Result<NodeId> {
        check_target(tokens.len(), target)?;
        let h = self.encoder.encode(g, tokens)?;
        let e = g.embed(self.position_embedding, &target_indicators(tokens.len(), target));
        let mut x = g.concat_cols(&[h, e]);
        if let Some(p) = &self.projection {
            x = p.forward(g, x);
        }
        let r = self.refiner.forward(g, x);
        Ok(self.head.forward(g, r))
    }

    pub fn forward(&self, tokens: &[String], target: Span) -> Result<PredictionSequence<F>> {
        let mut g = Graph::new(&self.params);
        let logits = self.logits(&mut g, tokens, target)?;
        Ok(PredictionSequence::from_logits(g.value(logits)))
    }

    pub fn predict_spans(&self, tokens: &[String], target: Span) -> Result<SpanSet> {
        Ok(self.forward(tokens, target)?.spans())
    }

    /// `scale * (1/n) Σ_i H(y_i, p_i)` for one instance, on `g`.
    pub fn instance_loss(&self, g: &mut Graph<'_, F>, inst: &ToweInstance, scale: F) -> Result<NodeId> {
        let logits = self.logits(g, inst.tokens(), inst.target())?;
        let lp = g.log_softmax(logits);
        let targets: Vec<usize> = inst.labels().iter().map(|t| t.index()).collect();
        let w = scale / F::of(inst.len() as f64);
        Ok(g.weighted_nll(lp, &targets, &vec![w; targets.len()]))
    }

    /// Batch mean of the per-instance token-averaged cross-entropy.
    pub fn supervised_loss(&self, batch: &[&ToweInstance]) -> Result<F> {
        self.supervised_loss_impl(batch, None)
    }

    /// Like [`Self::supervised_loss`], also accumulating its gradient.
    pub fn supervised_loss_grad(&self, batch: &[&ToweInstance], grads: &mut Gradients<F>) -> Result<F> {
        self.supervised_loss_impl(batch, Some(grads))
    }

    fn supervised_loss_impl(&self, batch: &[&ToweInstance], mut grads: Option<&mut Gradients<F>>) -> Result<F> {
        if batch.is_empty() {
            return Err(Error::Empty("supervised batch".into()));
        }
        let scale = F::one() / F::of(batch.len() as f64);
        let mut total = F::zero();
        for inst in batch {
            let mut g = Graph::new(&self.params);
            let loss = self.instance_loss(&mut g, inst, scale)?;
            total += g.value(loss).item();
            if let Some(grads) = grads.as_deref_mut() {
                g.backward(loss, grads);
            }
        }
        Ok(total)
    }

    pub fn save(&self, stem: &Path) -> Result<Sidecar> {
        let mut extra = serde_json::Map::new();
        extra.insert("pos_dim".into(), self.config.pos_dim.into());
        extra.insert("refiner_layers".into(), self.config.refiner_layers.into());
        extra.insert("encoder".into(), serde_json::to_value(&self.config.encoder)?);
        extra.insert("scalar".into(), F::NAME.into());
        checkpoint::save(
            stem,
            Describe {
                kind: CHECKPOINT_KIND,
                variant: self.config.encoder.variant,
                hidden_dim: self.config.encoder.hidden_dim,
                vocab_hash: self.vocab().hash(),
                extra,
            },
            &ToweMeta {
                config: self.config.clone(),
                vocab: self.vocab().clone(),
            },
            &self.params,
        )
    }

    pub fn load(stem: &Path) -> Result<(Self, Sidecar)> {
        let (meta, store, sidecar): (ToweMeta, ParamStore<F>, Sidecar) = checkpoint::load(stem, CHECKPOINT_KIND)?;
        let actual = meta.vocab.hash();
        if actual != sidecar.vocab_hash {
            return Err(Error::HashMismatch {
                expected: sidecar.vocab_hash.clone(),
                found: actual,
            });
        }
        let mut model = Self::new(meta.config, meta.vocab);
        model.params.load_values_from(&store)?;
        Ok((model, sidecar))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::DEFAULT_MASK_SYMBOL;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn tiny_config() -> ToweConfig {
        ToweConfig {
            encoder: EncoderConfig {
                hidden_dim: 8,
                layers: 1,
                heads: 2,
                ffn_dim: 16,
                ..EncoderConfig::small()
            },
            pos_dim: 4,
            refiner_dim: 8,
            refiner_layers: 1,
            refiner_heads: 2,
            refiner_ffn_dim: 16,
            init_seed: 3,
        }
    }

    fn model() -> ToweModel<f64> {
        let vocab = Vocab::build(["the", "food", "was", "good", "waiter", "rude"], DEFAULT_MASK_SYMBOL);
        ToweModel::new(tiny_config(), vocab)
    }

    #[test]
    fn rows_are_distributions_and_forward_is_deterministic() {
        let m = model();
        let t = toks("the food was good");
        let p = m.forward(&t, Span::new(1, 2)).unwrap();
        for i in 0..4 {
            assert!((p.distributions.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.confidences[i] >= 1.0 / 3.0 - 1e-12 && p.confidences[i] <= 1.0);
        }
        assert_eq!(p, m.forward(&t, Span::new(1, 2)).unwrap());
        assert!(m.forward(&t, Span::new(3, 5)).is_err());
    }

    #[test]
    fn target_changes_only_position_inputs() {
        let m = model();
        let a = m.position_embeddings(5, Span::new(1, 3));
        let b = m.position_embeddings(5, Span::new(2, 4));
        // symmetric difference of {1,2} and {2,3} is {1,3}
        for i in 0..5 {
            let differs = a.row(i) != b.row(i);
            assert_eq!(differs, i == 1 || i == 3, "row {i}");
        }
        let t = toks("the food was good rude");
        let ha = m.encoder().encode_values(&m.params, &t).unwrap();
        let hb = m.encoder().encode_values(&m.params, &t).unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn uniform_prediction_loss_is_ln3() {
        let mut m = model();
        // zero head weights and bias => uniform rows
        let w = m.head.weight;
        let b = m.head.bias;
        m.params.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        m.params.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let inst = ToweInstance::from_spans(toks("the food was good"), Span::new(1, 2), &[Span::new(3, 4)]).unwrap();
        let loss = m.supervised_loss(&[&inst]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        let p = m.forward(inst.tokens(), inst.target()).unwrap();
        assert!(p.argmax_labels.iter().all(|&t| t == Tag::B), "ties break toward B");
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let logits = Tensor::<f64>::from_rows(&[vec![0.3, -1.0, 0.2], vec![-2.0, 0.5, 0.49]]);
        let a = PredictionSequence::from_logits(&logits);
        for s in [0.1, 2.0, 50.0] {
            assert_eq!(PredictionSequence::from_logits(&logits.scale(s)).argmax_labels, a.argmax_labels);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        let m = model();
        let side = m.save(&stem).unwrap();
        assert_eq!(side.extra["pos_dim"], 4);
        let (back, _) = ToweModel::<f64>::load(&stem).unwrap();
        assert_eq!(back.params.fingerprint(), m.params.fingerprint());
        let t = toks("the waiter was rude");
        assert_eq!(back.forward(&t, Span::new(1, 2)).unwrap(), m.forward(&t, Span::new(1, 2)).unwrap());
    }
}
