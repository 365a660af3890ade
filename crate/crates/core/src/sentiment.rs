//! Attention-pooled sentiment classifier. Only its attention weights are
//! used downstream, to weight token confidences into a sentence score.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::checkpoint::{self, Describe, Sidecar};
use crate::corpus::PolarityExample;
use crate::encoder::{EncoderConfig, EncoderHandle, Vocab};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{Gradients, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::seed::stream_rng;
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "sentiment";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SentimentMeta {
    encoder: EncoderConfig,
    vocab: Vocab,
    init_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SentimentClassifier<F> {
    pub params: ParamStore<F>,
    encoder: EncoderHandle,
    /// Bilinear attention weight, `hidden × hidden`.
    pub attn_weight: ParamId,
    /// Attention bias, `1 × 1`.
    pub attn_bias: ParamId,
    head: Linear,
    init_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for SentimentTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 128,
            optimizer: AdamWConfig {
                lr_encoder: 1e-5,
                lr_head: 1e-4,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

impl<F: Scalar> SentimentClassifier<F> {
    pub fn new(encoder: EncoderConfig, vocab: Vocab, init_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamStore::new();
        let d = encoder.hidden_dim;
        let encoder = EncoderHandle::new(&mut params, "encoder", encoder, vocab, &mut rng);
        let attn_weight = params.add(
            "attention.weight",
            Tensor::randn(d, d, 1.0 / d as f64, &mut rng),
            ParamGroup::Head,
        );
        let attn_bias = params.add("attention.bias", Tensor::zeros(1, 1), ParamGroup::Head);
        let head = Linear::new(&mut params, "polarity", d, 2, ParamGroup::Head, &mut rng);
        Self {
            params,
            encoder,
            attn_weight,
            attn_bias,
            head,
            init_seed,
        }
    }

    pub fn encoder(&self) -> &EncoderHandle {
        &self.encoder
    }

    /// Attention row `1 × n` over token states `z` (`n × d`).
    fn attention_node(&self, g: &mut Graph<'_, F>, z: NodeId) -> NodeId {
        let z_avg = g.mean_rows(z);
        let w = g.param(self.attn_weight);
        let b = g.param(self.attn_bias);
        let zw = g.matmul(z, w);
        let f = g.matmul_t(zw, z_avg);
        let f = g.add_row(f, b);
        let f = g.transpose(f);
        g.softmax(f)
    }

    /// Attention weights for arbitrary token states, using this
    /// classifier's W and b.
    pub fn attention_from_states(&self, z: &Tensor<F>) -> Vec<F> {
        let mut g = Graph::new(&self.params);
        let z = g.input(z.clone());
        let a = self.attention_node(&mut g, z);
        g.value(a).data().to_vec()
    }

    /// The sentence's token states under this classifier's own encoder.
    pub fn token_states(&self, tokens: &[String]) -> Result<Tensor<F>> {
        self.encoder.encode_values(&self.params, tokens)
    }

    pub fn attention_scores(&self, tokens: &[String]) -> Result<Vec<F>> {
        let mut g = Graph::new(&self.params);
        let z = self.encoder.encode(&mut g, tokens)?;
        let a = self.attention_node(&mut g, z);
        Ok(g.value(a).data().to_vec())
    }

    fn logits(&self, g: &mut Graph<'_, F>, tokens: &[String]) -> Result<NodeId> {
        let z = self.encoder.encode(g, tokens)?;
        let a = self.attention_node(g, z);
        let pooled = g.matmul(a, z);
        Ok(self.head.forward(g, pooled))
    }

    /// Predicted polarity (0 or 1), ties toward 0.
    pub fn predict(&self, tokens: &[String]) -> Result<u8> {
        let mut g = Graph::new(&self.params);
        let l = self.logits(&mut g, tokens)?;
        Ok(g.value(l).argmax_row(0) as u8)
    }

    pub fn accuracy(&self, corpus: &[PolarityExample]) -> Result<f64> {
        if corpus.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for ex in corpus {
            hits += usize::from(self.predict(&ex.tokens)? == ex.polarity);
        }
        Ok(hits as f64 / corpus.len() as f64)
    }

    fn loss_grad(&self, batch: &[&PolarityExample], grads: &mut Gradients<F>) -> Result<F> {
        let w = F::one() / F::of(batch.len() as f64);
        let mut total = F::zero();
        for ex in batch {
            let mut g = Graph::new(&self.params);
            let l = self.logits(&mut g, &ex.tokens)?;
            let lp = g.log_softmax(l);
            let loss = g.weighted_nll(lp, &[ex.polarity as usize], &[w]);
            total += g.value(loss).item();
            g.backward(loss, grads);
        }
        Ok(total)
    }

    fn meta(&self) -> SentimentMeta {
        SentimentMeta {
            encoder: self.encoder.config().clone(),
            vocab: self.encoder.vocab().clone(),
            init_seed: self.init_seed,
        }
    }

    pub fn save(&self, stem: &Path) -> Result<Sidecar> {
        let mut extra = serde_json::Map::new();
        extra.insert("scalar".into(), F::NAME.into());
        checkpoint::save(
            stem,
            Describe {
                kind: CHECKPOINT_KIND,
                variant: self.encoder.variant(),
                hidden_dim: self.encoder.hidden_dim(),
                vocab_hash: self.encoder.vocab().hash(),
                extra,
            },
            &self.meta(),
            &self.params,
        )
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (meta, store, _): (SentimentMeta, ParamStore<F>, _) = checkpoint::load(stem, CHECKPOINT_KIND)?;
        let mut c = Self::new(meta.encoder, meta.vocab, meta.init_seed);
        c.params.load_values_from(&store)?;
        Ok(c)
    }
}

/// `Σ α_i c_i`, clamped into `[min c, max c]` against rounding.
pub fn sc_senti<F: Scalar>(alpha: &[F], confidences: &[F]) -> Result<F> {
    if alpha.len() != confidences.len() {
        return Err(Error::LengthMismatch(alpha.len(), confidences.len()));
    }
    if confidences.is_empty() {
        return Err(Error::Empty("confidence sequence".into()));
    }
    let s = alpha.iter().zip(confidences).fold(F::zero(), |acc, (&a, &c)| acc + a * c);
    let lo = confidences.iter().copied().fold(F::infinity(), F::min);
    let hi = confidences.iter().copied().fold(F::neg_infinity(), F::max);
    Ok(s.max(lo).min(hi))
}

/// Trains for a fixed number of minibatch steps, batches drawn with
/// replacement.
pub fn pretrain_sentiment<F: Scalar>(
    corpus: &[PolarityExample],
    encoder: EncoderConfig,
    vocab: Vocab,
    cfg: &SentimentTrainConfig,
) -> Result<SentimentClassifier<F>> {
    if corpus.is_empty() {
        return Err(Error::Empty("sentiment corpus".into()));
    }
    let positives = corpus.iter().filter(|e| e.polarity == 1).count();
    if positives == 0 || positives == corpus.len() {
        return Err(Error::SingleClass);
    }
    let mut clf = SentimentClassifier::<F>::new(encoder, vocab, cfg.seed);
    let mut opt = AdamW::new(&clf.params, cfg.optimizer);
    let mut rng = stream_rng(cfg.seed, "sentiment.batches", 0);
    let bs = cfg.batch_size.clamp(1, corpus.len());
    for step in 0..cfg.steps {
        let batch: Vec<&PolarityExample> = (0..bs).map(|_| &corpus[rng.gen_range(0..corpus.len())]).collect();
        let mut grads = Gradients::new(&clf.params);
        let loss = clf.loss_grad(&batch, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("sentiment loss {loss}"),
            });
        }
        opt.step(&mut clf.params, &grads);
        if step % 100 == 0 {
            log::debug!("sentiment step {step}: loss {loss:.4}");
        }
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::DEFAULT_MASK_SYMBOL;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn tiny() -> SentimentClassifier<f64> {
        let vocab = Vocab::build(["the", "food", "was", "good", "bad"], DEFAULT_MASK_SYMBOL);
        let cfg = EncoderConfig {
            hidden_dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            ..EncoderConfig::small()
        };
        SentimentClassifier::new(cfg, vocab, 4)
    }

    #[test]
    fn attention_is_a_distribution() {
        let c = tiny();
        let a = c.attention_scores(&toks("the food was good")).unwrap();
        assert_eq!(a.len(), 4);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&x| x >= 0.0));
        assert_eq!(c.attention_scores(&toks("good")).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_states_give_uniform_attention() {
        let c = tiny();
        let z = Tensor::from_rows(&[vec![0.3; 8], vec![0.3; 8], vec![0.3; 8]]);
        for a in c.attention_from_states(&z) {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sc_senti_examples() {
        assert_eq!(sc_senti(&[1.0, 0.0], &[0.3, 0.9]).unwrap(), 0.3);
        assert!((sc_senti(&[0.25, 0.75], &[0.8, 0.4]).unwrap() - 0.5f64).abs() < 1e-15);
        assert!(matches!(sc_senti(&[1.0], &[0.3, 0.9]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn single_class_corpus_is_rejected() {
        let c = tiny();
        let corpus = vec![PolarityExample {
            tokens: toks("good food"),
            polarity: 1,
        }];
        let r = pretrain_sentiment::<f64>(
            &corpus,
            c.encoder().config().clone(),
            c.encoder().vocab().clone(),
            &SentimentTrainConfig::default(),
        );
        assert!(matches!(r, Err(Error::SingleClass)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("senti");
        let c = tiny();
        c.save(&stem).unwrap();
        let back = SentimentClassifier::<f64>::load(&stem).unwrap();
        let t = toks("the food was bad");
        assert_eq!(back.attention_scores(&t).unwrap(), c.attention_scores(&t).unwrap());
    }
}
