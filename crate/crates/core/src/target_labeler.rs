//! Opinion-target extraction used to attach pseudo targets to raw
//! sentences before semi-supervised training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::{self, Describe, Sidecar};
use crate::corpus::{decode_bio, encode_bio, group_by_sentence, write_file, Span, SpanSet, Tag, ToweInstance, UnlabeledInstance};
use crate::encoder::{EncoderConfig, EncoderHandle, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::span_prf;
use crate::nn::Linear;
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{Gradients, ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::seed::stream_rng;

use crate::towe::{PredictionSequence, NUM_TAGS};

pub const CHECKPOINT_KIND: &str = "target_tagger";

/// A sentence with BIO labels over its opinion targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetExample {
    pub tokens: Vec<String>,
    pub labels: Vec<Tag>,
}

impl TargetExample {
    pub fn spans(&self) -> SpanSet {
        decode_bio(&self.labels)
    }
}

/// Target-tagging labels for a single instance: its target span only.
pub fn target_labels(inst: &ToweInstance) -> Vec<Tag> {
    encode_bio(inst.len(), &[inst.target()]).expect("instance target is valid")
}

/// One example per sentence, marking every target annotated for it. A
/// target overlapping an earlier one is skipped.
pub fn target_examples(instances: &[ToweInstance]) -> Vec<TargetExample> {
    group_by_sentence(instances)
        .into_iter()
        .map(|members| {
            let mut spans: Vec<Span> = Vec::new();
            for &i in &members {
                let t = instances[i].target();
                if !spans.iter().any(|s| s.overlaps(&t)) {
                    spans.push(t);
                }
            }
            let tokens = instances[members[0]].tokens().to_vec();
            let labels = encode_bio(tokens.len(), &spans).expect("disjoint in-range spans");
            TargetExample { tokens, labels }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaggerMeta {
    encoder: EncoderConfig,
    vocab: Vocab,
    init_seed: u64,
}

/// Encoder plus a per-token linear classifier over B/I/O.
#[derive(Debug, Clone)]
pub struct TargetTagger<F> {
    pub params: ParamStore<F>,
    encoder: EncoderHandle,
    head: Linear,
    init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            patience: 5,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl<F: Scalar> TargetTagger<F> {
    pub fn new(encoder: EncoderConfig, vocab: Vocab, init_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamStore::new();
        let d = encoder.hidden_dim;
        let encoder = EncoderHandle::new(&mut params, "encoder", encoder, vocab, &mut rng);
        let head = Linear::new(&mut params, "head", d, NUM_TAGS, ParamGroup::Head, &mut rng);
        Self {
            params,
            encoder,
            head,
            init_seed,
        }
    }

    pub fn encoder(&self) -> &EncoderHandle {
        &self.encoder
    }

    pub fn forward(&self, tokens: &[String]) -> Result<PredictionSequence<F>> {
        let mut g = Graph::new(&self.params);
        let h = self.encoder.encode(&mut g, tokens)?;
        let logits = self.head.forward(&mut g, h);
        Ok(PredictionSequence::from_logits(g.value(logits)))
    }

    pub fn predict_targets(&self, tokens: &[String]) -> Result<SpanSet> {
        Ok(self.forward(tokens)?.spans())
    }

    /// Batch mean of token-averaged cross-entropy, with gradient.
    fn loss_grad(&self, batch: &[&TargetExample], grads: &mut Gradients<F>) -> Result<F> {
        let scale = F::one() / F::of(batch.len() as f64);
        let mut total = F::zero();
        for ex in batch {
            let mut g = Graph::new(&self.params);
            let h = self.encoder.encode(&mut g, &ex.tokens)?;
            let logits = self.head.forward(&mut g, h);
            let lp = g.log_softmax(logits);
            let targets: Vec<usize> = ex.labels.iter().map(|t| t.index()).collect();
            let w = scale / F::of(ex.tokens.len() as f64);
            let loss = g.weighted_nll(lp, &targets, &vec![w; targets.len()]);
            total += g.value(loss).item();
            g.backward(loss, grads);
        }
        Ok(total)
    }

    pub fn span_f1(&self, examples: &[TargetExample]) -> Result<f64> {
        let pairs = examples
            .iter()
            .map(|ex| Ok((ex.spans(), self.predict_targets(&ex.tokens)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(span_prf(pairs.iter().map(|(g, p)| (g, p))).f1)
    }

    /// SHA-256 of the serialized checkpoint blob.
    pub fn checkpoint_hash(&self) -> String {
        checkpoint::sha256_hex(&checkpoint::encode_blob(&self.meta(), &self.params))
    }

    fn meta(&self) -> TaggerMeta {
        TaggerMeta {
            encoder: self.encoder.config().clone(),
            vocab: self.encoder.vocab().clone(),
            init_seed: self.init_seed,
        }
    }

    pub fn save(&self, stem: &Path) -> Result<Sidecar> {
        checkpoint::save(
            stem,
            Describe {
                kind: CHECKPOINT_KIND,
                variant: self.encoder.variant(),
                hidden_dim: self.encoder.hidden_dim(),
                vocab_hash: self.encoder.vocab().hash(),
                extra: serde_json::Map::new(),
            },
            &self.meta(),
            &self.params,
        )
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (meta, store, _): (TaggerMeta, ParamStore<F>, _) = checkpoint::load(stem, CHECKPOINT_KIND)?;
        let mut t = Self::new(meta.encoder, meta.vocab, meta.init_seed);
        t.params.load_values_from(&store)?;
        Ok(t)
    }
}

/// Trains on sentence-level target labels and returns the parameters with
/// the best validation span F1.
pub fn train_target_tagger<F: Scalar>(
    train: &[ToweInstance],
    valid: &[ToweInstance],
    encoder: EncoderConfig,
    vocab: Vocab,
    cfg: &TaggerTrainConfig,
) -> Result<TargetTagger<F>> {
    if train.is_empty() {
        return Err(Error::Empty("target tagger training set".into()));
    }
    let train_ex = target_examples(train);
    let valid_ex = target_examples(valid);
    let mut tagger = TargetTagger::<F>::new(encoder, vocab, cfg.seed);
    let mut opt = AdamW::new(&tagger.params, cfg.optimizer);
    let mut order_rng = stream_rng(cfg.seed, "tagger.order", 0);
    let mut best = (f64::NEG_INFINITY, tagger.params.clone());
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_ex.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&TargetExample> = chunk.iter().map(|&i| &train_ex[i]).collect();
            let mut grads = Gradients::new(&tagger.params);
            let loss = tagger.loss_grad(&batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: opt.steps_taken() as usize,
                    detail: format!("target tagger loss {loss}"),
                });
            }
            opt.step(&mut tagger.params, &grads);
        }
        let f1 = if valid_ex.is_empty() {
            tagger.span_f1(&train_ex)?
        } else {
            tagger.span_f1(&valid_ex)?
        };
        log::info!("target tagger epoch {epoch}: valid span F1 {f1:.4}");
        if f1 > best.0 {
            best = (f1, tagger.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    tagger.params = best.1;
    Ok(tagger)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabels {
    pub instances: Vec<UnlabeledInstance>,
    pub kept_sentences: usize,
    pub dropped_no_target: usize,
    pub dropped_too_long: usize,
}

/// Tags every raw sentence; each predicted target span becomes one
/// instance. Sentences without targets, or too long for the encoder, are
/// dropped and counted.
pub fn pseudo_label_targets<F: Scalar>(tagger: &TargetTagger<F>, raw: &[Vec<String>]) -> Result<PseudoLabels> {
    let mut out = PseudoLabels::default();
    for (i, tokens) in raw.iter().enumerate() {
        if tokens.is_empty() {
            continue;
        }
        if tagger.encoder.check_length(tokens).is_err() {
            out.dropped_too_long += 1;
            continue;
        }
        let spans = tagger.predict_targets(tokens)?;
        if spans.is_empty() {
            out.dropped_no_target += 1;
            continue;
        }
        out.kept_sentences += 1;
        for s in spans.iter() {
            out.instances
                .push(UnlabeledInstance::new(tokens.clone(), *s, format!("raw:{i}"))?);
        }
    }
    if out.dropped_too_long > 0 {
        log::info!("dropped {} raw sentences over the encoder length limit", out.dropped_too_long);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheHeader {
    pub tagger_hash: String,
    pub version: u32,
    pub kept_sentences: usize,
    pub dropped_no_target: usize,
    pub dropped_too_long: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: CacheHeader,
}

pub fn write_cache(path: &Path, header: &CacheHeader, instances: &[UnlabeledInstance]) -> Result<()> {
    let mut out = serde_json::to_string(&HeaderLine { header: header.clone() })?;
    out.push('\n');
    for inst in instances {
        out.push_str(&serde_json::to_string(inst)?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_cache(path: &Path) -> Result<(CacheHeader, Vec<UnlabeledInstance>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let wrap = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (_, first) = lines.next().ok_or_else(|| wrap(1, "missing cache header".into()))?;
    let header: HeaderLine = serde_json::from_str(first).map_err(|e| wrap(1, e.to_string()))?;
    let mut instances = Vec::new();
    for (i, line) in lines {
        let inst: UnlabeledInstance = serde_json::from_str(line).map_err(|e| wrap(i + 1, e.to_string()))?;
        let inst = UnlabeledInstance::new(inst.tokens, inst.target_span, inst.source_id)
            .map_err(|e| wrap(i + 1, e.to_string()))?;
        instances.push(inst);
    }
    Ok((header.header, instances))
}

/// All-zero logits for testing the drop path.
#[cfg(test)]
fn silence_head<F: Scalar>(t: &mut TargetTagger<F>) {
    let w = t.head.weight;
    let b = t.head.bias;
    use crate::tensor::Tensor;
    *t.params.get_mut(w) = Tensor::zeros(t.params.get(w).rows(), NUM_TAGS);
    // O wins outright
    *t.params.get_mut(b) = Tensor::from_vec(1, 3, vec![F::zero(), F::zero(), F::one()]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::DEFAULT_MASK_SYMBOL;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn label_derivation() {
        let inst = ToweInstance::from_spans(toks("waiter is rude"), Span::new(0, 1), &[Span::new(2, 3)]).unwrap();
        assert_eq!(target_labels(&inst), vec![Tag::B, Tag::O, Tag::O]);
        let other = ToweInstance::from_spans(toks("waiter is rude"), Span::new(2, 3), &[]).unwrap();
        let ex = target_examples(&[inst, other]);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].labels, vec![Tag::B, Tag::O, Tag::B]);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let vocab = Vocab::build(["a"], DEFAULT_MASK_SYMBOL);
        let r = train_target_tagger::<f32>(&[], &[], EncoderConfig::small(), vocab, &TaggerTrainConfig::default());
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn targetless_sentences_are_dropped() {
        let vocab = Vocab::build(["the", "food", "was", "good"], DEFAULT_MASK_SYMBOL);
        let cfg = EncoderConfig {
            hidden_dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 8,
            max_len: 4,
            ..EncoderConfig::small()
        };
        let mut t = TargetTagger::<f64>::new(cfg, vocab, 0);
        silence_head(&mut t);
        let raw = vec![toks("the food was good"), toks("the food was good good")];
        let out = pseudo_label_targets(&t, &raw).unwrap();
        assert!(out.instances.is_empty());
        assert_eq!((out.dropped_no_target, out.dropped_too_long), (1, 1));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.jsonl");
        let header = CacheHeader {
            tagger_hash: "abc".into(),
            version: 1,
            kept_sentences: 1,
            dropped_no_target: 0,
            dropped_too_long: 0,
        };
        let insts = vec![
            UnlabeledInstance::new(toks("good food and bad wine"), Span::new(1, 2), "raw:0").unwrap(),
            UnlabeledInstance::new(toks("good food and bad wine"), Span::new(4, 5), "raw:0").unwrap(),
        ];
        write_cache(&p, &header, &insts).unwrap();
        let (h, back) = read_cache(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, insts);
    }
}
