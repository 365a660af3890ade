//! Contextual encoders behind one interface.
//!
//! Two variants share the same code path: a small word-level encoder that is
//! trained from scratch, and a large subword encoder whose weights are meant
//! to be loaded from a checkpoint. Either way `encode` returns exactly one
//! vector per input token.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{TransformerConfig, TransformerStack};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const UNK: &str = "[unk]";
const CONTINUATION: &str = "##";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    Pretrained,
    Small,
}

impl std::fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pretrained => "pretrained",
            Self::Small => "small",
        })
    }
}

impl std::str::FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(Self::Pretrained),
            "small" => Ok(Self::Small),
            _ => Err(Error::Config(format!("unknown encoder variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Limit on encoder positions (subword pieces for the subword variant).
    pub max_len: usize,
    pub trainable: bool,
    pub subword: bool,
}

impl EncoderConfig {
    /// Desk-scale encoder: 2 layers, width 64, word-level, 64 positions.
    pub fn small() -> Self {
        Self {
            variant: EncoderVariant::Small,
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            max_len: 64,
            trainable: true,
            subword: false,
        }
    }

    /// Large subword encoder with hidden size 512 and 128 positions.
    pub fn pretrained() -> Self {
        Self {
            variant: EncoderVariant::Pretrained,
            hidden_dim: 512,
            layers: 8,
            heads: 8,
            ffn_dim: 2048,
            max_len: 128,
            trainable: true,
            subword: true,
        }
    }

    pub fn for_variant(v: EncoderVariant) -> Self {
        match v {
            EncoderVariant::Pretrained => Self::pretrained(),
            EncoderVariant::Small => Self::small(),
        }
    }
}

/// Lowercased token inventory. Index 0 is the unknown token and index 1 the
/// mask symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Word-level vocabulary over `words`, sorted for determinism.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, mask_symbol: &str) -> Self {
        let specials = [UNK.to_string(), mask_symbol.to_lowercase()];
        let set: BTreeSet<String> = words
            .into_iter()
            .map(str::to_lowercase)
            .filter(|w| !specials.contains(w))
            .collect();
        Self::from_tokens(specials.into_iter().chain(set).collect())
    }

    /// Word-level entries plus every single character, bare and as a
    /// continuation piece, so any word can be split.
    pub fn build_subword<'a>(words: impl IntoIterator<Item = &'a str>, mask_symbol: &str) -> Self {
        let words: Vec<String> = words.into_iter().map(str::to_lowercase).collect();
        let mut pieces: BTreeSet<String> = words.iter().cloned().collect();
        for w in &words {
            for c in w.chars() {
                pieces.insert(c.to_string());
                pieces.insert(format!("{CONTINUATION}{c}"));
            }
        }
        Self::build(pieces.iter().map(String::as_str), mask_symbol)
    }

    /// Word-level or subword vocabulary, whichever `config` calls for.
    pub fn for_encoder<'a>(config: &EncoderConfig, words: impl IntoIterator<Item = &'a str>, mask_symbol: &str) -> Self {
        if config.subword {
            Self::build_subword(words, mask_symbol)
        } else {
            Self::build(words, mask_symbol)
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    /// Greedy longest-match split into pieces; continuation pieces carry a
    /// `##` prefix. Falls back to the unknown token when no split exists.
    pub fn pieces(&self, word: &str) -> Vec<usize> {
        let w = word.to_lowercase();
        if let Some(&i) = self.index.get(&w) {
            return vec![i];
        }
        let chars: Vec<char> = w.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let body: String = chars[start..end].iter().collect();
                let piece = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
                if let Some(&i) = self.index.get(&piece) {
                    found = Some(i);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(i) => {
                    out.push(i);
                    start = end;
                }
                None => return vec![0],
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Sine/cosine position table used to initialize the (trainable) position
/// embeddings, so nearby offsets start out related by a fixed rotation.
fn sinusoid_table<F: Scalar>(len: usize, dim: usize) -> Tensor<F> {
    let mut t = Tensor::zeros(len, dim);
    for p in 0..len {
        for i in 0..dim {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let a = p as f64 * freq;
            t.set(p, i, F::of(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    t
}

/// An encoder bound to parameters inside a model's [`ParamStore`].
#[derive(Debug, Clone)]
pub struct EncoderHandle {
    config: EncoderConfig,
    vocab: Vocab,
    token_embedding: ParamId,
    position_embedding: ParamId,
    stack: TransformerStack,
}

impl EncoderHandle {
    pub fn new<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        config: EncoderConfig,
        vocab: Vocab,
        rng: &mut R,
    ) -> Self {
        let d = config.hidden_dim;
        let group = ParamGroup::Encoder;
        let token_embedding = store.add(
            format!("{name}.token_embedding"),
            Tensor::randn(vocab.len(), d, 0.5, rng),
            group,
        );
        let position_embedding = store.add(
            format!("{name}.position_embedding"),
            sinusoid_table(config.max_len, d),
            group,
        );
        let stack = TransformerStack::new(
            store,
            &format!("{name}.layers"),
            TransformerConfig {
                dim: d,
                heads: config.heads,
                ffn_dim: config.ffn_dim,
                layers: config.layers,
            },
            group,
            rng,
        );
        Self {
            config,
            vocab,
            token_embedding,
            position_embedding,
            stack,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn variant(&self) -> EncoderVariant {
        self.config.variant
    }

    pub fn trainable(&self) -> bool {
        self.config.trainable
    }

    /// Encoder-position ids and, for subword input, the first piece of each
    /// token.
    fn ids(&self, tokens: &[String]) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
        if tokens.is_empty() {
            return Err(Error::Empty("encoder input has no tokens".into()));
        }
        let (ids, firsts) = if self.config.subword {
            let mut ids = Vec::new();
            let mut firsts = Vec::with_capacity(tokens.len());
            for t in tokens {
                firsts.push(ids.len());
                ids.extend(self.vocab.pieces(t));
            }
            (ids, Some(firsts))
        } else {
            (tokens.iter().map(|t| self.vocab.id(t)).collect(), None)
        };
        if ids.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                limit: self.config.max_len,
            });
        }
        Ok((ids, firsts))
    }

    /// Errors when `tokens` would not fit in the encoder.
    pub fn check_length(&self, tokens: &[String]) -> Result<()> {
        self.ids(tokens).map(|_| ())
    }

    /// `n × hidden_dim` contextual representations, one row per token.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<'_, F>, tokens: &[String]) -> Result<NodeId> {
        let (ids, firsts) = self.ids(tokens)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = g.embed(self.token_embedding, &ids);
        let pos = g.embed(self.position_embedding, &positions);
        let x = g.add(tok, pos);
        let h = self.stack.forward(g, x);
        Ok(match firsts {
            Some(f) => g.gather_rows(h, &f),
            None => h,
        })
    }

    pub fn encode_values<F: Scalar>(&self, store: &ParamStore<F>, tokens: &[String]) -> Result<Tensor<F>> {
        let mut g = Graph::new(store);
        let h = self.encode(&mut g, tokens)?;
        Ok(g.value(h).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::DEFAULT_MASK_SYMBOL;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_handle(store: &mut ParamStore<f64>) -> EncoderHandle {
        let vocab = Vocab::build(["great", "pizza", "!"], DEFAULT_MASK_SYMBOL);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        EncoderHandle::new(store, "enc", EncoderConfig::small(), vocab, &mut rng)
    }

    #[test]
    fn shape_and_determinism() {
        let mut store = ParamStore::new();
        let h = small_handle(&mut store);
        let a = h.encode_values(&store, &toks("great pizza !")).unwrap();
        assert_eq!(a.shape(), (3, 64));
        let b = h.encode_values(&store, &toks("great pizza !")).unwrap();
        assert_eq!(a, b);
        assert_eq!(h.hidden_dim(), 64);
    }

    #[test]
    fn length_limit_and_empty_input() {
        let mut store = ParamStore::new();
        let h = small_handle(&mut store);
        let long: Vec<String> = (0..65).map(|_| "pizza".to_string()).collect();
        match h.encode_values(&store, &long) {
            Err(Error::TooLong { len: 65, limit: 64 }) => {}
            other => panic!("expected TooLong, got {other:?}"),
        }
        assert!(h.encode_values(&store, &[]).is_err());
    }

    #[test]
    fn vocab_lookup_is_case_insensitive_with_unk_fallback() {
        let v = Vocab::build(["Great", "pizza"], DEFAULT_MASK_SYMBOL);
        assert_eq!(v.id("GREAT"), v.id("great"));
        assert_eq!(v.id("never-seen"), 0);
        assert_eq!(v.id(DEFAULT_MASK_SYMBOL), 1);
        assert_eq!(v.hash(), Vocab::build(["pizza", "great"], DEFAULT_MASK_SYMBOL).hash());
    }

    #[test]
    fn subword_pooling_keeps_one_vector_per_token() {
        let vocab = Vocab::build_subword(["pizza", "great", "fries"], DEFAULT_MASK_SYMBOL);
        assert_eq!(vocab.pieces("pizzas").len(), 2);
        assert_eq!(vocab.pieces("pizza").len(), 1);
        let cfg = EncoderConfig {
            hidden_dim: 16,
            layers: 1,
            heads: 2,
            ffn_dim: 32,
            max_len: 32,
            ..EncoderConfig::pretrained()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = EncoderHandle::new(&mut store, "enc", cfg, vocab, &mut rng);
        let out = h.encode_values(&store, &toks("greatest pizzas ever")).unwrap();
        assert_eq!(out.shape(), (3, 16));
        assert_eq!(EncoderConfig::pretrained().hidden_dim, 512);
    }
}
