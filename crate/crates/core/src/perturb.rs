//! The perturbation applied to unlabeled sentences before the consistency
//! pass: random masking or random synonym replacement, chosen per sentence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::UnlabeledInstance;
use crate::error::{Error, Result};
use crate::seed::stream_rng;

pub const DEFAULT_MASK_SYMBOL: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub mask_rate: f64,
    pub synonym_rate: f64,
    pub mask_symbol: String,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            synonym_rate: 0.15,
            mask_symbol: DEFAULT_MASK_SYMBOL.to_string(),
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("mask_rate", self.mask_rate), ("synonym_rate", self.synonym_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if self.mask_symbol.is_empty() || self.mask_symbol.contains(char::is_whitespace) {
            return Err(Error::Config("mask_symbol must be a single nonempty token".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Mask,
    Synonym,
}

/// Lowercase word to single-token synonyms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconRecord {
    word: String,
    synonyms: Vec<String>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry. Self-synonyms are dropped; multi-token synonyms are
    /// rejected.
    pub fn insert(&mut self, word: &str, synonyms: &[String]) -> Result<()> {
        let key = word.to_lowercase();
        let mut kept: Vec<String> = Vec::new();
        for s in synonyms {
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("synonym {s:?} of {word:?} is not a single token")));
            }
            if s.to_lowercase() != key && !kept.contains(s) {
                kept.push(s.clone());
            }
        }
        if kept.is_empty() {
            return Err(Error::Validation(format!("{word:?} has no synonym other than itself")));
        }
        self.entries.entry(key).or_default().extend(kept);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every word that appears as a key or a synonym.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|(k, v)| std::iter::once(k.as_str()).chain(v.iter().map(String::as_str)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let wrap = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let rec: LexiconRecord = serde_json::from_str(line).map_err(|e| wrap(e.to_string()))?;
            lex.insert(&rec.word, &rec.synonyms).map_err(|e| wrap(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (word, synonyms) in &self.entries {
            let rec = LexiconRecord {
                word: word.clone(),
                synonyms: synonyms.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Perturbs one sentence. The strategy is drawn uniformly per call, then
/// applied independently to each token outside the target span.
pub fn perturb(
    instance: &UnlabeledInstance,
    cfg: &PerturbConfig,
    lexicon: &SynonymLexicon,
    step_seed: u64,
) -> UnlabeledInstance {
    let mut rng = stream_rng(cfg.seed, "perturb", step_seed);
    let strategy = if rng.gen_bool(0.5) {
        Strategy::Mask
    } else {
        Strategy::Synonym
    };
    apply(instance, strategy, cfg, lexicon, &mut rng)
}

/// Perturbs with a fixed strategy.
pub fn perturb_with(
    instance: &UnlabeledInstance,
    strategy: Strategy,
    cfg: &PerturbConfig,
    lexicon: &SynonymLexicon,
    step_seed: u64,
) -> UnlabeledInstance {
    let mut rng = stream_rng(cfg.seed, "perturb", step_seed);
    apply(instance, strategy, cfg, lexicon, &mut rng)
}

fn apply<R: Rng>(
    instance: &UnlabeledInstance,
    strategy: Strategy,
    cfg: &PerturbConfig,
    lexicon: &SynonymLexicon,
    rng: &mut R,
) -> UnlabeledInstance {
    let mut out = instance.clone();
    let target = instance.target_span;
    for (i, tok) in out.tokens.iter_mut().enumerate() {
        if target.contains_index(i) {
            continue;
        }
        match strategy {
            Strategy::Mask => {
                if cfg.mask_rate > 0.0 && rng.gen_bool(cfg.mask_rate) {
                    *tok = cfg.mask_symbol.clone();
                }
            }
            Strategy::Synonym => {
                let Some(syns) = lexicon.get(tok) else { continue };
                if cfg.synonym_rate > 0.0 && rng.gen_bool(cfg.synonym_rate) {
                    *tok = syns.choose(rng).expect("nonempty synonym list").clone();
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use proptest::prelude::*;
    use super::Strategy;

    fn inst(words: &[&str], target: Span) -> UnlabeledInstance {
        UnlabeledInstance::new(words.iter().map(|s| s.to_string()).collect(), target, "t").unwrap()
    }

    fn lexicon() -> SynonymLexicon {
        let mut lex = SynonymLexicon::new();
        lex.insert("good", &["great".to_string()]).unwrap();
        lex
    }

    #[test]
    fn zero_rates_are_identity() {
        let cfg = PerturbConfig {
            mask_rate: 0.0,
            synonym_rate: 0.0,
            ..Default::default()
        };
        let x = inst(&["good", "food", "here"], Span::new(1, 2));
        for s in 0..20 {
            assert_eq!(perturb(&x, &cfg, &lexicon(), s), x);
        }
    }

    #[test]
    fn full_mask_spares_target() {
        let cfg = PerturbConfig {
            mask_rate: 1.0,
            ..Default::default()
        };
        let x = inst(&["good", "food"], Span::new(1, 2));
        let y = perturb_with(&x, Strategy::Mask, &cfg, &lexicon(), 0);
        assert_eq!(y.tokens, vec![DEFAULT_MASK_SYMBOL.to_string(), "food".to_string()]);
    }

    #[test]
    fn full_synonym_replaces_known_words() {
        let cfg = PerturbConfig {
            synonym_rate: 1.0,
            ..Default::default()
        };
        let x = inst(&["good", "food", "unknownword"], Span::new(1, 2));
        let y = perturb_with(&x, Strategy::Synonym, &cfg, &lexicon(), 0);
        assert_eq!(y.tokens, vec!["great", "food", "unknownword"]);
    }

    #[test]
    fn lexicon_rejects_bad_entries() {
        let mut lex = SynonymLexicon::new();
        assert!(lex.insert("good", &["good".to_string()]).is_err());
        assert!(lex.insert("good", &["very good".to_string()]).is_err());
        lex.insert("Good", &["good".to_string(), "fine".to_string()]).unwrap();
        assert_eq!(lex.get("GOOD").unwrap(), &["fine".to_string()]);
    }

    #[test]
    fn lexicon_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.jsonl");
        std::fs::write(&p, lexicon().to_jsonl()).unwrap();
        assert_eq!(SynonymLexicon::load(&p).unwrap(), lexicon());
    }

    proptest! {
        #[test]
        fn preserves_length_target_and_determinism(
            words in proptest::collection::vec(prop_oneof!["good", "food", "bad", "x"], 1..12),
            start_frac in 0.0f64..1.0,
            mask_rate in 0.0f64..=1.0,
            synonym_rate in 0.0f64..=1.0,
            step in any::<u64>(),
        ) {
            let n = words.len();
            let start = ((n as f64) * start_frac) as usize % n;
            let x = UnlabeledInstance::new(words, Span::new(start, start + 1), "p").unwrap();
            let cfg = PerturbConfig { mask_rate, synonym_rate, ..Default::default() };
            let y = perturb(&x, &cfg, &lexicon(), step);
            prop_assert_eq!(y.tokens.len(), n);
            prop_assert_eq!(y.target_span, x.target_span);
            prop_assert_eq!(&y.tokens[start], &x.tokens[start]);
            prop_assert_eq!(y, perturb(&x, &cfg, &lexicon(), step));
        }
    }
}
