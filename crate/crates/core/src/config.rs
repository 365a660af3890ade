//! Run configuration: a flat `key = value` file with command-line overrides.
//! Defaults are the full-scale training setup.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::error::{Error, Result};
use crate::mgcr::{FilterConfig, SentenceMode, TrainConfig};
use crate::optim::AdamWConfig;
use crate::perturb::{PerturbConfig, DEFAULT_MASK_SYMBOL};
use crate::sentiment::SentimentTrainConfig;
use crate::target_labeler::TaggerTrainConfig;
use crate::towe::ToweConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub labeled: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub sentiment_corpus: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/pseudo_targets.jsonl`.
    pub pseudo_targets: Option<PathBuf>,
    /// Checkpoint stem; defaults to `<out_dir>/sentiment`.
    pub sentiment_ckpt: Option<PathBuf>,
    /// Checkpoint stem for `eval`; defaults to `<out_dir>/model`.
    pub checkpoint: Option<PathBuf>,

    pub sentence_threshold: f64,
    pub word_threshold: f64,
    pub sentence_mode: SentenceMode,
    pub word_filter: bool,
    pub consistency: bool,
    pub normalize_by_kept: bool,

    pub mask_rate: f64,
    pub synonym_rate: f64,
    pub mask_symbol: String,

    pub encoder: EncoderVariant,
    pub hidden_dim: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub encoder_heads: Option<usize>,
    pub encoder_ffn_dim: Option<usize>,
    pub max_len: Option<usize>,
    pub pos_dim: Option<usize>,
    pub refiner_dim: Option<usize>,
    pub refiner_layers: Option<usize>,
    pub refiner_heads: Option<usize>,
    pub refiner_ffn_dim: Option<usize>,

    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub train_encoder: bool,
    pub epochs: usize,
    pub patience: usize,

    pub tagger_epochs: usize,

    pub sentiment_steps: usize,
    pub sentiment_batch: usize,
    pub sentiment_lr_encoder: f64,
    pub sentiment_lr_head: f64,

    pub t_values: String,
    pub tau_values: String,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let filter = FilterConfig::default();
        let perturb = PerturbConfig::default();
        let opt = AdamWConfig::default();
        let senti = SentimentTrainConfig::default();
        let train = TrainConfig::default();
        Self {
            labeled: None,
            raw: None,
            lexicon: None,
            sentiment_corpus: None,
            test: None,
            out_dir: PathBuf::from("out"),
            pseudo_targets: None,
            sentiment_ckpt: None,
            checkpoint: None,
            sentence_threshold: filter.sentence_threshold,
            word_threshold: filter.word_threshold,
            sentence_mode: filter.sentence_mode,
            word_filter: filter.word_filter,
            consistency: filter.consistency,
            normalize_by_kept: filter.normalize_by_kept,
            mask_rate: perturb.mask_rate,
            synonym_rate: perturb.synonym_rate,
            mask_symbol: DEFAULT_MASK_SYMBOL.to_string(),
            encoder: EncoderVariant::Pretrained,
            hidden_dim: None,
            encoder_layers: None,
            encoder_heads: None,
            encoder_ffn_dim: None,
            max_len: None,
            pos_dim: None,
            refiner_dim: None,
            refiner_layers: None,
            refiner_heads: None,
            refiner_ffn_dim: None,
            labeled_batch: train.labeled_batch,
            unlabeled_batch: train.unlabeled_batch,
            lr_encoder: opt.lr_encoder,
            lr_head: opt.lr_head,
            weight_decay: opt.weight_decay,
            train_encoder: opt.train_encoder,
            epochs: train.epochs,
            patience: train.patience,
            tagger_epochs: TaggerTrainConfig::default().epochs,
            sentiment_steps: senti.steps,
            sentiment_batch: senti.batch_size,
            sentiment_lr_encoder: senti.optimizer.lr_encoder,
            sentiment_lr_head: senti.optimizer.lr_head,
            t_values: "0.5,0.7,0.9".into(),
            tau_values: "0.5,0.7,0.9".into(),
            seed: 0,
        }
    }
}

/// A config plus the keys that were set explicitly.
#[derive(Debug, Clone, Default)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub explicit: BTreeSet<String>,
}

impl ResolvedConfig {
    /// Sets one key from its textual value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let mut map = match serde_json::to_value(&self.config)? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let slot = map
            .get_mut(&key)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {value:?}"));
        *slot = match slot {
            Value::Bool(_) => Value::Bool(value.parse().map_err(|_| bad("true or false"))?),
            Value::Number(n) if n.is_f64() => Value::from(value.parse::<f64>().map_err(|_| bad("a number"))?),
            Value::Number(_) => Value::from(value.parse::<u64>().map_err(|_| bad("a nonnegative integer"))?),
            Value::Null if value.is_empty() => Value::Null,
            Value::Null if key.ends_with("_dim") || key.ends_with("_layers") || key.ends_with("_heads") || key == "max_len" => {
                Value::from(value.parse::<u64>().map_err(|_| bad("a nonnegative integer"))?)
            }
            _ => Value::String(value.to_string()),
        };
        self.config = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        self.explicit.insert(key);
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{what}: bad number {p:?}")))
        })
        .collect()
}

impl RunConfig {
    /// A small-encoder setup that trains in seconds on one CPU core,
    /// used for the synthetic desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderVariant::Small,
            hidden_dim: Some(32),
            encoder_layers: Some(2),
            encoder_heads: Some(4),
            encoder_ffn_dim: Some(64),
            pos_dim: Some(8),
            refiner_dim: Some(32),
            refiner_layers: Some(1),
            refiner_heads: Some(4),
            refiner_ffn_dim: Some(64),
            lr_encoder: 3e-3,
            lr_head: 3e-3,
            unlabeled_batch: 48,
            epochs: 20,
            patience: 5,
            tagger_epochs: 15,
            sentiment_steps: 300,
            sentiment_batch: 64,
            sentiment_lr_encoder: 3e-3,
            sentiment_lr_head: 3e-3,
            ..Self::default()
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            sentence_threshold: self.sentence_threshold,
            word_threshold: self.word_threshold,
            sentence_mode: self.sentence_mode,
            word_filter: self.word_filter,
            consistency: self.consistency,
            normalize_by_kept: self.normalize_by_kept,
        }
    }

    pub fn perturb(&self) -> PerturbConfig {
        PerturbConfig {
            mask_rate: self.mask_rate,
            synonym_rate: self.synonym_rate,
            mask_symbol: self.mask_symbol.clone(),
            seed: self.seed,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr_encoder: self.lr_encoder,
            lr_head: self.lr_head,
            weight_decay: self.weight_decay,
            train_encoder: self.train_encoder,
            ..AdamWConfig::default()
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let base = EncoderConfig::for_variant(self.encoder);
        EncoderConfig {
            hidden_dim: self.hidden_dim.unwrap_or(base.hidden_dim),
            layers: self.encoder_layers.unwrap_or(base.layers),
            heads: self.encoder_heads.unwrap_or(base.heads),
            ffn_dim: self.encoder_ffn_dim.unwrap_or(base.ffn_dim),
            max_len: self.max_len.unwrap_or(base.max_len),
            ..base
        }
    }

    pub fn model_config(&self) -> ToweConfig {
        let base = match self.encoder {
            EncoderVariant::Pretrained => ToweConfig::full(),
            EncoderVariant::Small => ToweConfig::small(),
        };
        ToweConfig {
            encoder: self.encoder_config(),
            pos_dim: self.pos_dim.unwrap_or(base.pos_dim),
            refiner_dim: self.refiner_dim.unwrap_or(base.refiner_dim),
            refiner_layers: self.refiner_layers.unwrap_or(base.refiner_layers),
            refiner_heads: self.refiner_heads.unwrap_or(base.refiner_heads),
            refiner_ffn_dim: self.refiner_ffn_dim.unwrap_or(base.refiner_ffn_dim),
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model_config(),
            filter: self.filter(),
            perturb: self.perturb(),
            optimizer: self.optimizer(),
            labeled_batch: self.labeled_batch,
            unlabeled_batch: self.unlabeled_batch,
            epochs: self.epochs,
            patience: self.patience,
        }
    }

    pub fn tagger_config(&self) -> TaggerTrainConfig {
        TaggerTrainConfig {
            epochs: self.tagger_epochs,
            batch_size: self.labeled_batch,
            patience: self.patience,
            optimizer: self.optimizer(),
            seed: self.seed,
        }
    }

    pub fn sentiment_config(&self) -> SentimentTrainConfig {
        SentimentTrainConfig {
            steps: self.sentiment_steps,
            batch_size: self.sentiment_batch,
            optimizer: AdamWConfig {
                lr_encoder: self.sentiment_lr_encoder,
                lr_head: self.sentiment_lr_head,
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn grid_values(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((parse_list(&self.t_values, "t_values")?, parse_list(&self.tau_values, "tau_values")?))
    }

    pub fn pseudo_targets_path(&self) -> PathBuf {
        self.pseudo_targets
            .clone()
            .unwrap_or_else(|| self.out_dir.join("pseudo_targets.jsonl"))
    }

    pub fn sentiment_stem(&self) -> PathBuf {
        self.sentiment_ckpt.clone().unwrap_or_else(|| self.out_dir.join("sentiment"))
    }

    pub fn checkpoint_stem(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model"))
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        let (ts, taus) = self.grid_values()?;
        for v in ts.iter().chain(&taus) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Config(format!("grid threshold {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_full_scale_setup() {
        let c = RunConfig::default();
        assert_eq!((c.epochs, c.labeled_batch, c.unlabeled_batch), (50, 16, 96));
        assert_eq!((c.lr_encoder, c.lr_head), (2e-5, 2e-4));
        assert_eq!((c.sentence_threshold, c.word_threshold), (0.9, 0.7));
        assert_eq!((c.sentiment_steps, c.sentiment_batch), (3000, 128));
        assert_eq!(c.sentence_mode, SentenceMode::Senti);
        assert_eq!(c.encoder, EncoderVariant::Pretrained);
        c.validate().unwrap();
    }

    #[test]
    fn file_then_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# comment\nepochs = 7\nsentence_mode = avg\nencoder = small\nhidden_dim = 32\nlabeled = a.jsonl\n").unwrap();
        let mut r = ResolvedConfig::default();
        r.apply_file(&p).unwrap();
        r.set("epochs", "9").unwrap();
        assert_eq!(r.config.epochs, 9);
        assert_eq!(r.config.sentence_mode, SentenceMode::Avg);
        assert_eq!(r.config.encoder_config().hidden_dim, 32);
        assert_eq!(r.config.labeled, Some(PathBuf::from("a.jsonl")));
        assert_eq!(r.config.lr_head, 2e-4);
        assert!(r.explicit.contains("encoder"));
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        let mut r = ResolvedConfig::default();
        assert!(r.set("learning_rate", "1").is_err());
        assert!(r.set("epochs", "-1").is_err());
        assert!(r.set("word_filter", "yes").is_err());
        assert!(r.set("sentence_mode", "sometimes").is_err());
        r.set("sentence_threshold", "1").unwrap();
        assert_eq!(r.config.sentence_threshold, 1.0);
    }

    #[test]
    fn desk_file_matches_desk_preset() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.conf");
        let mut r = ResolvedConfig::default();
        r.apply_file(&p).unwrap();
        assert_eq!(r.config, RunConfig::desk());
        RunConfig::desk().validate().unwrap();
    }
}
