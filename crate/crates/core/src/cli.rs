//! The `mgcr` command line: corpus synthesis, the three training stages,
//! evaluation and threshold sweeps.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{ResolvedConfig, RunConfig};
use crate::corpus::{load_labeled, load_polarity, load_raw, split_train_valid, write_file, ToweInstance, UnlabeledInstance};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::mgcr::{log_to_jsonl, threshold_grid, train_mgcr, Components, GridInputs, SentenceMode};
use crate::perturb::SynonymLexicon;
use crate::sentiment::{pretrain_sentiment, SentimentClassifier};
use crate::synth::{generate, write_corpus, SynthConfig};
use crate::target_labeler::{pseudo_label_targets, read_cache, train_target_tagger, write_cache, CacheHeader};
use crate::towe::ToweModel;

/// Precision used by every command.
pub type Real = f32;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const GRID_FILE: &str = "grid.json";
pub const MODEL_STEM: &str = "model";
pub const TAGGER_STEM: &str = "tagger";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mgcr", version, about = "Semi-supervised target-oriented opinion word extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled/raw/test/sentiment corpus.
    Synth {
        /// Number of labeled sentences (at least 50).
        #[arg(long, default_value_t = 500)]
        size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the target tagger and attach pseudo targets to raw sentences.
    PseudoTargets {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the attention sentiment classifier.
    TrainSentiment {
        #[command(flatten)]
        common: Common,
    },
    /// Train the opinion tagger with consistency regularization.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablation: Ablation,
    },
    /// Evaluate a trained checkpoint on a labeled test file.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// One training run per (T, tau) pair.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablation: Ablation,
        /// Comma-separated sentence thresholds.
        #[arg(long)]
        t_values: Option<String>,
        /// Comma-separated word thresholds.
        #[arg(long)]
        tau_values: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub sentiment_corpus: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub pseudo_targets: Option<PathBuf>,
    #[arg(long)]
    pub sentiment_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `pretrained` or `small`.
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args, Default, Clone, Copy)]
pub struct Ablation {
    /// Gate sentences on mean confidence instead of sentiment attention.
    #[arg(long)]
    pub no_sentiment: bool,
    /// Let every sentence through the sentence gate.
    #[arg(long)]
    pub no_sentence_filter: bool,
    /// Let every token through the word gate.
    #[arg(long)]
    pub no_word_filter: bool,
    /// Ignore the unlabeled data.
    #[arg(long)]
    pub supervised_only: bool,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or missing input; exit code 2.
    Usage(String),
    /// Anything else; exit code 1.
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl Common {
    fn resolve(&self) -> CliResult<ResolvedConfig> {
        let mut r = ResolvedConfig::default();
        if let Some(p) = &self.config {
            if !p.exists() {
                return Err(CliError::Usage(format!("config file not found: {}", p.display())));
            }
            r.apply_file(p).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("out_dir", path(&self.out_dir)),
            ("seed", self.seed.map(|s| s.to_string())),
            ("labeled", path(&self.labeled)),
            ("raw", path(&self.raw)),
            ("lexicon", path(&self.lexicon)),
            ("sentiment_corpus", path(&self.sentiment_corpus)),
            ("test", path(&self.test)),
            ("pseudo_targets", path(&self.pseudo_targets)),
            ("sentiment_ckpt", path(&self.sentiment_ckpt)),
            ("checkpoint", path(&self.checkpoint)),
            ("encoder", self.encoder.clone()),
            ("epochs", self.epochs.map(|e| e.to_string())),
        ];
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            r.set(k, v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        for (k, v) in flags {
            if let Some(v) = v {
                r.set(k, &v).map_err(|e| CliError::Usage(e.to_string()))?;
            }
        }
        Ok(r)
    }
}

impl Ablation {
    fn apply(&self, r: &mut ResolvedConfig) -> CliResult<()> {
        let others = self.no_sentiment || self.no_sentence_filter || self.no_word_filter;
        if self.supervised_only && others {
            return Err(CliError::Usage(
                "--supervised-only cannot be combined with other ablation flags".into(),
            ));
        }
        if self.no_sentiment && self.no_sentence_filter {
            return Err(CliError::Usage(
                "--no-sentiment and --no-sentence-filter are mutually exclusive".into(),
            ));
        }
        let c = &mut r.config;
        if self.supervised_only {
            c.consistency = false;
        }
        if self.no_sentiment {
            c.sentence_mode = SentenceMode::Avg;
        }
        if self.no_sentence_filter {
            c.sentence_mode = SentenceMode::Off;
        }
        if self.no_word_filter {
            c.word_filter = false;
        }
        Ok(())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth { size, common } => cmd_synth(&common.resolve()?.config, size),
        Command::PseudoTargets { common } => cmd_pseudo_targets(&checked(common.resolve()?)?),
        Command::TrainSentiment { common } => cmd_train_sentiment(&checked(common.resolve()?)?),
        Command::Train { common, ablation } => {
            let mut r = common.resolve()?;
            ablation.apply(&mut r)?;
            cmd_train(&checked(r)?)
        }
        Command::Eval { common } => cmd_eval(&checked(common.resolve()?)?),
        Command::Grid {
            common,
            ablation,
            t_values,
            tau_values,
        } => {
            let mut r = common.resolve()?;
            ablation.apply(&mut r)?;
            if let Some(t) = t_values {
                r.set("t_values", &t)?;
            }
            if let Some(t) = tau_values {
                r.set("tau_values", &t)?;
            }
            cmd_grid(&checked(r)?)
        }
    }
}

fn checked(r: ResolvedConfig) -> CliResult<ResolvedConfig> {
    r.config.validate()?;
    Ok(r)
}

/// An input path that must be configured and exist.
fn require(path: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Usage(format!("missing required input `{key}`")))?;
    require_file(&p)?;
    Ok(p)
}

fn require_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", p.display())))
    }
}

fn require_checkpoint(stem: &Path) -> CliResult<()> {
    require_file(&checkpoint::sidecar_path(stem))?;
    require_file(&checkpoint::blob_path(stem))
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    /// The resolved configuration with the output directory left out, so
    /// runs into different directories compare equal.
    config: serde_json::Value,
    inputs: BTreeMap<String, InputRecord>,
}

fn write_manifest(cfg: &RunConfig, command: &str, inputs: &[(&str, &Path)]) -> CliResult<()> {
    let mut config = serde_json::to_value(cfg).map_err(Error::from)?;
    if let Some(m) = config.as_object_mut() {
        m.remove("out_dir");
    }
    let mut records = BTreeMap::new();
    for &(key, path) in inputs {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        records.insert(
            key.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: checkpoint::sha256_hex(&bytes),
            },
        );
    }
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config,
        inputs: records,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
    json.push(b'\n');
    write_file(&cfg.out_dir.join(MANIFEST_FILE), &json)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    write_file(path, &json)
}

fn say(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn cmd_synth(cfg: &RunConfig, size: usize) -> CliResult<()> {
    let corpus = generate(&SynthConfig::new(size, cfg.seed))?;
    write_corpus(&corpus, &cfg.out_dir)?;
    write_manifest(cfg, "synth", &[])?;
    say(&format!(
        "wrote {} labeled instances, {} raw sentences, {} test instances, {} sentiment sentences to {}\n",
        corpus.train.len(),
        corpus.raw.len(),
        corpus.test.len(),
        corpus.sentiment.len(),
        cfg.out_dir.display()
    ));
    Ok(())
}

/// Vocabulary over every sentence the models will see during training.
pub fn training_vocab<'a>(
    cfg: &RunConfig,
    labeled: &'a [ToweInstance],
    unlabeled: impl IntoIterator<Item = &'a [String]>,
    lexicon: Option<&'a SynonymLexicon>,
) -> Vocab {
    let mut words: Vec<&str> = labeled
        .iter()
        .flat_map(|i| i.tokens().iter().map(String::as_str))
        .collect();
    words.extend(unlabeled.into_iter().flat_map(|t| t.iter().map(String::as_str)));
    if let Some(lex) = lexicon {
        for w in lex.words() {
            words.push(w);
            words.extend(lex.get(w).unwrap_or_default().iter().map(String::as_str));
        }
    }
    Vocab::for_encoder(&cfg.encoder_config(), words, &cfg.mask_symbol)
}

fn cmd_pseudo_targets(r: &ResolvedConfig) -> CliResult<()> {
    let cfg = &r.config;
    let labeled_path = require(&cfg.labeled, "labeled")?;
    let raw_path = require(&cfg.raw, "raw")?;
    let labeled = load_labeled(&labeled_path)?;
    let raw = load_raw(&raw_path)?;
    let split = split_train_valid(&labeled, cfg.seed)?;
    let vocab = training_vocab(cfg, &labeled, raw.iter().map(Vec::as_slice), None);
    let tagger = train_target_tagger::<Real>(&split.train, &split.valid, cfg.encoder_config(), vocab, &cfg.tagger_config())?;
    tagger.save(&cfg.out_dir.join(TAGGER_STEM))?;
    let labels = pseudo_label_targets(&tagger, &raw)?;
    let header = CacheHeader {
        tagger_hash: tagger.checkpoint_hash(),
        version: CACHE_VERSION,
        kept_sentences: labels.kept_sentences,
        dropped_no_target: labels.dropped_no_target,
        dropped_too_long: labels.dropped_too_long,
    };
    let cache = cfg.pseudo_targets_path();
    write_cache(&cache, &header, &labels.instances)?;
    write_manifest(cfg, "pseudo-targets", &[("labeled", &labeled_path), ("raw", &raw_path)])?;
    say(&format!(
        "kept {} sentences ({} instances); dropped {} without targets, {} too long\nwrote {}\n",
        labels.kept_sentences,
        labels.instances.len(),
        labels.dropped_no_target,
        labels.dropped_too_long,
        cache.display()
    ));
    Ok(())
}

fn cmd_train_sentiment(r: &ResolvedConfig) -> CliResult<()> {
    let cfg = &r.config;
    let corpus_path = require(&cfg.sentiment_corpus, "sentiment_corpus")?;
    let corpus = load_polarity(&corpus_path)?;
    let vocab = Vocab::for_encoder(
        &cfg.encoder_config(),
        corpus.iter().flat_map(|e| e.tokens.iter().map(String::as_str)),
        &cfg.mask_symbol,
    );
    let clf = pretrain_sentiment::<Real>(&corpus, cfg.encoder_config(), vocab, &cfg.sentiment_config())?;
    let stem = cfg.sentiment_stem();
    clf.save(&stem)?;
    let acc = clf.accuracy(&corpus)?;
    write_manifest(cfg, "train-sentiment", &[("sentiment_corpus", &corpus_path)])?;
    say(&format!("training accuracy {:.4}\nwrote {}\n", acc, checkpoint::blob_path(&stem).display()));
    Ok(())
}

/// Everything `train` and `grid` need, loaded and checked.
struct TrainInputs {
    labeled: Vec<ToweInstance>,
    unlabeled: Vec<UnlabeledInstance>,
    lexicon: SynonymLexicon,
    sentiment: Option<SentimentClassifier<Real>>,
    files: Vec<(&'static str, PathBuf)>,
}

fn load_train_inputs(cfg: &RunConfig) -> CliResult<TrainInputs> {
    let labeled_path = require(&cfg.labeled, "labeled")?;
    let mut files = vec![("labeled", labeled_path.clone())];
    let labeled = load_labeled(&labeled_path)?;
    let (mut unlabeled, mut lexicon, mut sentiment) = (Vec::new(), SynonymLexicon::new(), None);
    if cfg.consistency {
        let cache = cfg.pseudo_targets_path();
        require_file(&cache)?;
        let lex_path = require(&cfg.lexicon, "lexicon")?;
        unlabeled = read_cache(&cache)?.1;
        lexicon = SynonymLexicon::load(&lex_path)?;
        files.push(("pseudo_targets", cache));
        files.push(("lexicon", lex_path));
        if cfg.sentence_mode == SentenceMode::Senti {
            let stem = cfg.sentiment_stem();
            require_checkpoint(&stem)?;
            sentiment = Some(SentimentClassifier::<Real>::load(&stem)?);
            files.push(("sentiment_ckpt", checkpoint::blob_path(&stem)));
        }
    }
    if let Some(t) = &cfg.test {
        require_file(t)?;
    }
    Ok(TrainInputs {
        labeled,
        unlabeled,
        lexicon,
        sentiment,
        files,
    })
}

fn manifest_inputs<'a>(files: &'a [(&'static str, PathBuf)]) -> Vec<(&'static str, &'a Path)> {
    files.iter().map(|(k, p)| (*k, p.as_path())).collect()
}

fn cmd_train(r: &ResolvedConfig) -> CliResult<()> {
    let cfg = &r.config;
    let inputs = load_train_inputs(cfg)?;
    let split = split_train_valid(&inputs.labeled, cfg.seed)?;
    let vocab = training_vocab(
        cfg,
        &inputs.labeled,
        inputs.unlabeled.iter().map(|u| u.tokens.as_slice()),
        cfg.consistency.then_some(&inputs.lexicon),
    );
    let components = Components {
        lexicon: &inputs.lexicon,
        sentiment: inputs.sentiment.as_ref(),
    };
    let (model, log) = train_mgcr(&split, &inputs.unlabeled, vocab, components, &cfg.train_config(), cfg.seed)?;
    let stem = cfg.out_dir.join(MODEL_STEM);
    model.save(&stem)?;
    write_file(&cfg.out_dir.join(TRAIN_LOG_FILE), log_to_jsonl(&log).as_bytes())?;
    write_manifest(cfg, "train", &manifest_inputs(&inputs.files))?;
    let best = log
        .iter()
        .filter_map(|r| match r {
            crate::mgcr::LogRecord::Epoch { f1, .. } => Some(*f1),
            _ => None,
        })
        .fold(0.0, f64::max);
    say(&format!(
        "best validation F1 {:.2}\nwrote {}\n",
        100.0 * best,
        checkpoint::blob_path(&stem).display()
    ));
    Ok(())
}

fn cmd_eval(r: &ResolvedConfig) -> CliResult<()> {
    let cfg = &r.config;
    let test_path = require(&cfg.test, "test")?;
    let stem = cfg.checkpoint_stem();
    require_checkpoint(&stem)?;
    let sidecar = checkpoint::read_sidecar(&stem)?;
    if r.explicit.contains("encoder") && sidecar.variant != cfg.encoder {
        return Err(CliError::Runtime(Error::Checkpoint(format!(
            "checkpoint was trained with the {} encoder (vocab hash {}), but the {} encoder is configured",
            sidecar.variant, sidecar.vocab_hash, cfg.encoder
        ))));
    }
    let (model, _) = ToweModel::<Real>::load(&stem)?;
    let test = load_labeled(&test_path)?;
    let report = evaluate(&model, &test)?;
    write_json(&cfg.out_dir.join(EVAL_FILE), &report)?;
    write_manifest(cfg, "eval", &[("test", &test_path), ("checkpoint", &checkpoint::blob_path(&stem))])?;
    say(&report.to_table());
    Ok(())
}

fn cmd_grid(r: &ResolvedConfig) -> CliResult<()> {
    let cfg = &r.config;
    let inputs = load_train_inputs(cfg)?;
    if !cfg.consistency {
        return Err(CliError::Usage("a threshold grid needs the consistency term".into()));
    }
    let test = cfg.test.as_deref().map(load_labeled).transpose()?;
    let split = split_train_valid(&inputs.labeled, cfg.seed)?;
    let vocab = training_vocab(
        cfg,
        &inputs.labeled,
        inputs.unlabeled.iter().map(|u| u.tokens.as_slice()),
        Some(&inputs.lexicon),
    );
    let (ts, taus) = cfg.grid_values()?;
    if ts.is_empty() || taus.is_empty() {
        return Err(CliError::Usage("t_values and tau_values must be nonempty".into()));
    }
    let train_cfg = cfg.train_config();
    let grid = threshold_grid(
        &GridInputs {
            split: &split,
            unlabeled: &inputs.unlabeled,
            test: test.as_deref(),
            vocab: &vocab,
            components: Components {
                lexicon: &inputs.lexicon,
                sentiment: inputs.sentiment.as_ref(),
            },
            config: &train_cfg,
        },
        &ts,
        &taus,
        cfg.seed,
    )?;
    write_json(&cfg.out_dir.join(GRID_FILE), &grid.to_json())?;
    let mut files = inputs.files.clone();
    if let Some(t) = &cfg.test {
        files.push(("test", t.clone()));
    }
    write_manifest(cfg, "grid", &manifest_inputs(&files))?;
    say(&grid.to_table());
    Ok(())
}
