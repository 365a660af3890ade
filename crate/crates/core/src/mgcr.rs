//! Confidence-gated consistency regularization and the joint training loop.
//!
//! Each step draws a labeled batch and an unlabeled batch. The labeled
//! batch gives the usual token-averaged cross-entropy. Each unlabeled
//! sentence is first tagged unperturbed; its argmax labels become fixed
//! targets for a forward pass over a perturbed copy, kept only when the
//! sentence confidence clears `T` and, per token, when the token confidence
//! clears `tau`.
//!
//! Randomness is split into named streams of one run seed:
//! `init` (model weights), `batches.*` (sampling), `perturb` (one draw per
//! unlabeled slot, indexed by `step * unlabeled_batch + j`).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::corpus::{BatchSampler, DatasetSplit, Span, ToweInstance, UnlabeledInstance};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::evaluation::{span_prf, EvalReport, Prf};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{Gradients, ParamStore};
use crate::perturb::{perturb, PerturbConfig, SynonymLexicon};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::sentiment::{sc_senti, SentimentClassifier};
use crate::towe::{PredictionSequence, ToweConfig, ToweModel};

/// Which sentence score gates a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceMode {
    /// Sentiment-attention-weighted confidence.
    Senti,
    /// Plain mean confidence.
    Avg,
    /// Every sentence passes.
    Off,
}

impl std::str::FromStr for SentenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "senti" => Ok(Self::Senti),
            "avg" => Ok(Self::Avg),
            "off" => Ok(Self::Off),
            other => Err(Error::Config(format!("unknown sentence mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// `T`: a sentence passes when its score is strictly greater.
    pub sentence_threshold: f64,
    /// `tau`: a token passes when its confidence is strictly greater.
    pub word_threshold: f64,
    pub sentence_mode: SentenceMode,
    pub word_filter: bool,
    /// When false the unlabeled data is ignored entirely.
    pub consistency: bool,
    /// Divide each sentence's loss by its kept-token count instead of its
    /// length.
    pub normalize_by_kept: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sentence_threshold: 0.9,
            word_threshold: 0.7,
            sentence_mode: SentenceMode::Senti,
            word_filter: true,
            consistency: true,
            normalize_by_kept: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("T", self.sentence_threshold), ("tau", self.word_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn supervised_only() -> Self {
        Self {
            consistency: false,
            ..Self::default()
        }
    }

    fn needs_attention(&self) -> bool {
        self.consistency && self.sentence_mode == SentenceMode::Senti
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport<F> {
    pub token_confidences: Vec<F>,
    pub sc_avg: F,
    pub sc_senti: Option<F>,
    pub sentence_pass: bool,
    pub token_pass: Vec<bool>,
}

impl<F: Scalar> ConfidenceReport<F> {
    pub fn tokens_kept(&self) -> usize {
        self.token_pass.iter().filter(|&&b| b).count()
    }

    /// The score compared against `T`.
    pub fn selected_score(&self) -> F {
        self.sc_senti.unwrap_or(self.sc_avg)
    }
}

/// `(sc_avg, sc_senti)`; `alpha` must be given exactly when `mode` is
/// [`SentenceMode::Senti`].
pub fn sentence_confidence<F: Scalar>(
    pred: &PredictionSequence<F>,
    alpha: Option<&[F]>,
    mode: SentenceMode,
) -> Result<(F, Option<F>)> {
    let c = &pred.confidences;
    if c.is_empty() {
        return Err(Error::Empty("prediction sequence".into()));
    }
    let avg = c.iter().copied().sum::<F>() / F::of(c.len() as f64);
    match (mode, alpha) {
        (SentenceMode::Senti, Some(a)) => Ok((avg, Some(sc_senti(a, c)?))),
        (SentenceMode::Senti, None) => Err(Error::Validation("sentiment mode needs attention weights".into())),
        (_, None) => Ok((avg, None)),
        (_, Some(_)) => Err(Error::Validation("attention weights given outside sentiment mode".into())),
    }
}

/// Applies both gates to an unperturbed prediction.
pub fn confidence_report<F: Scalar>(
    pred: &PredictionSequence<F>,
    alpha: Option<&[F]>,
    cfg: &FilterConfig,
) -> Result<ConfidenceReport<F>> {
    let (sc_avg, sc_senti) = sentence_confidence(pred, alpha, cfg.sentence_mode)?;
    let t = F::of(cfg.sentence_threshold);
    let sentence_pass = match cfg.sentence_mode {
        SentenceMode::Off => true,
        SentenceMode::Avg => sc_avg > t,
        SentenceMode::Senti => sc_senti.expect("present in senti mode") > t,
    };
    let tau = F::of(cfg.word_threshold);
    let token_pass = pred
        .confidences
        .iter()
        .map(|&c| !cfg.word_filter || c > tau)
        .collect();
    Ok(ConfidenceReport {
        token_confidences: pred.confidences.clone(),
        sc_avg,
        sc_senti,
        sentence_pass,
        token_pass,
    })
}

/// One unlabeled sentence as seen by the consistency term.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyItem<'a, F> {
    pub tokens: &'a [String],
    pub perturbed: &'a [String],
    pub target: Span,
    pub alpha: Option<&'a [F]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStats {
    pub sentences_seen: usize,
    pub sentences_kept: usize,
    pub tokens_kept: usize,
    /// Gate score of every sentence seen, in batch order.
    pub scores: Vec<f64>,
}

/// Batch-mean consistency loss. When `grads` is given, the gradient of the
/// perturbed passes is accumulated into it; pseudo-labels are constants.
pub fn consistency_loss<F: Scalar>(
    model: &ToweModel<F>,
    items: &[ConsistencyItem<'_, F>],
    cfg: &FilterConfig,
    mut grads: Option<&mut Gradients<F>>,
) -> Result<(F, ConsistencyStats)> {
    let mut stats = ConsistencyStats::default();
    if !cfg.consistency || items.is_empty() {
        return Ok((F::zero(), stats));
    }
    let batch = F::of(items.len() as f64);
    let mut total = F::zero();
    for item in items {
        let n = item.tokens.len();
        if item.perturbed.len() != n {
            return Err(Error::LengthMismatch(n, item.perturbed.len()));
        }
        let pred = model.forward(item.tokens, item.target)?;
        let report = confidence_report(&pred, item.alpha, cfg)?;
        stats.sentences_seen += 1;
        stats.scores.push(report.selected_score().as_f64());
        if !report.sentence_pass {
            continue;
        }
        let kept = report.tokens_kept();
        stats.sentences_kept += 1;
        stats.tokens_kept += kept;
        if kept == 0 {
            continue;
        }
        let denom = if cfg.normalize_by_kept { kept } else { n };
        let w = F::one() / (F::of(denom as f64) * batch);
        let weights: Vec<F> = report
            .token_pass
            .iter()
            .map(|&p| if p { w } else { F::zero() })
            .collect();
        let targets: Vec<usize> = pred.argmax_labels.iter().map(|t| t.index()).collect();
        let mut g = Graph::new(&model.params);
        let logits = model.logits(&mut g, item.perturbed, item.target)?;
        let lp = g.log_softmax(logits);
        let loss = g.weighted_nll(lp, &targets, &weights);
        total += g.value(loss).item();
        if let Some(grads) = grads.as_deref_mut() {
            g.backward(loss, grads);
        }
    }
    Ok((total, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ToweConfig,
    pub filter: FilterConfig,
    pub perturb: PerturbConfig,
    pub optimizer: AdamWConfig,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub epochs: usize,
    /// Validation epochs without improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ToweConfig::full(),
            filter: FilterConfig::default(),
            perturb: PerturbConfig::default(),
            optimizer: AdamWConfig::default(),
            labeled_batch: 16,
            unlabeled_batch: 96,
            epochs: 50,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.perturb.validate()?;
        if self.labeled_batch == 0 {
            return Err(Error::Config("labeled batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch budget must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs besides the data and the config.
#[derive(Debug, Clone, Copy)]
pub struct Components<'a, F> {
    pub lexicon: &'a SynonymLexicon,
    /// Required when the sentence gate uses sentiment attention.
    pub sentiment: Option<&'a SentimentClassifier<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Counts over ten equal bins of [0, 1].
    pub histogram: [usize; 10],
}

impl ScoreSummary {
    fn of(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let mut histogram = [0; 10];
        for &s in scores {
            histogram[((s * 10.0) as usize).min(9)] += 1;
        }
        Some(Self {
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: usize,
        epoch: usize,
        l_s: f64,
        l_c: f64,
        sentences_seen: usize,
        sentences_kept: usize,
        tokens_kept: usize,
        sc: Option<ScoreSummary>,
    },
    Epoch {
        epoch: usize,
        precision: f64,
        recall: f64,
        f1: f64,
    },
}

pub fn log_to_jsonl(log: &[LogRecord]) -> String {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r).expect("log records serialize"));
        s.push('\n');
    }
    s
}

/// Everything that changes during training. Cloning it and later calling
/// [`Trainer::restore`] resumes the identical trajectory.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub model: ToweModel<F>,
    pub optimizer: AdamW<F>,
    pub step: usize,
    pub epochs_done: usize,
    pub best_f1: f64,
    pub best_params: ParamStore<F>,
    pub stale_epochs: usize,
    pub stopped: bool,
    sampler: BatchSampler,
    pub log: Vec<LogRecord>,
}

pub struct Trainer<'a, F: Scalar> {
    split: &'a DatasetSplit,
    unlabeled: &'a [UnlabeledInstance],
    lexicon: &'a SynonymLexicon,
    alphas: Vec<Option<Vec<F>>>,
    cfg: TrainConfig,
    perturb: PerturbConfig,
    state: TrainState<F>,
}

impl<'a, F: Scalar> Trainer<'a, F> {
    pub fn new(
        split: &'a DatasetSplit,
        unlabeled: &'a [UnlabeledInstance],
        vocab: Vocab,
        components: Components<'a, F>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if split.train.is_empty() {
            return Err(Error::Empty("labeled training set".into()));
        }
        let alphas = if cfg.filter.needs_attention() {
            let clf = components
                .sentiment
                .ok_or_else(|| Error::Config("sentiment gate needs a sentiment classifier".into()))?;
            attention_cache(clf, unlabeled)?
        } else {
            vec![None; unlabeled.len()]
        };
        let mut model_cfg = cfg.model.clone();
        model_cfg.init_seed = derive_seed(seed, "init", 0);
        let model = ToweModel::new(model_cfg, vocab);
        let optimizer = AdamW::new(&model.params, cfg.optimizer);
        let n_unlabeled = if cfg.filter.consistency { unlabeled.len() } else { 0 };
        let sampler = BatchSampler::new(split.train.len(), n_unlabeled, cfg.labeled_batch, cfg.unlabeled_batch, seed);
        let perturb = PerturbConfig {
            seed: derive_seed(seed, "perturb", 0),
            ..cfg.perturb.clone()
        };
        Ok(Self {
            split,
            unlabeled,
            lexicon: components.lexicon,
            alphas,
            cfg: cfg.clone(),
            perturb,
            state: TrainState {
                best_params: model.params.clone(),
                model,
                optimizer,
                step: 0,
                epochs_done: 0,
                best_f1: f64::NEG_INFINITY,
                stale_epochs: 0,
                stopped: false,
                sampler,
                log: Vec::new(),
            },
        })
    }

    pub fn state(&self) -> &TrainState<F> {
        &self.state
    }

    pub fn restore(&mut self, state: TrainState<F>) {
        self.state = state;
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.state.sampler.steps_per_epoch()
    }

    /// One optimizer update. Returns `(L_s, L_c)`.
    pub fn step(&mut self) -> Result<(F, F)> {
        let batch = self.state.sampler.next().expect("sampler is endless");
        let st = &mut self.state;
        let labeled: Vec<&ToweInstance> = batch.labeled.iter().map(|&i| &self.split.train[i]).collect();
        let mut grads = Gradients::new(&st.model.params);
        let l_s = st.model.supervised_loss_grad(&labeled, &mut grads)?;

        let ub = self.cfg.unlabeled_batch as u64;
        let perturbed: Vec<UnlabeledInstance> = batch
            .unlabeled
            .iter()
            .enumerate()
            .map(|(j, &i)| perturb(&self.unlabeled[i], &self.perturb, self.lexicon, st.step as u64 * ub + j as u64))
            .collect();
        let items: Vec<ConsistencyItem<'_, F>> = batch
            .unlabeled
            .iter()
            .zip(&perturbed)
            .map(|(&i, p)| ConsistencyItem {
                tokens: &self.unlabeled[i].tokens,
                perturbed: &p.tokens,
                target: self.unlabeled[i].target_span,
                alpha: self.alphas[i].as_deref(),
            })
            .collect();
        let (l_c, stats) = consistency_loss(&st.model, &items, &self.cfg.filter, Some(&mut grads))?;

        if !(l_s + l_c).is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                step: st.step,
                detail: divergence_dump(l_s, l_c, &labeled, &items),
            });
        }
        st.optimizer.step(&mut st.model.params, &grads);
        st.log.push(LogRecord::Step {
            step: st.step,
            epoch: st.epochs_done,
            l_s: l_s.as_f64(),
            l_c: l_c.as_f64(),
            sentences_seen: stats.sentences_seen,
            sentences_kept: stats.sentences_kept,
            tokens_kept: stats.tokens_kept,
            sc: ScoreSummary::of(&stats.scores),
        });
        st.step += 1;
        Ok((l_s, l_c))
    }

    /// One pass over the labeled pool followed by validation. Returns the
    /// validation scores.
    pub fn run_epoch(&mut self) -> Result<Prf> {
        for _ in 0..self.steps_per_epoch() {
            self.step()?;
        }
        let prf = validation_prf(&self.state.model, &self.split.valid)?;
        let st = &mut self.state;
        st.log.push(LogRecord::Epoch {
            epoch: st.epochs_done,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        });
        log::info!("epoch {}: valid F1 {:.4}", st.epochs_done, prf.f1);
        st.epochs_done += 1;
        if prf.f1 > st.best_f1 {
            st.best_f1 = prf.f1;
            st.best_params = st.model.params.clone();
            st.stale_epochs = 0;
        } else {
            st.stale_epochs += 1;
            if st.stale_epochs >= self.cfg.patience {
                st.stopped = true;
            }
        }
        if st.epochs_done >= self.cfg.epochs {
            st.stopped = true;
        }
        Ok(prf)
    }

    /// Trains to the epoch budget or early stop and returns the model with
    /// the best validation F1, plus the log.
    pub fn run(mut self) -> Result<(ToweModel<F>, Vec<LogRecord>)> {
        while !self.state.stopped {
            self.run_epoch()?;
        }
        let mut st = self.state;
        st.model.params = st.best_params;
        Ok((st.model, st.log))
    }
}

fn validation_prf<F: Scalar>(model: &ToweModel<F>, valid: &[ToweInstance]) -> Result<Prf> {
    let pairs = valid
        .iter()
        .map(|inst| Ok((inst.opinion_spans(), model.predict_spans(inst.tokens(), inst.target())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(span_prf(pairs.iter().map(|(g, p)| (g, p))))
}

fn divergence_dump<F: Scalar>(l_s: F, l_c: F, labeled: &[&ToweInstance], items: &[ConsistencyItem<'_, F>]) -> String {
    let dump = serde_json::json!({
        "l_s": l_s.as_f64(),
        "l_c": l_c.as_f64(),
        "labeled": labeled.iter().map(|i| serde_json::json!({
            "tokens": i.tokens(),
            "target": i.target(),
            "labels": i.labels(),
        })).collect::<Vec<_>>(),
        "unlabeled": items.iter().map(|i| serde_json::json!({
            "tokens": i.tokens,
            "perturbed": i.perturbed,
            "target": i.target,
        })).collect::<Vec<_>>(),
    });
    dump.to_string()
}

/// Attention weights for each unlabeled sentence, computed once. Instances
/// that share a sentence share the computation.
pub fn attention_cache<F: Scalar>(
    clf: &SentimentClassifier<F>,
    unlabeled: &[UnlabeledInstance],
) -> Result<Vec<Option<Vec<F>>>> {
    let mut out: Vec<Option<Vec<F>>> = Vec::with_capacity(unlabeled.len());
    for (i, inst) in unlabeled.iter().enumerate() {
        if i > 0 && unlabeled[i - 1].tokens == inst.tokens {
            out.push(out[i - 1].clone());
        } else {
            out.push(Some(clf.attention_scores(&inst.tokens)?));
        }
    }
    Ok(out)
}

/// Trains one model. Deterministic given `seed`.
pub fn train_mgcr<F: Scalar>(
    split: &DatasetSplit,
    unlabeled: &[UnlabeledInstance],
    vocab: Vocab,
    components: Components<'_, F>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ToweModel<F>, Vec<LogRecord>)> {
    Trainer::new(split, unlabeled, vocab, components, cfg, seed)?.run()
}

/// Counts of unlabeled sentences and tokens passing the gates of `cfg`
/// under a fixed model.
pub fn count_retained<F: Scalar>(
    model: &ToweModel<F>,
    unlabeled: &[UnlabeledInstance],
    alphas: &[Option<Vec<F>>],
    cfg: &FilterConfig,
) -> Result<(usize, usize)> {
    let (mut sentences, mut tokens) = (0, 0);
    for (inst, alpha) in unlabeled.iter().zip(alphas) {
        let pred = model.forward(&inst.tokens, inst.target_span)?;
        let report = confidence_report(&pred, alpha.as_deref(), cfg)?;
        if report.sentence_pass {
            sentences += 1;
            tokens += report.tokens_kept();
        }
    }
    Ok((sentences, tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub t: f64,
    pub tau: f64,
    pub valid: Prf,
    pub test: Option<EvalReport>,
    /// Sentences kept by the gates over the whole run, summed from the log.
    pub logged_sentences_kept: usize,
    /// Sentences (tokens) passing this cell's gates under the shared
    /// reference model.
    pub reference_sentences_kept: usize,
    pub reference_tokens_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub t_values: Vec<f64>,
    pub tau_values: Vec<f64>,
    pub cells: Vec<GridCell>,
}

pub fn cell_key(t: f64, tau: f64) -> String {
    format!("T={t},tau={tau}")
}

impl GridResult {
    pub fn cell(&self, t: f64, tau: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.t == t && c.tau == tau)
    }

    pub fn best(&self) -> Option<&GridCell> {
        self.cells
            .iter()
            .max_by(|a, b| cell_score(a).total_cmp(&cell_score(b)))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let cells: serde_json::Map<String, serde_json::Value> = self
            .cells
            .iter()
            .map(|c| (cell_key(c.t, c.tau), serde_json::to_value(c).expect("cells serialize")))
            .collect();
        serde_json::json!({
            "t_values": self.t_values,
            "tau_values": self.tau_values,
            "cells": cells,
        })
    }

    /// F1 (test when available, else validation) with T down the rows and
    /// tau across, then the reference retained-sentence counts.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let header = |s: &mut String, title: &str| {
            let _ = write!(s, "{title:>8}");
            for tau in &self.tau_values {
                let _ = write!(s, " {:>9}", format!("tau={tau}"));
            }
            let _ = writeln!(s);
        };
        header(&mut s, "F1");
        for &t in &self.t_values {
            let _ = write!(s, "{:>8}", format!("T={t}"));
            for &tau in &self.tau_values {
                match self.cell(t, tau) {
                    Some(c) => {
                        let _ = write!(s, " {:>9.2}", 100.0 * cell_score(c));
                    }
                    None => {
                        let _ = write!(s, " {:>9}", "-");
                    }
                }
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s);
        header(&mut s, "kept");
        for &t in &self.t_values {
            let _ = write!(s, "{:>8}", format!("T={t}"));
            for &tau in &self.tau_values {
                let n = self.cell(t, tau).map_or(0, |c| c.reference_sentences_kept);
                let _ = write!(s, " {n:>9}");
            }
            let _ = writeln!(s);
        }
        s
    }
}

fn cell_score(c: &GridCell) -> f64 {
    c.test.as_ref().map_or(c.valid.f1, |r| r.f1)
}

/// Data shared by every grid cell.
#[derive(Debug, Clone, Copy)]
pub struct GridInputs<'a, F> {
    pub split: &'a DatasetSplit,
    pub unlabeled: &'a [UnlabeledInstance],
    pub test: Option<&'a [ToweInstance]>,
    pub vocab: &'a Vocab,
    pub components: Components<'a, F>,
    pub config: &'a TrainConfig,
}

/// One full training run per `(T, tau)` cell. Retained counts for every
/// cell are recounted under a single reference model (supervised-only,
/// same seed), so they are comparable across cells.
pub fn threshold_grid<F: Scalar>(
    inputs: &GridInputs<'_, F>,
    t_values: &[f64],
    tau_values: &[f64],
    seed: u64,
) -> Result<GridResult> {
    if t_values.is_empty() || tau_values.is_empty() {
        return Err(Error::Empty("threshold grid values".into()));
    }
    let sup_cfg = TrainConfig {
        filter: FilterConfig::supervised_only(),
        ..inputs.config.clone()
    };
    let (reference, _) = train_mgcr(inputs.split, &[], inputs.vocab.clone(), inputs.components, &sup_cfg, seed)?;
    let alphas = if inputs.config.filter.needs_attention() {
        let clf = inputs
            .components
            .sentiment
            .ok_or_else(|| Error::Config("sentiment gate needs a sentiment classifier".into()))?;
        attention_cache(clf, inputs.unlabeled)?
    } else {
        vec![None; inputs.unlabeled.len()]
    };
    let mut cells = Vec::new();
    for &t in t_values {
        for &tau in tau_values {
            let filter = FilterConfig {
                sentence_threshold: t,
                word_threshold: tau,
                ..inputs.config.filter
            };
            let cfg = TrainConfig {
                filter,
                ..inputs.config.clone()
            };
            let (model, log) = train_mgcr(inputs.split, inputs.unlabeled, inputs.vocab.clone(), inputs.components, &cfg, seed)?;
            let valid = validation_prf(&model, &inputs.split.valid)?;
            let test = inputs.test.map(|t| crate::evaluation::evaluate(&model, t)).transpose()?;
            let logged_sentences_kept = log
                .iter()
                .map(|r| match r {
                    LogRecord::Step { sentences_kept, .. } => *sentences_kept,
                    LogRecord::Epoch { .. } => 0,
                })
                .sum();
            let (rs, rt) = count_retained(&reference, inputs.unlabeled, &alphas, &filter)?;
            log::info!("grid cell {}: valid F1 {:.4}", cell_key(t, tau), valid.f1);
            cells.push(GridCell {
                t,
                tau,
                valid,
                test,
                logged_sentences_kept,
                reference_sentences_kept: rs,
                reference_tokens_kept: rt,
            });
        }
    }
    Ok(GridResult {
        t_values: t_values.to_vec(),
        tau_values: tau_values.to_vec(),
        cells,
    })
}
