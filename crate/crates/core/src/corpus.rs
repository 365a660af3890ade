//! Data model, BIO coding, file formats, dataset splitting and batch
//! sampling.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// BIO tag. The declaration order is the argmax tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Tag {
        Self::ALL[i]
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::B => "B",
            Tag::I => "I",
            Tag::O => "O",
        };
        f.write_str(s)
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains_index(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.is_empty() || self.end > len {
            return Err(Error::SpanOutOfRange {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.start, self.end].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(Span { start, end })
    }
}

/// Sorted, pairwise disjoint, nonempty spans.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanSet(Vec<Span>);

impl SpanSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(mut spans: Vec<Span>) -> Result<Self> {
        spans.sort();
        for s in &spans {
            if s.is_empty() {
                return Err(Error::Validation(format!("empty span [{}, {})", s.start, s.end)));
            }
        }
        for w in spans.windows(2) {
            if w[0].overlaps(&w[1]) {
                return Err(Error::OverlappingSpans(w[0].start, w[0].end, w[1].start, w[1].end));
            }
        }
        Ok(Self(spans))
    }

    pub fn spans(&self) -> &[Span] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, s: &Span) -> bool {
        self.0.binary_search(s).is_ok()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Span> {
        self.0.iter()
    }
}

/// Labels for `n` tokens: `B` at each span start, `I` inside, `O` elsewhere.
pub fn encode_bio(n: usize, spans: &[Span]) -> Result<Vec<Tag>> {
    let set = SpanSet::new(spans.to_vec())?;
    let mut labels = vec![Tag::O; n];
    for s in set.iter() {
        s.check(n)?;
        labels[s.start] = Tag::B;
        for l in &mut labels[s.start + 1..s.end] {
            *l = Tag::I;
        }
    }
    Ok(labels)
}

/// Maximal `B I*` runs become spans. An `I` at the start or after `O`
/// opens a new span.
pub fn decode_bio(labels: &[Tag]) -> SpanSet {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in labels.iter().enumerate() {
        match t {
            Tag::B => {
                if let Some(s) = open {
                    spans.push(Span::new(s, i));
                }
                open = Some(i);
            }
            Tag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            Tag::O => {
                if let Some(s) = open.take() {
                    spans.push(Span::new(s, i));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(Span::new(s, labels.len()));
    }
    SpanSet(spans)
}

/// One (sentence, target) pair with gold opinion labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToweInstance {
    tokens: Vec<String>,
    target: Span,
    labels: Vec<Tag>,
}

impl ToweInstance {
    pub fn new(tokens: Vec<String>, target: Span, labels: Vec<Tag>) -> Result<Self> {
        let inst = Self { tokens, target, labels };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_spans(tokens: Vec<String>, target: Span, opinions: &[Span]) -> Result<Self> {
        let labels = encode_bio(tokens.len(), opinions)?;
        Self::new(tokens, target, labels)
    }

    fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Validation("sentence has no tokens".into()));
        }
        if self.labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {} tokens",
                self.labels.len(),
                n
            )));
        }
        self.target.check(n)?;
        if self.labels[self.target.start..self.target.end]
            .iter()
            .any(|&t| t != Tag::O)
        {
            return Err(Error::Validation(format!(
                "target [{}, {}) is labeled as an opinion word",
                self.target.start, self.target.end
            )));
        }
        Ok(())
    }

    /// True when every `I` follows a `B` or `I`.
    pub fn is_well_formed(&self) -> bool {
        well_formed(&self.labels)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn target(&self) -> Span {
        self.target
    }

    pub fn labels(&self) -> &[Tag] {
        &self.labels
    }

    pub fn opinion_spans(&self) -> SpanSet {
        decode_bio(&self.labels)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn well_formed(labels: &[Tag]) -> bool {
    let mut prev = Tag::O;
    for &t in labels {
        if t == Tag::I && prev == Tag::O {
            return false;
        }
        prev = t;
    }
    true
}

/// A raw sentence with a pseudo opinion target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledInstance {
    pub tokens: Vec<String>,
    pub target_span: Span,
    pub source_id: String,
}

impl UnlabeledInstance {
    pub fn new(tokens: Vec<String>, target_span: Span, source_id: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Validation("sentence has no tokens".into()));
        }
        target_span.check(tokens.len())?;
        Ok(Self {
            tokens,
            target_span,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledRecord {
    tokens: Vec<String>,
    target_span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    opinion_spans: Option<Vec<Span>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Tag>>,
}

/// Result of reading a labeled file.
#[derive(Debug, Default)]
pub struct LabeledLoad {
    pub instances: Vec<ToweInstance>,
    /// Lines whose labels contain an `I` with no preceding `B`.
    pub warnings: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Reads the labeled JSONL format, keeping ill-formed `I` runs with a
/// warning.
pub fn load_labeled_report(path: &Path) -> Result<LabeledLoad> {
    let text = read_text(path)?;
    let mut out = LabeledLoad::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: LabeledRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let inst = match (rec.labels, rec.opinion_spans) {
            (Some(labels), spans) => {
                let inst = ToweInstance::new(rec.tokens, rec.target_span, labels)
                    .map_err(|e| parse_err(e.to_string()))?;
                if let Some(spans) = spans {
                    let expected = SpanSet::new(spans).map_err(|e| parse_err(e.to_string()))?;
                    if expected != inst.opinion_spans() {
                        return Err(parse_err("labels disagree with opinion_spans".into()));
                    }
                }
                inst
            }
            (None, Some(spans)) => ToweInstance::from_spans(rec.tokens, rec.target_span, &spans)
                .map_err(|e| parse_err(e.to_string()))?,
            (None, None) => return Err(parse_err("record needs opinion_spans or labels".into())),
        };
        if !inst.is_well_formed() {
            let msg = format!("{}:{lineno}: I tag without preceding B", path.display());
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
        out.instances.push(inst);
    }
    Ok(out)
}

pub fn load_labeled(path: &Path) -> Result<Vec<ToweInstance>> {
    Ok(load_labeled_report(path)?.instances)
}

pub fn labeled_to_jsonl(instances: &[ToweInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        let rec = LabeledRecord {
            tokens: inst.tokens.clone(),
            target_span: inst.target,
            opinion_spans: Some(inst.opinion_spans().spans().to_vec()),
            labels: None,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_labeled(path: &Path, instances: &[ToweInstance]) -> Result<()> {
    write_file(path, labeled_to_jsonl(instances).as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn is_word_joiner(c: char) -> bool {
    c == '\'' || c == '-'
}

/// Whitespace tokenization after detaching punctuation. Apostrophes and
/// hyphens between alphanumerics stay inside the word.
pub fn tokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in line.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let joins = is_word_joiner(c)
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || joins {
                word.push(c);
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_string());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// One token list per nonempty line.
pub fn load_raw(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect())
}

/// A polarity-labeled sentence for sentiment pretraining.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarityExample {
    pub tokens: Vec<String>,
    pub polarity: u8,
}

pub fn load_polarity(path: &Path) -> Result<Vec<PolarityExample>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ex: PolarityExample = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if ex.polarity > 1 {
            return Err(parse_err(format!("polarity must be 0 or 1, got {}", ex.polarity)));
        }
        if ex.tokens.is_empty() {
            return Err(parse_err("empty token list".into()));
        }
        out.push(ex);
    }
    Ok(out)
}

/// Review rating to polarity: 4-5 stars positive, 1-2 negative, 3 dropped.
pub fn polarity_from_stars(stars: u8) -> Option<u8> {
    match stars {
        4.. => Some(1),
        3 => None,
        _ => Some(0),
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ToweInstance>,
    pub valid: Vec<ToweInstance>,
    pub split_seed: u64,
}

/// Groups instances by sentence, in order of first appearance.
pub fn group_by_sentence(instances: &[ToweInstance]) -> Vec<Vec<usize>> {
    let mut index: HashMap<&[String], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let g = *index.entry(inst.tokens()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

const MIN_SPLIT_SENTENCES: usize = 5;

/// Holds out 20% of sentences (rounded half up); all targets of a sentence
/// stay on the same side.
pub fn split_train_valid(instances: &[ToweInstance], seed: u64) -> Result<DatasetSplit> {
    let groups = group_by_sentence(instances);
    if groups.len() < MIN_SPLIT_SENTENCES {
        return Err(Error::TooFewSentences {
            needed: MIN_SPLIT_SENTENCES,
            got: groups.len(),
        });
    }
    // round(0.2 * s) with halves rounded up
    let n_valid = (groups.len() * 2 + 5) / 10;
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut stream_rng(seed, "split", 0));
    let mut is_valid = vec![false; groups.len()];
    for &g in &order[..n_valid] {
        is_valid[g] = true;
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (g, members) in groups.iter().enumerate() {
        let side = if is_valid[g] { &mut valid } else { &mut train };
        side.extend(members.iter().map(|&i| instances[i].clone()));
    }
    Ok(DatasetSplit {
        train,
        valid,
        split_seed: seed,
    })
}

/// Indices into the labeled and unlabeled pools for one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBatch {
    pub epoch: usize,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Endless stream of step batches. The labeled pool is permuted afresh each
/// epoch; the unlabeled pool is permuted and cycled on its own schedule.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n_labeled: usize,
    n_unlabeled: usize,
    labeled_batch: usize,
    unlabeled_batch: usize,
    labeled_rng: ChaCha8Rng,
    unlabeled_rng: ChaCha8Rng,
    labeled_order: Vec<usize>,
    labeled_pos: usize,
    unlabeled_order: Vec<usize>,
    unlabeled_pos: usize,
    epoch: usize,
}

pub const DEFAULT_LABELED_BATCH: usize = 16;
pub const DEFAULT_UNLABELED_BATCH: usize = 96;

impl BatchSampler {
    pub fn new(n_labeled: usize, n_unlabeled: usize, labeled_batch: usize, unlabeled_batch: usize, seed: u64) -> Self {
        assert!(n_labeled > 0, "labeled pool must be nonempty");
        assert!(labeled_batch > 0, "labeled batch size must be positive");
        let mut s = Self {
            n_labeled,
            n_unlabeled,
            labeled_batch,
            unlabeled_batch,
            labeled_rng: stream_rng(seed, "batches.labeled", 0),
            unlabeled_rng: stream_rng(seed, "batches.unlabeled", 0),
            labeled_order: Vec::new(),
            labeled_pos: 0,
            unlabeled_order: Vec::new(),
            unlabeled_pos: 0,
            epoch: 0,
        };
        s.reshuffle_labeled();
        s.reshuffle_unlabeled();
        s
    }

    pub fn with_defaults(n_labeled: usize, n_unlabeled: usize, seed: u64) -> Self {
        Self::new(n_labeled, n_unlabeled, DEFAULT_LABELED_BATCH, DEFAULT_UNLABELED_BATCH, seed)
    }

    pub fn batch_sizes(&self) -> (usize, usize) {
        (self.labeled_batch, self.unlabeled_batch)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_labeled.div_ceil(self.labeled_batch)
    }

    fn reshuffle_labeled(&mut self) {
        self.labeled_order = (0..self.n_labeled).collect();
        self.labeled_order.shuffle(&mut self.labeled_rng);
        self.labeled_pos = 0;
    }

    fn reshuffle_unlabeled(&mut self) {
        self.unlabeled_order = (0..self.n_unlabeled).collect();
        self.unlabeled_order.shuffle(&mut self.unlabeled_rng);
        self.unlabeled_pos = 0;
    }

    fn next_unlabeled(&mut self) -> Vec<usize> {
        if self.n_unlabeled == 0 || self.unlabeled_batch == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.unlabeled_batch);
        while out.len() < self.unlabeled_batch {
            if self.unlabeled_pos == self.unlabeled_order.len() {
                self.reshuffle_unlabeled();
            }
            out.push(self.unlabeled_order[self.unlabeled_pos]);
            self.unlabeled_pos += 1;
        }
        out
    }
}

impl Iterator for BatchSampler {
    type Item = StepBatch;

    fn next(&mut self) -> Option<StepBatch> {
        if self.labeled_pos == self.labeled_order.len() {
            self.reshuffle_labeled();
            self.epoch += 1;
        }
        let end = (self.labeled_pos + self.labeled_batch).min(self.n_labeled);
        let labeled = self.labeled_order[self.labeled_pos..end].to_vec();
        self.labeled_pos = end;
        let unlabeled = self.next_unlabeled();
        Some(StepBatch {
            epoch: self.epoch,
            labeled,
            unlabeled,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn encode_examples() {
        use Tag::*;
        assert_eq!(encode_bio(5, &[Span::new(2, 4)]).unwrap(), vec![O, O, B, I, O]);
        assert_eq!(encode_bio(3, &[]).unwrap(), vec![O, O, O]);
        assert_eq!(
            encode_bio(4, &[Span::new(0, 1), Span::new(2, 4)]).unwrap(),
            vec![B, O, B, I]
        );
        assert!(matches!(
            encode_bio(5, &[Span::new(0, 3), Span::new(2, 4)]),
            Err(Error::OverlappingSpans(..))
        ));
        assert!(encode_bio(3, &[Span::new(2, 4)]).is_err());
    }

    #[test]
    fn decode_examples() {
        use Tag::*;
        assert_eq!(decode_bio(&[O, O, B, I, O]).spans(), &[Span::new(2, 4)]);
        assert_eq!(decode_bio(&[I, I, O]).spans(), &[Span::new(0, 2)]);
        assert_eq!(decode_bio(&[B, B, I]).spans(), &[Span::new(0, 1), Span::new(1, 3)]);
        assert_eq!(decode_bio(&[O, I, B]).spans(), &[Span::new(1, 2), Span::new(2, 3)]);
        assert!(decode_bio(&[]).is_empty());
    }

    #[test]
    fn instance_invariants() {
        use Tag::*;
        let ok = ToweInstance::new(toks("waiter is rude"), Span::new(0, 1), vec![O, O, B]).unwrap();
        assert_eq!(ok.opinion_spans().spans(), &[Span::new(2, 3)]);
        assert!(ToweInstance::new(toks("waiter is rude"), Span::new(3, 4), vec![O, O, B]).is_err());
        assert!(ToweInstance::new(toks("waiter is rude"), Span::new(1, 1), vec![O, O, B]).is_err());
        assert!(ToweInstance::new(toks("waiter is rude"), Span::new(0, 1), vec![O, B]).is_err());
        // a target is never its own opinion word
        assert!(ToweInstance::new(toks("waiter is rude"), Span::new(2, 3), vec![O, O, B]).is_err());
        let ill = ToweInstance::new(toks("waiter is rude"), Span::new(0, 1), vec![O, O, I]).unwrap();
        assert!(!ill.is_well_formed());
    }

    #[test]
    fn loader_reports_errors_and_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"tokens":["waiter","is","rude"],"target_span":[0,1],"labels":["O","O","B"]}"#,
                "\n",
                r#"{"tokens":["food","was","very","good"],"target_span":[0,1],"opinion_spans":[[2,4]]}"#,
                "\n",
                r#"{"tokens":["a","b","c"],"target_span":[0,1],"labels":["O","O","I"]}"#,
                "\n"
            ),
        )
        .unwrap();
        let load = load_labeled_report(&p).unwrap();
        assert_eq!(load.instances.len(), 3);
        assert_eq!(load.warnings.len(), 1);
        assert_eq!(load.instances[1].labels(), &[Tag::O, Tag::O, Tag::B, Tag::I]);

        fs::write(&p, "{\"tokens\":[\"a\"],\"target_span\":[0,1],\"opinion_spans\":[]}\nnot json\n").unwrap();
        match load_labeled(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(
            &p,
            r#"{"tokens":["waiter","is","rude"],"target_span":[3,4],"opinion_spans":[]}"#,
        )
        .unwrap();
        assert!(load_labeled(&p).is_err());
    }

    #[test]
    fn labeled_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        let text = concat!(
            r#"{"tokens":["the","food","was","very","good"],"target_span":[1,2],"opinion_spans":[[3,5]]}"#,
            "\n",
            r#"{"tokens":["nice","staff"],"target_span":[1,2],"opinion_spans":[[0,1]]}"#,
            "\n"
        );
        fs::write(&p, text).unwrap();
        let insts = load_labeled(&p).unwrap();
        assert_eq!(labeled_to_jsonl(&insts), text);
    }

    #[test]
    fn tokenizer_detaches_punctuation() {
        assert_eq!(tokenize("great pizza !"), toks("great pizza !"));
        assert_eq!(tokenize("great pizza!"), toks("great pizza !"));
        assert_eq!(tokenize("don't, well-done."), toks("don't , well-done ."));
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn raw_loader_skips_empty_lines_and_reports_bad_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.txt");
        fs::write(&p, "great pizza !\n\nslow service\n").unwrap();
        assert_eq!(load_raw(&p).unwrap(), vec![toks("great pizza !"), toks("slow service")]);
        fs::write(&p, b"ok\n\xffbad\n").unwrap();
        match load_raw(&p) {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    fn sentences(k: usize) -> Vec<ToweInstance> {
        (0..k)
            .map(|i| ToweInstance::from_spans(vec![format!("s{i}"), "x".into()], Span::new(0, 1), &[]).unwrap())
            .collect()
    }

    #[test]
    fn split_is_twenty_percent_and_deterministic() {
        let insts = sentences(10);
        let a = split_train_valid(&insts, 1).unwrap();
        assert_eq!((a.train.len(), a.valid.len()), (8, 2));
        let b = split_train_valid(&insts, 1).unwrap();
        assert_eq!(a.valid, b.valid);
        let distinct: std::collections::HashSet<Vec<String>> = (0..10)
            .map(|s| {
                split_train_valid(&insts, s)
                    .unwrap()
                    .valid
                    .iter()
                    .map(|i| i.tokens()[0].clone())
                    .collect()
            })
            .collect();
        assert!(distinct.len() >= 2);
        // half rounds up: 0.2 * 13 = 2.6 -> 3, 0.2 * 12.5 never occurs, 0.2 * 7 = 1.4 -> 1
        assert_eq!(split_train_valid(&sentences(13), 0).unwrap().valid.len(), 3);
        assert_eq!(split_train_valid(&sentences(7), 0).unwrap().valid.len(), 1);
        assert!(matches!(
            split_train_valid(&sentences(4), 0),
            Err(Error::TooFewSentences { .. })
        ));
    }

    #[test]
    fn split_keeps_sentence_targets_together() {
        let mut insts = Vec::new();
        for i in 0..20 {
            let toks = vec![format!("w{i}"), "and".into(), format!("v{i}")];
            insts.push(ToweInstance::from_spans(toks.clone(), Span::new(0, 1), &[]).unwrap());
            insts.push(ToweInstance::from_spans(toks, Span::new(2, 3), &[]).unwrap());
        }
        let split = split_train_valid(&insts, 9).unwrap();
        assert_eq!(split.valid.len(), 8);
        for v in &split.valid {
            assert!(split.train.iter().all(|t| t.tokens() != v.tokens()));
        }
    }

    #[test]
    fn sampler_shapes() {
        let mut s = BatchSampler::with_defaults(32, 96, 3);
        assert_eq!(s.batch_sizes(), (16, 96));
        assert_eq!(s.steps_per_epoch(), 2);
        let a = s.next().unwrap();
        let b = s.next().unwrap();
        let mut all: Vec<usize> = a.labeled.iter().chain(&b.labeled).copied().collect();
        all.sort();
        assert_eq!(all, (0..32).collect::<Vec<_>>());
        assert_eq!(a.unlabeled.len(), 96);
        assert_eq!(s.next().unwrap().epoch, 1);

        let mut empty = BatchSampler::with_defaults(5, 0, 0);
        assert!(empty.next().unwrap().unlabeled.is_empty());

        let x: Vec<_> = BatchSampler::new(7, 3, 2, 5, 11).take(20).collect();
        let y: Vec<_> = BatchSampler::new(7, 3, 2, 5, 11).take(20).collect();
        assert_eq!(x, y);
        assert_eq!(x[3].labeled.len(), 1);
    }
}
