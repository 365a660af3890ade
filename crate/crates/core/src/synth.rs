//! Template-generated restaurant reviews for desk-scale experiments.
//!
//! Labeled sentences use base templates and base adjectives only. Raw
//! sentences mix in shifted templates and shifted adjectives (synonyms of
//! the base ones), and the test set leans on both, so a model trained only
//! on the labeled data meets unfamiliar wording at test time. The synonym
//! lexicon links each base adjective with its shifted counterpart.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{save_labeled, write_file, PolarityExample, Span, ToweInstance};
use crate::error::{Error, Result};
use crate::perturb::SynonymLexicon;
use crate::seed::stream_rng;

pub const MIN_SIZE: usize = 50;

const NOUNS: &[&str] = &[
    "food", "pizza", "pasta", "sushi", "service", "waiter", "waitress", "staff", "ambience", "decor", "music",
    "menu", "dessert", "coffee", "chef", "manager", "seating", "bread", "salad", "steak", "burger", "fries", "tea",
    "beer", "view", "location", "atmosphere", "patio", "bar", "soup", "noodles", "curry", "wine list", "ice cream",
    "fried rice", "happy hour", "lamb chops", "tuna roll", "bartender", "host", "drinks", "cocktails", "wine",
    "cheesecake", "tiramisu", "risotto", "dumplings", "ramen", "tacos", "nachos", "oysters", "shrimp", "lobster",
    "chicken", "rice", "portions", "prices", "reservation", "parking", "restroom", "lighting", "crust", "sauce",
    "appetizers", "brunch", "espresso", "mussels", "garlic bread",
];

/// (base, shifted) adjective pairs.
const POSITIVE: &[(&str, &str)] = &[
    ("good", "decent"),
    ("great", "fantastic"),
    ("delicious", "tasty"),
    ("friendly", "welcoming"),
    ("excellent", "superb"),
    ("amazing", "outstanding"),
    ("fresh", "crisp"),
    ("nice", "pleasant"),
    ("wonderful", "lovely"),
    ("attentive", "helpful"),
    ("cozy", "charming"),
    ("perfect", "flawless"),
    ("generous", "ample"),
    ("fast", "quick"),
    ("clean", "spotless"),
    ("cheap", "affordable"),
];

const NEGATIVE: &[(&str, &str)] = &[
    ("bad", "poor"),
    ("terrible", "dreadful"),
    ("rude", "impolite"),
    ("awful", "lousy"),
    ("slow", "sluggish"),
    ("bland", "tasteless"),
    ("overpriced", "pricey"),
    ("dirty", "filthy"),
    ("cold", "lukewarm"),
    ("horrible", "disgusting"),
    ("noisy", "loud"),
    ("stale", "soggy"),
    ("greasy", "oily"),
    ("cramped", "crowded"),
    ("tiny", "skimpy"),
    ("burnt", "charred"),
];

const INTENSIFIERS: &[(&str, &str)] = &[("very", "really"), ("extremely", "incredibly"), ("quite", "rather")];

/// Non-opinion modifiers placed before nouns.
const DESCRIPTORS: &[&str] = &["new", "italian", "small", "outdoor", "main", "local", "vegetarian", "french", "upstairs", "daily"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub labeled: usize,
    pub raw: usize,
    pub test: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// `size` labeled sentences, ten times as many raw ones, and half as
    /// many test sentences.
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            labeled: size,
            raw: size * 10,
            test: (size / 2).max(MIN_SIZE),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<ToweInstance>,
    pub raw: Vec<Vec<String>>,
    pub test: Vec<ToweInstance>,
    pub sentiment: Vec<PolarityExample>,
    pub lexicon: SynonymLexicon,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Style {
    Base,
    Shifted,
}

struct Sentence {
    tokens: Vec<String>,
    /// Target span and its opinion spans.
    targets: Vec<(Span, Vec<Span>)>,
    /// 1 positive, 0 negative, None when mixed.
    polarity: Option<u8>,
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    shift_rate: f64,
    tokens: Vec<String>,
    targets: Vec<(Span, Vec<Span>)>,
    polarities: Vec<u8>,
}

impl Builder<'_> {
    fn words(&mut self, text: &str) {
        self.tokens.extend(text.split_whitespace().map(String::from));
    }

    fn noun(&mut self, avoid: &[&'static str], descriptor: bool) -> (Span, &'static str) {
        let choices: Vec<&'static str> = NOUNS.iter().copied().filter(|n| !avoid.contains(n)).collect();
        let n = *choices.choose(self.rng).expect("nouns remain");
        if descriptor && self.rng.gen_bool(0.15) {
            let d = DESCRIPTORS.choose(self.rng).expect("nonempty");
            self.words(d);
        }
        let start = self.tokens.len();
        self.words(n);
        (Span::new(start, self.tokens.len()), n)
    }

    fn opinion(&mut self, polarity: u8) -> Span {
        let table = if polarity == 1 { POSITIVE } else { NEGATIVE };
        let start = self.tokens.len();
        if self.rng.gen_bool(0.25) {
            let (b, s) = *INTENSIFIERS.choose(self.rng).expect("nonempty");
            let w = if self.rng.gen_bool(self.shift_rate) { s } else { b };
            self.words(w);
        }
        let (b, s) = *table.choose(self.rng).expect("nonempty");
        let w = if self.rng.gen_bool(self.shift_rate) { s } else { b };
        self.words(w);
        self.polarities.push(polarity);
        Span::new(start, self.tokens.len())
    }

    fn polarity(&mut self) -> u8 {
        u8::from(self.rng.gen_bool(0.5))
    }

    fn finish(self) -> Sentence {
        let polarity = match self.polarities.first() {
            Some(&p) if self.polarities.iter().all(|&q| q == p) => Some(p),
            _ => None,
        };
        Sentence {
            tokens: self.tokens,
            targets: self.targets,
            polarity,
        }
    }
}

fn sentence(rng: &mut ChaCha8Rng, style: Style, shift_rate: f64) -> Sentence {
    let template = match style {
        Style::Base => rng.gen_range(0..5),
        Style::Shifted => 5 + rng.gen_range(0..5),
    };
    let mut b = Builder {
        rng,
        shift_rate,
        tokens: Vec::new(),
        targets: Vec::new(),
        polarities: Vec::new(),
    };
    let p1 = b.polarity();
    let p2 = b.polarity();
    match template {
        0 => {
            b.words("the");
            let (n, _) = b.noun(&[], true);
            b.words("was");
            let o = b.opinion(p1);
            b.words(".");
            b.targets.push((n, vec![o]));
        }
        1 => {
            let o = b.opinion(p1);
            let (n, _) = b.noun(&[], false);
            b.words(".");
            b.targets.push((n, vec![o]));
        }
        2 => {
            b.words("the");
            let (n1, w1) = b.noun(&[], true);
            b.words("was");
            let o1 = b.opinion(p1);
            b.words("but the");
            let (n2, _) = b.noun(&[w1], true);
            b.words("was");
            let o2 = b.opinion(p2);
            b.words(".");
            b.targets.push((n1, vec![o1]));
            b.targets.push((n2, vec![o2]));
        }
        3 => {
            b.words("i thought the");
            let (n, _) = b.noun(&[], true);
            b.words("was");
            let o1 = b.opinion(p1);
            b.words("and");
            let o2 = b.opinion(p1);
            b.words(".");
            b.targets.push((n, vec![o1, o2]));
        }
        4 => {
            b.words("we had");
            let o1 = b.opinion(p1);
            let (n1, w1) = b.noun(&[], false);
            b.words("and");
            let o2 = b.opinion(p2);
            let (n2, _) = b.noun(&[w1], false);
            b.words(".");
            b.targets.push((n1, vec![o1]));
            b.targets.push((n2, vec![o2]));
        }
        5 => {
            let (n, _) = b.noun(&[], false);
            b.words(":");
            let o = b.opinion(p1);
            b.words(".");
            b.targets.push((n, vec![o]));
        }
        6 => {
            b.words("what a");
            let o = b.opinion(p1);
            let (n, _) = b.noun(&[], false);
            b.words("!");
            b.targets.push((n, vec![o]));
        }
        7 => {
            b.words("the");
            let (n1, w1) = b.noun(&[], true);
            b.words("seemed");
            let o1 = b.opinion(p1);
            b.words("to me , yet the");
            let (n2, _) = b.noun(&[w1], true);
            b.words("felt");
            let o2 = b.opinion(p2);
            b.words(".");
            b.targets.push((n1, vec![o1]));
            b.targets.push((n2, vec![o2]));
        }
        8 => {
            b.words("honestly ,");
            let (n1, w1) = b.noun(&[], false);
            b.words("is");
            let o1 = b.opinion(p1);
            b.words("and");
            let (n2, _) = b.noun(&[w1], false);
            b.words("is");
            let o2 = b.opinion(p2);
            b.words(".");
            b.targets.push((n1, vec![o1]));
            b.targets.push((n2, vec![o2]));
        }
        _ => {
            b.words("never had such");
            let o1 = b.opinion(p1);
            b.words(",");
            let o2 = b.opinion(p1);
            let (n, _) = b.noun(&[], false);
            b.words("before !");
            b.targets.push((n, vec![o1, o2]));
        }
    }
    b.finish()
}

fn instances(s: &Sentence) -> Result<Vec<ToweInstance>> {
    s.targets
        .iter()
        .map(|(t, ops)| ToweInstance::from_spans(s.tokens.clone(), *t, ops))
        .collect()
}

pub fn lexicon() -> SynonymLexicon {
    let mut lex = SynonymLexicon::new();
    for &(b, s) in POSITIVE.iter().chain(NEGATIVE).chain(INTENSIFIERS) {
        lex.insert(b, &[s.to_string()]).expect("distinct single words");
        lex.insert(s, &[b.to_string()]).expect("distinct single words");
    }
    lex
}

/// Deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.labeled < MIN_SIZE {
        return Err(Error::Config(format!(
            "synthetic corpus size must be at least {MIN_SIZE}, got {}",
            cfg.labeled
        )));
    }
    let mut rng = stream_rng(cfg.seed, "synth.train", 0);
    let mut train = Vec::new();
    for _ in 0..cfg.labeled {
        train.extend(instances(&sentence(&mut rng, Style::Base, 0.0))?);
    }

    let mut rng = stream_rng(cfg.seed, "synth.raw", 0);
    let mut raw = Vec::with_capacity(cfg.raw);
    let mut sentiment = Vec::new();
    for _ in 0..cfg.raw {
        let style = if rng.gen_bool(0.5) { Style::Base } else { Style::Shifted };
        let s = sentence(&mut rng, style, 0.5);
        if let Some(polarity) = s.polarity {
            sentiment.push(PolarityExample {
                tokens: s.tokens.clone(),
                polarity,
            });
        }
        raw.push(s.tokens);
    }

    let mut rng = stream_rng(cfg.seed, "synth.test", 0);
    let mut test = Vec::new();
    for _ in 0..cfg.test {
        let style = if rng.gen_bool(0.6) { Style::Shifted } else { Style::Base };
        test.extend(instances(&sentence(&mut rng, style, 0.7))?);
    }
    Ok(SynthCorpus {
        train,
        raw,
        test,
        sentiment,
        lexicon: lexicon(),
    })
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const RAW_FILE: &str = "raw.txt";
pub const TEST_FILE: &str = "test.jsonl";
pub const SENTIMENT_FILE: &str = "sentiment.jsonl";
pub const LEXICON_FILE: &str = "lexicon.jsonl";

/// Writes the five corpus files into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    save_labeled(&dir.join(TRAIN_FILE), &corpus.train)?;
    save_labeled(&dir.join(TEST_FILE), &corpus.test)?;
    let mut raw = String::new();
    for s in &corpus.raw {
        raw.push_str(&s.join(" "));
        raw.push('\n');
    }
    write_file(&dir.join(RAW_FILE), raw.as_bytes())?;
    let mut senti = String::new();
    for ex in &corpus.sentiment {
        senti.push_str(&serde_json::to_string(ex)?);
        senti.push('\n');
    }
    write_file(&dir.join(SENTIMENT_FILE), senti.as_bytes())?;
    write_file(&dir.join(LEXICON_FILE), corpus.lexicon.to_jsonl().as_bytes())
}
