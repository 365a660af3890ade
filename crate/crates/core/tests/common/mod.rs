//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use towe_mgcr::corpus::{encode_bio, Span, ToweInstance, UnlabeledInstance};
use towe_mgcr::encoder::{EncoderConfig, Vocab};
use towe_mgcr::perturb::DEFAULT_MASK_SYMBOL;
use towe_mgcr::towe::{ToweConfig, ToweModel};
use towe_mgcr::Scalar;

pub const WORDS: &[&str] = &[
    "the", "food", "was", "good", "bad", "waiter", "rude", "pasta", "very", "fresh", "and", "slow",
];

pub fn vocab() -> Vocab {
    Vocab::build(WORDS.iter().copied(), DEFAULT_MASK_SYMBOL)
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        ..EncoderConfig::small()
    }
}

pub fn tiny_config(init_seed: u64) -> ToweConfig {
    ToweConfig {
        encoder: tiny_encoder(),
        pos_dim: 4,
        refiner_dim: 8,
        refiner_layers: 1,
        refiner_heads: 2,
        refiner_ffn_dim: 16,
        init_seed,
    }
}

pub fn tiny_model<F: Scalar>(init_seed: u64) -> ToweModel<F> {
    ToweModel::new(tiny_config(init_seed), vocab())
}

pub fn random_tokens<R: Rng>(rng: &mut R, n: usize) -> Vec<String> {
    (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

pub fn random_span<R: Rng>(rng: &mut R, n: usize) -> Span {
    let start = rng.gen_range(0..n);
    let end = rng.gen_range(start + 1..=n.min(start + 2));
    Span::new(start, end)
}

/// Nonoverlapping spans in `0..n`, sorted, avoiding `avoid`.
pub fn random_spans<R: Rng>(rng: &mut R, n: usize, avoid: Option<Span>) -> Vec<Span> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.35) {
            let end = rng.gen_range(i + 1..=n.min(i + 3));
            let s = Span::new(i, end);
            if avoid.is_none_or(|a| !a.overlaps(&s)) {
                out.push(s);
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> ToweInstance {
    let tokens = random_tokens(rng, n);
    let target = random_span(rng, n);
    let opinions = random_spans(rng, n, Some(target));
    let labels = encode_bio(n, &opinions).unwrap();
    ToweInstance::new(tokens, target, labels).unwrap()
}

pub fn random_unlabeled<R: Rng>(rng: &mut R, n: usize) -> UnlabeledInstance {
    UnlabeledInstance::new(random_tokens(rng, n), random_span(rng, n), "rand").unwrap()
}

/// Replaces some tokens outside the target with the mask symbol or another
/// vocabulary word.
pub fn random_perturbation<R: Rng>(rng: &mut R, inst: &UnlabeledInstance) -> Vec<String> {
    inst.tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if inst.target_span.contains_index(i) || rng.gen_bool(0.5) {
                t.clone()
            } else if rng.gen_bool(0.5) {
                DEFAULT_MASK_SYMBOL.to_string()
            } else {
                WORDS.choose(rng).unwrap().to_string()
            }
        })
        .collect()
}

/// Random attention weights summing to one.
pub fn random_alpha<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}
