//! Semi-supervised target-oriented opinion words extraction.
//!
//! A BIO tagger conditioned on an opinion target is trained jointly on
//! labeled sentences and on raw sentences carrying pseudo targets. Raw
//! sentences contribute a consistency loss between the model's argmax
//! predictions on the clean sentence and its predictions on a perturbed copy,
//! gated at two granularities: whole sentences by (sentiment-weighted)
//! average confidence, and individual tokens by their own confidence.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision used for training (`f32`) and for gradient checks (`f64`).

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod mgcr;
pub mod nn;
pub mod optim;
pub mod params;
pub mod perturb;
pub mod scalar;
pub mod seed;
pub mod sentiment;
pub mod synth;
pub mod target_labeler;
pub mod tensor;
pub mod towe;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ToweModel32 = towe::ToweModel<f32>;
pub type ToweModel64 = towe::ToweModel<f64>;
pub type SentimentClassifier32 = sentiment::SentimentClassifier<f32>;
pub type SentimentClassifier64 = sentiment::SentimentClassifier<f64>;
pub type TargetTagger32 = target_labeler::TargetTagger<f32>;
pub type TargetTagger64 = target_labeler::TargetTagger<f64>;
