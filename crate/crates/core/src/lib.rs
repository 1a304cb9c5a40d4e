//! Coreference-aware extractive reading comprehension at desk scale.
//!
//! Text is word-tokenized and split into subwords ([`tokenize`]), mention
//! clusters are loaded or resolved by rule ([`coref`]), and turned into a
//! per-subword cluster array and an attention bias ([`bias`]). Three injection
//! routes sit on top of a small transformer ([`backbone`]): an extra encoder
//! layer with additive or multiplicative attention bias ([`attention`]), or a
//! relational GCN over the coreference graph fused back into the token
//! embeddings ([`rgcn`]). [`qa`] holds the span and answer-count heads, and
//! [`harness`] the dataset, metric, training and evaluation plumbing.

pub mod attention;
pub mod backbone;
pub mod bias;
pub mod checkpoint;
pub mod coref;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod params;
pub mod qa;
pub mod rgcn;
pub mod tensor;
pub mod tokenize;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
