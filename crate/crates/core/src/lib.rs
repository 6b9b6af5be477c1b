//! Transformer-Kernel (TK) neural re-ranking at desk scale.
//!
//! The crate covers the whole pipeline: BM25 candidate generation
//! ([`retrieval`]), the TK scoring network ([`model`]) on top of a small
//! reverse-mode differentiation core ([`autodiff`]), pairwise hinge-loss
//! training with early stopping ([`train`]), TREC-style evaluation
//! ([`eval`]) and the end-to-end re-ranking pipelines ([`pipeline`]).

// `!(x > 0.0)` also rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod param;
pub mod pipeline;
pub mod retrieval;
pub mod tensor;
pub mod text;
pub mod train;
pub mod tsv;

pub use error::{Error, Result};
