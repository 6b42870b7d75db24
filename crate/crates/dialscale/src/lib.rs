//! dialscale rebuilds short-turn dialogue corpora into long-turn ones.
//!
//! The pipeline: split unlabeled sessions into (query, continuation) pairs
//! and train a dual-encoder session retriever contrastively ([`pairgen`],
//! [`train`], [`encoder`]); index every candidate session for exact dense
//! top-k search ([`index`]); then grow each seed session by repeatedly
//! retrieving coherent continuations, weighting them for diversity, and
//! concatenating the sampled one ([`reorganize`]). [`bm25`] supplies hard
//! negatives and a term-matching baseline, and [`metrics`] measures the
//! result (overlap, repeat sampling, distinct-n, recall@k, discrimination
//! accuracy).
//!
//! All randomness flows from explicit seeds; the sequential paths are
//! bit-reproducible. The `dialscale` binary exposes each stage as a
//! subcommand (see [`cli`]).

pub mod bm25;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod features;
pub mod index;
pub mod metrics;
pub mod pairgen;
pub mod reorganize;
pub mod text;
pub mod train;

mod binio;
mod error;

pub use error::{Error, Result};
