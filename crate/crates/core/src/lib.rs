//! Structure-only entity alignment between two knowledge graphs.
//!
//! The pipeline has four stages:
//!
//! 1. [`data`] loads (or synthesizes) two relation-only KGs with seed
//!    alignments and held-out dangling entities.
//! 2. [`ggan`] encodes every entity with a gated graph-attention network built
//!    on the small reverse-mode engine in [`diff`].
//! 3. [`objectives`] trains the encoder with a hard-negative contrastive loss
//!    plus a batch-level entropic optimal-transport loss.
//! 4. [`align`] ranks candidates with cosine similarity, personalized-PageRank
//!    structural agreement ([`ppr`]) and CSLS, flags dangling sources, and
//!    scores both evaluation protocols.
//!
//! Data-parallel inner loops (PPR per seed source, similarity rows, dense
//! matmul) run on rayon when the `parallel` feature is enabled (default) and
//! fall back to plain iterators otherwise. Results are identical either way.

pub mod align;
pub mod data;
pub mod diff;
mod error;
pub mod experiment;
pub mod ggan;
pub mod objectives;
pub mod par;
pub mod ppr;

pub use error::{Error, Result};
