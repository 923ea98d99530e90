//! Study-similarity embeddings for exploring heterogeneity in meta-analysis.
//!
//! The crate covers the whole chain: tabulated study records are judged in
//! triplets (anchor, positive, negative) by an oracle, the triplets train a
//! soft ordinal embedding under a margin triplet loss, k-means partitions the
//! embedded studies, and a random-effects meta-analysis with REML
//! between-study variance is fitted within every cluster.
//!
//! Modules follow the stages:
//!
//! - [`dataset`]: study records, CSV/JSON ingest and validation
//! - [`oracle`]: Gower-distance and LLM similarity judges
//! - [`triplets`]: pool generation, budget formula and seeded subsampling
//! - [`embedding`]: triplet loss, Adam and the training loop
//! - [`clustering`]: k-means, elbow curve and adjusted Rand index
//! - [`meta`]: REML, pooling, intervals, subgroups and meta-regression
//! - [`sensitivity`]: seed/λ/d/k robustness grid
//! - [`pipeline`]: staged runs with resumable artifacts and manifests

pub mod clustering;
pub mod dataset;
pub mod embedding;
mod error;
pub mod meta;
pub mod oracle;
pub mod pipeline;
pub mod seed;
pub mod sensitivity;
pub mod synthetic;
pub mod triplets;

pub use error::{Error, ErrorKind, Result};
