//! Multi-hop heterogeneous neighborhood fusion (MHNF).
//!
//! A heterogeneous-graph representation learner that, instead of relying on
//! hand-specified metapaths, learns a soft mixture of single relations at
//! every hop ("hybrid metapaths"), aggregates neighborhood information per
//! hop, and fuses hops and paths with a two-level attention mechanism.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`ndcore`]: dense/sparse matrices and a reverse-mode tape covering
//!   exactly the operation set the model needs, plus an Adam optimizer.
//! - [`hetgraph`]: the typed-graph data model, dataset ingestion, label
//!   splits, and a planted-signal synthetic generator.
//! - [`hmae`]: hybrid-metapath extraction (learned relation mixing and hop
//!   chaining) and the learned-path ranking report.
//! - [`hlhia`]: feature projection and per-hop neighborhood aggregation.
//! - [`hsaf`]: hop-level and path-level attention fusion plus the
//!   classification head.
//! - [`model`] / [`train`]: parameter containers, the end-to-end forward
//!   pass, the training loop, the multi-run evaluation protocol, and
//!   checkpointing.
//! - [`eval`]: F1 / KNN / k-means / NMI / ARI metrics and embedding export.
//!
//! All kernels are deterministic: identical inputs and seeds produce
//! bitwise-identical results, with or without the `parallel` feature.

pub mod error;
pub mod eval;
pub mod hetgraph;
pub mod hlhia;
pub mod hmae;
pub mod hsaf;
pub mod model;
pub mod ndcore;
pub mod report;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use hetgraph::{HetGraph, LabeledSplit};
pub use model::ModelParams;
pub use ndcore::{DenseMatrix, SparseMatrix, Tape};
pub use report::{AttentionRecord, RankedPath, RunReport};
pub use train::TrainConfig;
