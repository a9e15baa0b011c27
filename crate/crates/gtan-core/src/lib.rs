//! Semi-supervised fraud detection on temporal transaction graphs.
//!
//! Transactions become nodes of a directed graph whose edges point from a
//! cardholder's earlier transactions to later ones. A gated temporal
//! attention network propagates attribute and risk embeddings along those
//! edges and scores each transaction's fraud probability. Training masks
//! every batch's center nodes so the model learns from its neighbors'
//! labels, never its own.
//!
//! Module map:
//! - [`kernel`]: dense tensors, the reverse-mode tape, Adam
//! - [`data`]: transaction records, CSV ingest, vocabularies, features
//! - [`graph`]: temporal graph construction, batching, binary export
//! - [`model`]: the network itself (embedding, attention, gate, head)
//! - [`trainer`]: masked mini-batch training and leakage-safe inference
//! - [`eval`]: metrics, experiment protocols, sweeps, ablations
//! - [`synth`]: seeded synthetic transaction generator

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
