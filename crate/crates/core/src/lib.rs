//! Template-guided hybrid pointer network for knowledge-based task-oriented
//! dialogue.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f64` tensors, a reverse-mode autodiff tape, initializers and Adam.
//! - [`corpus`]: dialogue data model, bAbI / JSON-lines I/O, entity tagging, memory construction
//!   and a synthetic restaurant-dialogue generator.
//! - [`retrieval`]: the question/answer repository and guidance-answer retrieval (BM25, cosine,
//!   external vectors).
//! - [`model`]: memory encoder, answer encoder, gated GRU decoder and the three-way pointer head.
//! - [`training`]: pointer targets, loss, the training loop, ablations and checkpoints.
//! - [`metrics`]: BLEU, per-response accuracy, entity F1 and retrieval statistics.
//! - [`cli`]: run configuration and the command implementations behind the `thpn` binary.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod retrieval;
pub mod session;
pub mod training;
pub(crate) mod util;

pub use error::{Error, Result};
