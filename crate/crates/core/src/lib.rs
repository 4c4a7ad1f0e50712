//! Small text classifiers with token-level attribution and faithfulness
//! evaluation.
//!
//! The crate is organized in layers that mirror the pipeline:
//!
//! * [`text`] turns raw documents into fixed-length token id sequences and
//!   back, and manages the capped vocabulary.
//! * [`model`] holds two from-scratch classifiers (a 1-D convolutional net
//!   and an LSTM) with exact analytic gradients, plus training, evaluation
//!   and checkpointing.
//! * [`attribution`] produces per-token importance scores via integrated
//!   gradients, Shapley values (exact and sampled) and a local surrogate
//!   (LIME-style) explainer.
//! * [`faithfulness`] scores explanations by deleting or keeping the
//!   tokens they rank highest and measuring how the model reacts.
//! * [`report`] renders heatmaps and metric tables.

pub mod attribution;
pub mod error;
pub mod faithfulness;
pub mod model;
pub mod report;
pub mod seeding;
pub mod text;

pub use error::{Error, Result};
