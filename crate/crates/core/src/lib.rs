//! Answer validation for multiple-choice science questions.
//!
//! The crate trains a shared-weight (Siamese) deep-averaging text encoder to
//! score how well a candidate answer matches its supporting passage, picks the
//! best of four options, and validates free-form student answers against the
//! inferred answer key. An unsupervised embedding-cosine scorer is provided as
//! a baseline.
//!
//! Module map:
//!
//! - [`corpus`]: SciQ loading, text normalization, pair construction.
//! - [`text`]: vocabulary and fixed-length encoding.
//! - [`autodiff`]: the small reverse-mode engine the encoder trains with.
//! - [`siamese`]: encoder, losses, training loop, checkpoints.
//! - [`baseline`]: embedding providers and the cosine scorer.
//! - [`evaluate`]: prediction, accuracy, free-answer verdicts, ablations.
//! - [`tune`]: exhaustive grid search.
//! - [`synthetic`]: generated datasets with a known answer key.

pub mod autodiff;
pub mod baseline;
pub mod corpus;
mod error;
pub mod evaluate;
pub mod siamese;
pub mod synthetic;
pub mod text;
pub mod tune;

pub use error::{Error, Result};
