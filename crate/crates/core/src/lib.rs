//! Desk-scale empathetic dialogue modeling.
//!
//! The pipeline: an emotion-reason tagger (transformer encoder + attention
//! composition + linear-chain CRF) marks emotion-bearing tokens, a contagion
//! encoder folds those tags into a context state `Q`, paired polarity experts
//! classify the speaker emotion, an intent-twice loop (first-pass reranking,
//! polarity diffusion with an intent-conditioned denoiser, policy sampling
//! over reference intents, tied-weight correction) refines the response
//! intent, and a pointer-generator decoder emits the reply. Everything trains
//! jointly on a reverse-mode autodiff engine small enough to gradient-check
//! end to end.

pub mod cli;
pub mod config;
pub mod contagion;
pub mod corpus;
pub mod decoder;
pub mod emotion;
pub mod era;
pub mod error;
pub mod intent;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
