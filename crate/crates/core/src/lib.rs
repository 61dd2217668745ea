//! Unsupervised text-to-speech built on a conditional disentangled sequential VAE.
//!
//! The stack has four trainable pieces and a set of deterministic stages around them:
//!
//! - [`features`]: 16 kHz audio, 80-bin log-mel extraction, feature-matrix files, manifests.
//! - [`alignment`]: forced alignments from phoneme durations, unsupervised alignments
//!   from k-means++ over frame features, and frame-rate reconciliation.
//! - [`cdsvae`]: the acoustic model. A shared convolutional encoder feeds a speaker
//!   encoder (one Gaussian per utterance) and a content encoder (one Gaussian per frame);
//!   a prior encoder maps the alignment to a per-frame content prior and predicts masked
//!   units; a decoder maps `(z_s, z_c)` back to mel frames.
//! - [`frontend`]: lexicon lookup, the speaker-aware duration predictor and the
//!   FA-to-UA mapper.
//! - [`pipeline`]: voice conversion, alignment-driven generation, text synthesis and
//!   the vocoder boundary.
//! - [`eval`]: verification trials and EER, phoneme probes, projections, CER/WER.

pub mod alignment;
pub mod cdsvae;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod frontend;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use rng::{RngState, SeededRng};
