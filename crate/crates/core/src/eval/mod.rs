//! Objective evaluation: speaker-verification EER from latent embeddings, phoneme
//! probing of content features, 2-D projections and CER/WER scoring.

mod eer;
mod embed;
mod probe;
mod projection;
mod report;
mod text;
mod trials;

pub use eer::{compute_eer, cosine, ScoredTrials};
pub use embed::{embed_utterances, score_trials, EmbeddingKind};
pub use probe::{phoneme_probe, ProbeConfig, ProbeResult};
pub use projection::{export_projection, MIN_POINTS, save_projection, ProjectedPoint, ProjectionMethod};
pub use report::{ScoreReport, ScoreRow};
pub use text::{cer_wer, edit_distance, ErrorRates};
pub use trials::{generate_trials, Trial, TrialList};
