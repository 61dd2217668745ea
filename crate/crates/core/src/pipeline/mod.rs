//! Generation: voice conversion, alignment-driven generation, text synthesis and the
//! vocoder boundary.

mod generate;
pub mod protocol;
mod vocoder;

pub use generate::{
    generate_from_alignment, synthesize, voice_convert, ArtifactBundle, DurationSpeaker, SpeakerLatent,
    SynthesisModels, SynthesisRequest,
};
pub use vocoder::{griffin_lim, vocode, Transport, VocoderConfig, VocoderHandle};
