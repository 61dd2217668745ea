//! Audio ingestion, log-mel extraction, feature-matrix files and dataset manifests.

mod audio;
mod cepstral;
mod manifest;
mod matrix;
mod mel;
mod stft;

pub use audio::{load_audio, resample, write_wav, Waveform, SAMPLE_RATE};
pub(crate) use audio::wav_bytes;
pub use cepstral::{cepstral_proxy, CEPSTRAL_DIM};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use matrix::{load_feature_matrix, save_feature_matrix, FeatureMatrix};
pub use mel::{
    compute_mel, crop_segment, log_floor, mel_centers, mel_filterbank, CroppedMel, MelConfig, MelSpectrogram,
    HOP_LENGTH, N_FFT, N_MELS,
};
pub use stft::Stft;
