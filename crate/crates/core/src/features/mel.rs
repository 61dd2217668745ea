use serde::{Deserialize, Serialize};

use super::audio::{Waveform, SAMPLE_RATE};
use super::stft::Stft;
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

pub const N_MELS: usize = 80;
/// 64 ms at 16 kHz.
pub const N_FFT: usize = 1024;
/// 16 ms at 16 kHz.
pub const HOP_LENGTH: usize = 256;
const POWER_FLOOR: f64 = 1e-5;

/// Value of a log-mel bin with no energy: `ln(1e-5)`.
pub fn log_floor() -> f32 {
    POWER_FLOOR.ln() as f32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: N_FFT,
            hop: HOP_LENGTH,
            n_mels: N_MELS,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
        }
    }
}

/// `T x 80` natural-log mel power, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    num_frames: usize,
}

impl MelSpectrogram {
    pub fn from_frames(data: Vec<f32>, num_frames: usize) -> Result<Self> {
        if num_frames == 0 {
            return Err(invalid!("mel spectrogram needs at least one frame"));
        }
        if data.len() != num_frames * N_MELS {
            return Err(invalid!(
                "mel payload has {} values, expected {num_frames} x {N_MELS}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("mel spectrogram contains non-finite values"));
        }
        Ok(Self { data, num_frames })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn hop_secs(&self) -> f64 {
        HOP_LENGTH as f64 / SAMPLE_RATE as f64
    }

    pub fn window_secs(&self) -> f64 {
        N_FFT as f64 / SAMPLE_RATE as f64
    }

    pub fn frame_rate(&self) -> f64 {
        SAMPLE_RATE as f64 / HOP_LENGTH as f64
    }

    /// Contiguous frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames {
            return Err(invalid!(
                "slice [{start}, {}) out of range for {} frames",
                start + len,
                self.num_frames
            ));
        }
        Ok(Self {
            data: self.data[start * N_MELS..(start + len) * N_MELS].to_vec(),
            num_frames: len,
        })
    }

    const MAGIC: &'static [u8; 4] = b"UMEL";
    const VERSION: u32 = 1;

    /// Binary container: magic `UMEL`, then little-endian
    /// `u32 version, u32 frames, u32 bins, u32 sample_rate, u32 hop, u32 window`
    /// followed by `frames * bins` f32 values, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.data.len() * 4);
        out.extend_from_slice(Self::MAGIC);
        for v in [
            Self::VERSION,
            self.num_frames as u32,
            N_MELS as u32,
            SAMPLE_RATE,
            HOP_LENGTH as u32,
            N_FFT as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("mel container", m.to_string());
        if bytes.len() < 28 || &bytes[..4] != Self::MAGIC {
            return Err(bad("missing UMEL header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != Self::VERSION {
            return Err(bad(&format!("unsupported version {}", word(0))));
        }
        let frames = word(1) as usize;
        if word(2) as usize != N_MELS
            || word(3) != SAMPLE_RATE
            || word(4) as usize != HOP_LENGTH
            || word(5) as usize != N_FFT
        {
            return Err(bad("analysis parameters do not match 80 bins / 16 kHz / 256 hop / 1024 window"));
        }
        let payload = &bytes[28..];
        if payload.len() != frames * N_MELS * 4 {
            return Err(bad("payload length does not match header"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_frames(data, frames)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    // Slaney scale: linear below 1 kHz, logarithmic above
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Slaney-normalized triangular filterbank, `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let fft_freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (right - left);
            fft_freqs
                .iter()
                .map(|&f| {
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0) * enorm
                })
                .collect()
        })
        .collect()
}

/// Center frequency in Hz of each mel filter.
pub fn mel_centers(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// 80-bin natural-log mel power spectrogram, 64 ms Hann window, 16 ms hop.
pub fn compute_mel(wave: &Waveform) -> Result<MelSpectrogram> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(invalid!(
            "mel extraction expects {SAMPLE_RATE} Hz audio, got {}",
            wave.sample_rate
        ));
    }
    if wave.is_empty() {
        return Err(invalid!("cannot extract mel from empty audio"));
    }
    let cfg = MelConfig::default();
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let fb = mel_filterbank(&cfg);
    let samples: Vec<f64> = wave.samples.iter().map(|&s| s as f64).collect();
    let spec = stft.forward(&samples);
    let mut data = Vec::with_capacity(spec.len() * N_MELS);
    for frame in &spec {
        let power: Vec<f64> = frame.iter().map(|c| c.norm_sqr()).collect();
        for filt in &fb {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(e.max(POWER_FLOOR).ln() as f32);
        }
    }
    MelSpectrogram::from_frames(data, spec.len())
}

/// A fixed-length training crop.
#[derive(Debug, Clone)]
pub struct CroppedMel {
    pub mel: MelSpectrogram,
    /// First frame of the crop in the source.
    pub start: usize,
    /// Number of real (non-padded) frames; frames at or past this index are log-floor padding.
    pub valid: usize,
}

impl CroppedMel {
    pub fn pad_mask(&self) -> Vec<bool> {
        (0..self.mel.num_frames()).map(|t| t >= self.valid).collect()
    }
}

/// Random contiguous crop of `length` frames, right-padded with the log floor when short.
pub fn crop_segment(mel: &MelSpectrogram, length: usize, rng: &mut SeededRng) -> Result<CroppedMel> {
    if length == 0 {
        return Err(invalid!("crop length must be at least one frame"));
    }
    let t = mel.num_frames();
    if t >= length {
        let start = rng.below(t - length + 1);
        return Ok(CroppedMel {
            mel: mel.slice(start, length)?,
            start,
            valid: length,
        });
    }
    let mut data = mel.data().to_vec();
    data.resize(length * N_MELS, log_floor());
    Ok(CroppedMel {
        mel: MelSpectrogram::from_frames(data, length)?,
        start: 0,
        valid: t,
    })
}
