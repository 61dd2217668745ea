//! Wire format of the external vocoder boundary.
//!
//! Request (`UMEL` container, little endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `UMEL` |
//! | 4 | version, `1` |
//! | 4 | frames `T` |
//! | 4 | mel bins, `80` |
//! | 4 | sample rate, `16000` |
//! | 4 | hop length, `256` |
//! | 4 | window length, `1024` |
//! | `4 T 80` | f32 natural-log mel power, row-major by frame |
//!
//! Response: a mono 16-bit PCM WAV file at the request's sample rate, `T * 256` samples
//! give or take one hop.

use std::io::{Cursor, Read, Write};

use crate::error::{Error, Result};
use crate::features::{MelSpectrogram, Waveform, HOP_LENGTH, N_FFT, N_MELS, SAMPLE_RATE};

pub const MAGIC: &[u8; 4] = b"UMEL";
pub const VERSION: u32 = 1;
const HEADER: usize = 28;

pub fn encode_request(mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + mel.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, mel.num_frames() as u32, N_MELS as u32, SAMPLE_RATE, HOP_LENGTH as u32, N_FFT as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in mel.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_request(bytes: &[u8]) -> Result<MelSpectrogram> {
    let bad = |m: String| Error::format("vocoder request", m);
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(bad("missing UMEL header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, frames, bins, rate, hop, win) = (word(0), word(1) as usize, word(2), word(3), word(4), word(5));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if (bins, rate, hop, win) != (N_MELS as u32, SAMPLE_RATE, HOP_LENGTH as u32, N_FFT as u32) {
        return Err(bad(format!("unsupported layout bins={bins} rate={rate} hop={hop} window={win}")));
    }
    let payload = &bytes[HEADER..];
    if payload.len() != frames * N_MELS * 4 {
        return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), frames * N_MELS * 4)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::from_frames(data, frames)
}

/// 16-bit PCM WAV bytes, samples clipped to `[-1, 1]`.
pub fn encode_wav(wave: &Waveform) -> Result<Vec<u8>> {
    crate::features::wav_bytes(wave)
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let fail = |e: hound::Error| Error::format("wav", e.to_string());
    let mut r = hound::WavReader::new(Cursor::new(bytes)).map_err(fail)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format("wav", "expected mono 16-bit PCM"));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / i16::MAX as f32))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(fail)?;
    Waveform::new(samples, spec.sample_rate)
}

/// Serve one request: read a `UMEL` container to end of input, write WAV bytes.
pub fn serve_once(input: &mut impl Read, output: &mut impl Write, invert: impl Fn(&MelSpectrogram) -> Result<Waveform>) -> Result<()> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<stdin>", e))?;
    let wav = encode_wav(&invert(&decode_request(&bytes)?)?)?;
    output.write_all(&wav).map_err(|e| Error::io("<stdout>", e))?;
    output.flush().map_err(|e| Error::io("<stdout>", e))
}
