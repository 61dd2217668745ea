use std::f64::consts::PI;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Working sample rate of the whole stack.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid!("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(invalid!("non-finite sample at index {i}"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read a WAV file, mix down to mono and resample to 16 kHz.
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format("wav", format!("{}: {other}", path.display())),
    })?;
    decode_wav(reader, &path.display().to_string())
}

pub(crate) fn decode_wav<R: std::io::Read>(
    reader: hound::WavReader<R>,
    origin: &str,
) -> Result<Waveform> {
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("wav", format!("{origin}: {e}")))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("wav", format!("{origin}: {e}")))?
        }
    };
    if interleaved.is_empty() {
        return Err(invalid!("{origin}: zero-length audio"));
    }
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / frame.len() as f32)
        .collect();
    let wave = Waveform::new(mono, spec.sample_rate)?;
    Ok(resample(&wave, SAMPLE_RATE))
}

/// Write mono PCM16.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let bytes = wav_bytes(wave)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn wav_bytes(wave: &Waveform) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)
            .map_err(|e| Error::format("wav", e.to_string()))?;
        for &s in &wave.samples {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
            writer
                .write_sample(v)
                .map_err(|e| Error::format("wav", e.to_string()))?;
        }
        writer
            .finalize()
            .map_err(|e| Error::format("wav", e.to_string()))?;
    }
    Ok(cursor.into_inner())
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * dst / src)`.
pub fn resample(wave: &Waveform, dst_rate: u32) -> Waveform {
    if wave.sample_rate == dst_rate {
        return wave.clone();
    }
    let src = wave.sample_rate as f64;
    let dst = dst_rate as f64;
    let out_len = (wave.len() as f64 * dst / src).round() as usize;
    let ratio = (dst / src).min(1.0);
    // cutoff in cycles per source sample, slightly under Nyquist of the slower rate
    let cutoff = 0.5 * ratio * 0.95;
    let half_width = (16.0 / ratio).ceil() as isize;
    let x = &wave.samples;
    let n = x.len() as isize;
    let samples = (0..out_len)
        .map(|j| {
            let t = j as f64 * src / dst;
            let center = t.floor() as isize;
            let mut acc = 0.0f64;
            for k in (center - half_width + 1)..=(center + half_width) {
                if k < 0 || k >= n {
                    continue;
                }
                let u = t - k as f64;
                let w = 0.5 + 0.5 * (PI * u / half_width as f64).cos();
                if u.abs() >= half_width as f64 {
                    continue;
                }
                acc += x[k as usize] as f64 * 2.0 * cutoff * sinc(2.0 * cutoff * u) * w;
            }
            acc as f32
        })
        .collect();
    Waveform {
        samples,
        sample_rate: dst_rate,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Vec<f32> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect()
    }

    #[test]
    fn one_second_at_16k_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave = Waveform::new(tone(440.0, 16_000, 1.0), 16_000).unwrap();
        write_wav(&path, &wave).unwrap();
        let back = load_audio(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.len(), 16_000);
        let max_err = wave
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-4);
    }

    #[test]
    fn stereo_48k_is_mixed_and_downsampled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 48_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let left = tone(500.0, 48_000, 0.5);
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for &s in &left {
            w.write_sample(s).unwrap();
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let back = load_audio(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.len(), left.len() / 3);
        // tone amplitude survives the low-pass (mid-signal, away from edges)
        let peak = back.samples[2000..6000]
            .iter()
            .fold(0.0f32, |m, s| m.max(s.abs()));
        assert!((peak - 0.5).abs() < 0.02, "peak {peak}");
    }

    #[test]
    fn empty_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        hound::WavWriter::create(&path, spec)
            .unwrap()
            .finalize()
            .unwrap();
        let err = load_audio(&path).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_audio("/nonexistent/x.wav").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
