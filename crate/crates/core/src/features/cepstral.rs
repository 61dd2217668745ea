//! Cepstral stand-in for self-supervised features: MFCCs at the mel frame rate.

use std::f64::consts::PI;

use super::matrix::FeatureMatrix;
use super::mel::{MelSpectrogram, N_MELS};
use crate::error::Result;

pub const CEPSTRAL_DIM: usize = 13;

/// Orthonormal DCT-II of each log-mel frame, first 13 coefficients, with the
/// utterance mean of each coefficient removed.
///
/// Mean removal cancels fixed spectral tilt and gain, which mostly identify the
/// speaker, so clusters over these features follow content more closely.
pub fn cepstral_proxy(mel: &MelSpectrogram) -> Result<FeatureMatrix> {
    let basis: Vec<Vec<f64>> = (0..CEPSTRAL_DIM)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / N_MELS as f64).sqrt()
            } else {
                (2.0 / N_MELS as f64).sqrt()
            };
            (0..N_MELS)
                .map(|n| scale * (PI * k as f64 * (n as f64 + 0.5) / N_MELS as f64).cos())
                .collect()
        })
        .collect();
    let mut data: Vec<f64> = Vec::with_capacity(mel.num_frames() * CEPSTRAL_DIM);
    for t in 0..mel.num_frames() {
        let frame = mel.frame(t);
        for b in &basis {
            let c: f64 = b.iter().zip(frame).map(|(w, &x)| w * x as f64).sum();
            data.push(c);
        }
    }
    let frames = mel.num_frames();
    let mut mean = [0.0f64; CEPSTRAL_DIM];
    for row in data.chunks_exact(CEPSTRAL_DIM) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / frames as f64;
        }
    }
    let data = data
        .chunks_exact(CEPSTRAL_DIM)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m) as f32).collect::<Vec<_>>())
        .collect();
    FeatureMatrix::new(data, mel.num_frames(), CEPSTRAL_DIM, mel.frame_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_mel, Waveform, SAMPLE_RATE};

    #[test]
    fn one_second_gives_63_by_13_at_62_5_fps() {
        let w = Waveform::new(
            (0..16_000).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let f = cepstral_proxy(&compute_mel(&w).unwrap()).unwrap();
        assert_eq!((f.rows(), f.cols(), f.frame_rate()), (63, 13, 62.5));
        for c in 0..13 {
            let mean: f64 = (0..63).map(|t| f.row(t)[c] as f64).sum::<f64>() / 63.0;
            assert!(mean.abs() < 1e-4, "coefficient {c} mean {mean}");
        }
    }

    #[test]
    fn gain_changes_are_removed() {
        // a gain change is a constant offset on every log-mel bin
        let base: Vec<f32> = (0..40 * N_MELS).map(|i| ((i * 7919 % 1009) as f32 / 101.0) - 5.0).collect();
        let louder: Vec<f32> = base.iter().map(|v| v + 1.386).collect();
        let a = cepstral_proxy(&MelSpectrogram::from_frames(base, 40).unwrap()).unwrap();
        let b = cepstral_proxy(&MelSpectrogram::from_frames(louder, 40).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }
}
