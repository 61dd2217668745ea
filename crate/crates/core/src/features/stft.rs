use std::f64::consts::PI;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// Center-padded short-time Fourier transform.
///
/// Frame `t` is centered on sample `t * hop`; the signal is zero-padded by
/// `n_fft / 2` on both sides, so `L` samples produce `ceil(L / hop)` frames.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        // periodic Hann
        let window = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();
        Self {
            n_fft,
            hop,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    pub fn forward(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let half = (self.n_fft / 2) as isize;
        let mut buf = self.forward.make_input_vec();
        let mut scratch = self.forward.make_scratch_vec();
        (0..self.num_frames(samples.len()))
            .map(|t| {
                let start = (t * self.hop) as isize - half;
                for (i, b) in buf.iter_mut().enumerate() {
                    let k = start + i as isize;
                    let x = if k >= 0 && (k as usize) < samples.len() {
                        samples[k as usize]
                    } else {
                        0.0
                    };
                    *b = x * self.window[i];
                }
                let mut spec = self.forward.make_output_vec();
                self.forward
                    .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                    .expect("fft buffer sizes are fixed by the plan");
                spec
            })
            .collect()
    }

    /// Weighted overlap-add inverse; returns exactly `frames.len() * hop` samples.
    pub fn inverse(&self, frames: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let half = self.n_fft / 2;
        let total = frames.len().saturating_sub(1) * self.hop + self.n_fft;
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut scratch = self.inverse.make_scratch_vec();
        let mut time = self.inverse.make_output_vec();
        for (t, frame) in frames.iter().enumerate() {
            let mut spec = frame.clone();
            // the real inverse needs purely real DC/Nyquist bins
            spec[0].im = 0.0;
            let last = spec.len() - 1;
            spec[last].im = 0.0;
            self.inverse
                .process_with_scratch(&mut spec, &mut time, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            let offset = t * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                out[offset + i] += time[i] / self.n_fft as f64 * w;
                norm[offset + i] += w * w;
            }
        }
        let len = frames.len() * self.hop;
        (0..len)
            .map(|i| {
                let k = i + half;
                if k < total && norm[k] > 1e-8 {
                    out[k] / norm[k]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_forward_recovers_interior_samples() {
        let stft = Stft::new(64, 16);
        let x: Vec<f64> = (0..320).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let spec = stft.forward(&x);
        assert_eq!(spec.len(), 20);
        let y = stft.inverse(&spec);
        assert_eq!(y.len(), 320);
        for i in 0..320 {
            assert!((x[i] - y[i]).abs() < 1e-9, "sample {i}: {} vs {}", x[i], y[i]);
        }
    }
}
