//! Conditional disentangled sequential VAE.
//!
//! `X -> E_share -> {E_sq -> q(z_s|X), E_cq -> q(z_c|X)}`, `A_X -> E_cp -> p(z_c|A_X)`
//! plus optional unit logits, and `D(z_s, z_c) -> X_hat`. All stacks are stride-1, so
//! time length is preserved end to end.

mod loss;
mod mask;
mod model;
mod train;

pub use loss::{
    kld_diag_gaussian, kld_weighted, masked_nll, reconstruction_error, ContentPrior,
    LossBreakdown, LossConfig, ReconMode,
};
pub use mask::{sample_mask, MaskConfig, MaskSet};
pub use model::{ArchConfig, Batch, Cdsvae, ConditionSpec, LossOutput, MelNorm, CHECKPOINT_KIND};
pub use train::{evaluate, train, EpochSummary, HeldOutLoss, LogRecord, TrainConfig, TrainItem, Trainer};

use candle_core::Tensor;

use crate::error::{invalid, Result};
use crate::nn::to_vec;
use crate::rng::SeededRng;

/// Diagonal Gaussians, `(B, T, D)` means and standard deviations (`T = 1` for speaker).
#[derive(Debug, Clone)]
pub struct GaussianSeq {
    pub mean: Tensor,
    pub std: Tensor,
}

impl GaussianSeq {
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        if mean.dims() != std.dims() {
            return Err(invalid!(
                "mean {:?} and std {:?} shapes differ",
                mean.dims(),
                std.dims()
            ));
        }
        let stds = to_vec(&std)?;
        if stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid!("standard deviations must be finite and positive"));
        }
        if to_vec(&mean)?.iter().any(|m| !m.is_finite()) {
            return Err(invalid!("means must be finite"));
        }
        Ok(Self { mean, std })
    }

    /// Unchecked construction for values produced inside the model (softplus keeps std > 0).
    pub(crate) fn from_parts(mean: Tensor, std: Tensor) -> Self {
        Self { mean, std }
    }

    pub fn standard_like(other: &GaussianSeq) -> Result<Self> {
        Ok(Self {
            mean: other.mean.zeros_like()?,
            std: other.std.ones_like()?,
        })
    }

    pub fn dims(&self) -> &[usize] {
        self.mean.dims()
    }

    pub fn detach(&self) -> Self {
        Self {
            mean: self.mean.detach(),
            std: self.std.detach(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    PosteriorSpeaker,
    PosteriorContent,
    PriorContent,
}

/// A drawn `z_s` (`(B, 1, D)`) or `z_c` (`(B, T, D)`).
#[derive(Debug, Clone)]
pub struct LatentSample {
    pub values: Tensor,
    pub source: LatentSource,
}

impl LatentSample {
    /// The distribution mean, used when generation should be noise-free.
    pub fn mean_of(g: &GaussianSeq, source: LatentSource) -> Self {
        Self {
            values: g.mean.clone(),
            source,
        }
    }
}

/// `mean + std * eps` with `eps ~ N(0, I)` drawn from `rng`.
pub fn reparameterize(g: &GaussianSeq, source: LatentSource, rng: &mut SeededRng) -> Result<LatentSample> {
    let noise = standard_noise(g, rng)?;
    reparameterize_with(g, source, &noise)
}

/// `mean + std * noise` for a caller-supplied noise tensor of the same shape.
pub fn reparameterize_with(g: &GaussianSeq, source: LatentSource, noise: &Tensor) -> Result<LatentSample> {
    if noise.dims() != g.dims() {
        return Err(invalid!("noise shape {:?} does not match {:?}", noise.dims(), g.dims()));
    }
    Ok(LatentSample {
        values: (&g.mean + (&g.std * noise)?)?,
        source,
    })
}

pub(crate) fn standard_noise(g: &GaussianSeq, rng: &mut SeededRng) -> Result<Tensor> {
    Ok(Tensor::from_vec(rng.normals(g.mean.elem_count()), g.mean.shape(), g.mean.device())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::device;

    fn gauss(mean: f64, std: f64, n: usize) -> GaussianSeq {
        GaussianSeq::new(
            Tensor::full(mean, (1, n, 1), &device()).unwrap(),
            Tensor::full(std, (1, n, 1), &device()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn vanishing_std_returns_the_mean() {
        let g = gauss(1.25, 1e-300, 4);
        let s = reparameterize(&g, LatentSource::PriorContent, &mut SeededRng::new(0)).unwrap();
        assert_eq!(to_vec(&s.values).unwrap(), vec![1.25; 4]);
    }

    #[test]
    fn same_seed_same_sample() {
        let g = gauss(0.0, 2.0, 8);
        let a = reparameterize(&g, LatentSource::PriorContent, &mut SeededRng::new(11)).unwrap();
        let b = reparameterize(&g, LatentSource::PriorContent, &mut SeededRng::new(11)).unwrap();
        assert_eq!(to_vec(&a.values).unwrap(), to_vec(&b.values).unwrap());
    }

    #[test]
    fn monte_carlo_mean_is_within_three_standard_errors() {
        let n = 100_000;
        let (mu, sigma) = (0.7, 1.9);
        let g = gauss(mu, sigma, n);
        let s = reparameterize(&g, LatentSource::PosteriorContent, &mut SeededRng::new(5)).unwrap();
        let vals = to_vec(&s.values).unwrap();
        let mean = vals.iter().sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 3.0 * sigma / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn invalid_gaussians_are_rejected() {
        let m = Tensor::zeros((1, 2, 1), crate::nn::DTYPE, &device()).unwrap();
        assert!(GaussianSeq::new(m.clone(), m.clone()).is_err());
        let s = Tensor::ones((1, 3, 1), crate::nn::DTYPE, &device()).unwrap();
        assert!(GaussianSeq::new(m, s).is_err());
    }
}
