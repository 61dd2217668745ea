use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use super::{GaussianSeq, MaskSet};
use crate::error::{invalid, Result};
use crate::nn::{device, log_softmax, DTYPE};

/// Which content prior the KLD_c term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentPrior {
    /// `p(z_c | A_X)` from the prior encoder.
    #[default]
    Conditional,
    /// Alignment-free `N(0, I)` (plain DSVAE).
    Standard,
}

/// Loss weights: `total = recon + alpha * kld_s + beta * kld_c + gamma * mup`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    /// 0 disables masked unit prediction entirely (no masking, no classifier loss).
    pub gamma: f64,
    #[serde(default)]
    pub content_prior: ContentPrior,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 10.0,
            gamma: 1.0,
            content_prior: ContentPrior::Conditional,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid!("loss weight {name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Where the decoder's content latent comes from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Posterior content encoder only.
    #[default]
    Posterior,
    /// Average of the posterior-path and prior-path reconstructions.
    Dual,
}

/// Scalar loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kld_s: f64,
    pub kld_c: f64,
    pub mup: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recombine(&self, cfg: &LossConfig) -> f64 {
        self.recon + cfg.alpha * self.kld_s + cfg.beta * self.kld_c + cfg.gamma * self.mup
    }

    pub fn is_finite(&self) -> bool {
        [self.recon, self.kld_s, self.kld_c, self.mup, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn elementwise_kld(q: &GaussianSeq, p: &GaussianSeq) -> Result<Tensor> {
    if q.dims() != p.dims() {
        return Err(invalid!(
            "KLD shape mismatch: q {:?} vs p {:?}",
            q.dims(),
            p.dims()
        ));
    }
    let log_ratio = (p.std.log()? - q.std.log()?)?;
    let num = (q.std.sqr()? + (&q.mean - &p.mean)?.sqr()?)?;
    let quad = (num / (p.std.sqr()? * 2.0)?)?;
    Ok(((log_ratio + quad)? - 0.5)?)
}

/// `KL(q || p)` for diagonal Gaussians: summed over latent dims, averaged over frames and batch.
pub fn kld_diag_gaussian(q: &GaussianSeq, p: &GaussianSeq) -> Result<Tensor> {
    Ok(elementwise_kld(q, p)?.sum(D::Minus1)?.mean_all()?)
}

/// As [`kld_diag_gaussian`] but averaging over frames with `(B, T)` weights.
pub fn kld_weighted(q: &GaussianSeq, p: &GaussianSeq, weights: &Tensor) -> Result<Tensor> {
    let per_frame = elementwise_kld(q, p)?.sum(D::Minus1)?;
    weighted_mean(&per_frame, weights)
}

fn weighted_mean(per_frame: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let total = (per_frame * weights)?.sum_all()?;
    let norm = weights.sum_all()?;
    Ok(total.broadcast_div(&norm)?)
}

/// Squared error summed over mel bins, averaged over (weighted) frames.
pub fn reconstruction_error(predicted: &Tensor, target: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if predicted.dims() != target.dims() {
        return Err(invalid!(
            "reconstruction shape mismatch: {:?} vs {:?}",
            predicted.dims(),
            target.dims()
        ));
    }
    let per_frame = (predicted - target)?.sqr()?.sum(D::Minus1)?;
    weighted_mean(&per_frame, weights)
}

/// Mean negative log-likelihood of `targets` under `logits` (`(B, T, V)`),
/// over masked frames only. Zero when no frame is masked.
///
/// Only masked rows are gathered before the softmax, so logits and targets at
/// unmasked frames cannot influence the value.
pub fn masked_nll(logits: &Tensor, targets: &[Vec<u32>], masks: &[MaskSet]) -> Result<Tensor> {
    let (b, t, v) = logits.dims3()?;
    if targets.len() != b || masks.len() != b {
        return Err(invalid!(
            "batch of {b} logits but {} targets and {} masks",
            targets.len(),
            masks.len()
        ));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, (tgt, m)) in targets.iter().zip(masks).enumerate() {
        if tgt.len() != t || m.seq_len() != t {
            return Err(invalid!(
                "sequence {i}: {} targets and mask over {} frames for {t} logit frames",
                tgt.len(),
                m.seq_len()
            ));
        }
        for &f in m.indices() {
            if tgt[f] as usize >= v {
                return Err(invalid!("target {} outside {v} classes", tgt[f]));
            }
            rows.push((i * t + f) as u32);
            labels.push(tgt[f]);
        }
    }
    if rows.is_empty() {
        return Ok(Tensor::zeros((), DTYPE, &device())?);
    }
    let n = rows.len();
    let idx = Tensor::from_vec(rows, n, &device())?;
    let picked = logits.reshape((b * t, v))?.index_select(&idx, 0)?;
    let lp = log_softmax(&picked)?;
    let labels = Tensor::from_vec(labels, (n, 1), &device())?.to_dtype(DType::U32)?;
    let ll = lp.gather(&labels, 1)?;
    Ok(ll.mean_all()?.neg()?)
}
