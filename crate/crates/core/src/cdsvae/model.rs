use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::loss::{kld_diag_gaussian, kld_weighted, masked_nll, reconstruction_error};
use super::{
    reparameterize, reparameterize_with, standard_noise, ContentPrior, GaussianSeq, LatentSample, LatentSource, LossBreakdown,
    LossConfig, MaskConfig, MaskSet, ReconMode,
};
use crate::alignment::{AlignmentKind, AlignmentSequence, NUM_PHONES};
use crate::error::{invalid, Result};
use crate::features::{MelSpectrogram, N_MELS};
use crate::nn::{
    device, instance_norm_2d, scalar, softplus, to_vec, AdamState, BiLstm, Checkpoint, Conv1d,
    Embedding, Linear, ParamStore, VanillaRnn, DTYPE,
};
use crate::rng::{RngState, SeededRng};

pub const CHECKPOINT_KIND: &str = "cdsvae";

/// Token vocabulary of the alignment the prior is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub kind: AlignmentKind,
    /// Includes the mask symbol (and the pad symbol for FA).
    pub vocab_size: u32,
}

impl ConditionSpec {
    pub fn ua(num_units: u32) -> Self {
        Self {
            kind: AlignmentKind::Ua,
            vocab_size: num_units + 1,
        }
    }

    pub fn fa() -> Self {
        Self {
            kind: AlignmentKind::Fa,
            vocab_size: crate::alignment::FA_VOCAB,
        }
    }

    pub fn num_classes(&self) -> u32 {
        match self.kind {
            AlignmentKind::Fa => NUM_PHONES,
            AlignmentKind::Ua => self.vocab_size - 1,
        }
    }

    pub fn mask_token(&self) -> u32 {
        match self.kind {
            AlignmentKind::Fa => crate::alignment::FA_MASK,
            AlignmentKind::Ua => self.vocab_size - 1,
        }
    }
}

/// Layer sizes. [`ArchConfig::full`] is the published stack; [`ArchConfig::desk`]
/// shrinks widths for CPU-scale experiments without changing the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub mel_bins: usize,
    pub latent_dim: usize,
    pub shared_channels: usize,
    pub shared_layers: usize,
    pub kernel: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub content_rnn_hidden: usize,
    pub prior_embed_dim: usize,
    pub prior_hidden: usize,
    pub prior_layers: usize,
    pub decoder_channels: usize,
    pub decoder_pre_layers: usize,
    pub decoder_post_layers: usize,
    pub condition: ConditionSpec,
    /// Linear unit classifier on top of the prior encoder (needed for masked unit prediction).
    pub unit_classifier: bool,
}

impl ArchConfig {
    /// Conv1D(256, 5, 2, 1) x3 shared encoder, BiLSTM(512, 2) encoders, RNN(512, 1)
    /// content head, 64-dim latents, Conv1D(512, 5, 2, 1) decoder pre/post nets.
    pub fn full(condition: ConditionSpec) -> Self {
        Self {
            mel_bins: N_MELS,
            latent_dim: 64,
            shared_channels: 256,
            shared_layers: 3,
            kernel: 5,
            encoder_hidden: 512,
            encoder_layers: 2,
            content_rnn_hidden: 512,
            prior_embed_dim: 256,
            prior_hidden: 512,
            prior_layers: 2,
            decoder_channels: 512,
            decoder_pre_layers: 3,
            decoder_post_layers: 4,
            condition,
            unit_classifier: true,
        }
    }

    pub fn desk(condition: ConditionSpec) -> Self {
        Self {
            shared_channels: 64,
            encoder_hidden: 64,
            content_rnn_hidden: 64,
            prior_embed_dim: 32,
            prior_hidden: 64,
            decoder_channels: 96,
            ..Self::full(condition)
        }
    }

    /// A few scalars per layer, for finite-difference checks.
    pub fn tiny(condition: ConditionSpec, mel_bins: usize) -> Self {
        Self {
            mel_bins,
            latent_dim: 3,
            shared_channels: 4,
            shared_layers: 1,
            kernel: 3,
            encoder_hidden: 2,
            encoder_layers: 1,
            content_rnn_hidden: 3,
            prior_embed_dim: 3,
            prior_hidden: 2,
            prior_layers: 1,
            decoder_channels: 4,
            decoder_pre_layers: 1,
            decoder_post_layers: 2,
            condition,
            unit_classifier: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(invalid!("kernel size must be odd to preserve length, got {}", self.kernel));
        }
        if self.decoder_post_layers == 0 || self.shared_layers == 0 || self.encoder_layers == 0 {
            return Err(invalid!("layer counts must be positive"));
        }
        if self.condition.vocab_size < 2 {
            return Err(invalid!("condition vocabulary too small"));
        }
        Ok(())
    }
}

/// Per-bin standardization applied to mel frames before they enter the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelNorm {
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
        }
    }

    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Self {
        let mut sum = vec![0.0f64; N_MELS];
        let mut sq = vec![0.0f64; N_MELS];
        let mut n = 0usize;
        for mel in mels {
            for t in 0..mel.num_frames() {
                for (k, &v) in mel.frame(t).iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += (v as f64).powi(2);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(N_MELS);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Self { mean, std }
    }
}

/// A padded training or inference batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(B, T, bins)`, already normalized.
    pub mel: Tensor,
    /// Alignment tokens per sequence, each of length `T`.
    pub tokens: Vec<Vec<u32>>,
    /// Real frames per sequence; frames past this are padding.
    pub valid: Vec<usize>,
    /// `(B, T)` frame weights, 1 for real frames and 0 for padding.
    pub weights: Tensor,
}

impl Batch {
    pub fn from_tensor(mel: Tensor, tokens: Vec<Vec<u32>>, valid: Vec<usize>) -> Result<Self> {
        let (b, t, _) = mel.dims3()?;
        if tokens.len() != b || valid.len() != b {
            return Err(invalid!("batch of {b} mels with {} alignments", tokens.len()));
        }
        if let Some(i) = tokens.iter().position(|s| s.len() != t) {
            return Err(invalid!(
                "alignment {i} has {} frames, mel has {t}; they must be frame-synchronous",
                tokens[i].len()
            ));
        }
        if valid.iter().any(|&v| v == 0 || v > t) {
            return Err(invalid!("valid lengths must be in [1, {t}]"));
        }
        let w: Vec<f64> = valid
            .iter()
            .flat_map(|&v| (0..t).map(move |i| if i < v { 1.0 } else { 0.0 }))
            .collect();
        Ok(Self {
            mel,
            tokens,
            valid,
            weights: Tensor::from_vec(w, (b, t), &device())?,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }
}

/// Output of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    /// Reconstruction error through the posterior content path.
    pub recon_posterior: f64,
    /// Reconstruction error through the prior content path (dual mode only).
    pub recon_prior: Option<f64>,
}

#[derive(Debug)]
pub struct Cdsvae {
    arch: ArchConfig,
    norm: MelNorm,
    params: ParamStore,
    shared: Vec<Conv1d>,
    speaker_rnn: BiLstm,
    speaker_mean: Linear,
    speaker_std: Linear,
    content_rnn: BiLstm,
    content_head: VanillaRnn,
    content_mean: Linear,
    content_std: Linear,
    prior_embed: Embedding,
    prior_rnn: BiLstm,
    prior_mean: Linear,
    prior_std: Linear,
    prior_classifier: Option<Linear>,
    dec_pre: Vec<Conv1d>,
    dec_pre_out: Linear,
    dec_post: Vec<Conv1d>,
}

impl Cdsvae {
    pub fn new(arch: ArchConfig, norm: MelNorm, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        if norm.mean.len() != arch.mel_bins || norm.std.len() != arch.mel_bins {
            return Err(invalid!("mel normalization has wrong width"));
        }
        let a = &arch;
        let ps = &mut ParamStore::new();
        let pad = a.kernel / 2;
        let lat = a.latent_dim;

        let shared = (0..a.shared_layers)
            .map(|l| {
                let input = if l == 0 { a.mel_bins } else { a.shared_channels };
                Conv1d::new(ps, &format!("share.conv{l}"), input, a.shared_channels, a.kernel, pad, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let enc_out = 2 * a.encoder_hidden;
        let speaker_rnn = BiLstm::new(ps, "sq.rnn", a.shared_channels, a.encoder_hidden, a.encoder_layers, rng)?;
        let speaker_mean = Linear::new(ps, "sq.mean", enc_out, lat, rng)?;
        let speaker_std = Linear::new(ps, "sq.std", enc_out, lat, rng)?;
        let content_rnn = BiLstm::new(ps, "cq.rnn", a.shared_channels, a.encoder_hidden, a.encoder_layers, rng)?;
        let content_head = VanillaRnn::new(ps, "cq.head", enc_out, a.content_rnn_hidden, rng)?;
        let content_mean = Linear::new(ps, "cq.mean", a.content_rnn_hidden, lat, rng)?;
        let content_std = Linear::new(ps, "cq.std", a.content_rnn_hidden, lat, rng)?;
        let prior_embed = Embedding::new(ps, "cp.embed", a.condition.vocab_size as usize, a.prior_embed_dim, rng)?;
        let prior_rnn = BiLstm::new(ps, "cp.rnn", a.prior_embed_dim, a.prior_hidden, a.prior_layers, rng)?;
        let prior_mean = Linear::new(ps, "cp.mean", 2 * a.prior_hidden, lat, rng)?;
        let prior_std = Linear::new(ps, "cp.std", 2 * a.prior_hidden, lat, rng)?;
        let prior_classifier = if a.unit_classifier {
            Some(Linear::new(ps, "cp.classifier", 2 * a.prior_hidden, a.condition.num_classes() as usize, rng)?)
        } else {
            None
        };
        let dec_pre = (0..a.decoder_pre_layers)
            .map(|l| {
                let input = if l == 0 { 2 * lat } else { a.decoder_channels };
                Conv1d::new(ps, &format!("dec.pre{l}"), input, a.decoder_channels, a.kernel, pad, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let pre_width = if a.decoder_pre_layers == 0 { 2 * lat } else { a.decoder_channels };
        let dec_pre_out = Linear::new(ps, "dec.pre_out", pre_width, a.mel_bins, rng)?;
        let dec_post = (0..a.decoder_post_layers)
            .map(|l| {
                let input = if l == 0 { a.mel_bins } else { a.decoder_channels };
                let output = if l + 1 == a.decoder_post_layers { a.mel_bins } else { a.decoder_channels };
                Conv1d::new(ps, &format!("dec.post{l}"), input, output, a.kernel, pad, rng)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            params: std::mem::take(ps),
            arch,
            norm,
            shared,
            speaker_rnn,
            speaker_mean,
            speaker_std,
            content_rnn,
            content_head,
            content_mean,
            content_std,
            prior_embed,
            prior_rnn,
            prior_mean,
            prior_std,
            prior_classifier,
            dec_pre,
            dec_pre_out,
            dec_post,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn norm(&self) -> &MelNorm {
        &self.norm
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(Conv1D -> InstanceNorm2D -> ReLU) x N`; `(B, T, bins) -> (B, T, C)`.
    pub fn encode_shared(&self, mel: &Tensor) -> Result<Tensor> {
        let mut h = mel.clone();
        for conv in &self.shared {
            h = instance_norm_2d(&conv.forward(&h)?)?.relu()?;
        }
        Ok(h)
    }

    /// BiLSTM, average pooling over (weighted) frames, mean/std heads -> `(B, 1, D)`.
    pub fn encode_speaker(&self, shared: &Tensor, weights: Option<&Tensor>) -> Result<GaussianSeq> {
        let h = self.speaker_rnn.forward(shared)?;
        let pooled = match weights {
            Some(w) => {
                let w3 = w.unsqueeze(2)?;
                let sum = h.broadcast_mul(&w3)?.sum_keepdim(1)?;
                sum.broadcast_div(&w3.sum_keepdim(1)?)?
            }
            None => h.mean_keepdim(1)?,
        };
        Ok(GaussianSeq::from_parts(
            self.speaker_mean.forward(&pooled)?,
            softplus(&self.speaker_std.forward(&pooled)?)?,
        ))
    }

    /// BiLSTM -> RNN -> mean/std heads, one Gaussian per frame.
    pub fn encode_content(&self, shared: &Tensor) -> Result<GaussianSeq> {
        let h = self.content_head.forward(&self.content_rnn.forward(shared)?)?;
        Ok(GaussianSeq::from_parts(
            self.content_mean.forward(&h)?,
            softplus(&self.content_std.forward(&h)?)?,
        ))
    }

    /// Conditional content prior from alignment tokens, with masked frames replaced by the
    /// mask symbol. Returns unit logits when the classifier head is present.
    pub fn encode_prior(&self, tokens: &[Vec<u32>], masks: &[MaskSet]) -> Result<(GaussianSeq, Option<Tensor>)> {
        let b = tokens.len();
        let t = tokens.first().map_or(0, Vec::len);
        if masks.len() != b {
            return Err(invalid!("{b} alignments but {} masks", masks.len()));
        }
        let vocab = self.arch.condition.vocab_size;
        let mask_tok = self.arch.condition.mask_token();
        let mut flat = Vec::with_capacity(b * t);
        for (seq, m) in tokens.iter().zip(masks) {
            if seq.len() != t {
                return Err(invalid!("alignments in a batch must share a length"));
            }
            if let Some(&bad) = seq.iter().find(|&&x| x >= vocab) {
                return Err(invalid!("alignment token {bad} outside vocabulary of {vocab}"));
            }
            if m.seq_len() != t {
                return Err(invalid!("mask covers {} frames, alignment has {t}", m.seq_len()));
            }
            flat.extend(m.apply(seq, mask_tok));
        }
        let ids = Tensor::from_vec(flat, (b, t), &device())?;
        let h = self.prior_rnn.forward(&self.prior_embed.forward(&ids)?)?;
        let prior = GaussianSeq::from_parts(
            self.prior_mean.forward(&h)?,
            softplus(&self.prior_std.forward(&h)?)?,
        );
        let logits = match &self.prior_classifier {
            Some(c) => Some(c.forward(&h)?),
            None => None,
        };
        Ok((prior, logits))
    }

    /// Broadcast `z_s` over time, concatenate with `z_c`, then prenet + postnet residual.
    pub fn decode(&self, zs: &LatentSample, zc: &LatentSample) -> Result<Tensor> {
        let (b, one, ds) = zs.values.dims3()?;
        let (bc, t, dc) = zc.values.dims3()?;
        if one != 1 || b != bc || ds != self.arch.latent_dim || dc != self.arch.latent_dim {
            return Err(invalid!(
                "decoder expects z_s (B, 1, {d}) and z_c (B, T, {d}), got {:?} and {:?}",
                zs.values.dims(),
                zc.values.dims(),
                d = self.arch.latent_dim
            ));
        }
        let speaker = zs.values.broadcast_as((b, t, ds))?;
        let mut h = Tensor::cat(&[&speaker, &zc.values], 2)?;
        for conv in &self.dec_pre {
            h = conv.forward(&instance_norm_2d(&h)?)?.relu()?;
        }
        let pre = self.dec_pre_out.forward(&h)?;
        let mut post = pre.clone();
        let last = self.dec_post.len() - 1;
        for (l, conv) in self.dec_post.iter().enumerate() {
            post = conv.forward(&post)?;
            if l < last {
                post = instance_norm_2d(&post.tanh()?)?;
            }
        }
        Ok((pre + post)?)
    }

    /// Full training objective on a batch.
    pub fn loss(
        &self,
        batch: &Batch,
        cfg: &LossConfig,
        mask_cfg: &MaskConfig,
        mode: ReconMode,
        rng: &mut SeededRng,
    ) -> Result<LossOutput> {
        cfg.validate()?;
        let shared = self.encode_shared(&batch.mel)?;
        let qs = self.encode_speaker(&shared, Some(&batch.weights))?;
        let qc = self.encode_content(&shared)?;
        let t = batch.frames();

        let mup_on = cfg.gamma > 0.0 && cfg.content_prior == ContentPrior::Conditional;
        if mup_on && self.prior_classifier.is_none() {
            return Err(invalid!("masked unit prediction needs the unit classifier head"));
        }
        let masks: Vec<MaskSet> = batch
            .valid
            .iter()
            .map(|&v| {
                if mup_on {
                    super::sample_mask(t, v, mask_cfg, rng)
                } else {
                    MaskSet::empty(t)
                }
            })
            .collect();

        let zs = reparameterize(&qs, LatentSource::PosteriorSpeaker, rng)?;
        // the prior path in dual mode reuses this noise
        let eps_c = standard_noise(&qc, rng)?;
        let zc = reparameterize_with(&qc, LatentSource::PosteriorContent, &eps_c)?;
        let recon_q = reconstruction_error(&self.decode(&zs, &zc)?, &batch.mel, &batch.weights)?;
        let kld_s = kld_diag_gaussian(&qs, &GaussianSeq::standard_like(&qs)?)?;

        let zero = || Tensor::zeros((), DTYPE, &device());
        let (kld_c, mup, prior) = match cfg.content_prior {
            ContentPrior::Conditional => {
                let (prior, logits) = self.encode_prior(&batch.tokens, &masks)?;
                let kld_c = kld_weighted(&qc, &prior, &batch.weights)?;
                let mup = match (&logits, mup_on) {
                    (Some(l), true) => masked_nll(l, &batch.tokens, &masks)?,
                    _ => zero()?,
                };
                (kld_c, mup, Some(prior))
            }
            ContentPrior::Standard => {
                let kld_c = kld_weighted(&qc, &GaussianSeq::standard_like(&qc)?, &batch.weights)?;
                (kld_c, zero()?, None)
            }
        };

        let (recon, recon_prior) = match mode {
            ReconMode::Posterior => (recon_q.clone(), None),
            ReconMode::Dual => {
                let prior = prior.ok_or_else(|| invalid!("dual reconstruction needs the conditional prior"))?;
                let zcp = reparameterize_with(&prior, LatentSource::PriorContent, &eps_c)?;
                let recon_p = reconstruction_error(&self.decode(&zs, &zcp)?, &batch.mel, &batch.weights)?;
                let avg = ((&recon_q + &recon_p)? * 0.5)?;
                (avg, Some(scalar(&recon_p)?))
            }
        };

        let total = (((&recon + (&kld_s * cfg.alpha)?)? + (&kld_c * cfg.beta)?)? + (&mup * cfg.gamma)?)?;
        let breakdown = LossBreakdown {
            recon: scalar(&recon)?,
            kld_s: scalar(&kld_s)?,
            kld_c: scalar(&kld_c)?,
            mup: scalar(&mup)?,
            total: scalar(&total)?,
        };
        Ok(LossOutput {
            total,
            breakdown,
            recon_posterior: scalar(&recon_q)?,
            recon_prior,
        })
    }

    // --- single-utterance helpers ------------------------------------------------

    /// Normalized `(1, T, bins)` tensor for a mel spectrogram.
    pub fn mel_tensor(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        self.mel_batch(&[mel])
    }

    /// Normalized `(B, T, bins)` tensor; all mels must share a length.
    pub fn mel_batch(&self, mels: &[&MelSpectrogram]) -> Result<Tensor> {
        if self.arch.mel_bins != N_MELS {
            return Err(invalid!("model was built for {} bins, mel has {N_MELS}", self.arch.mel_bins));
        }
        let t = mels.first().map_or(0, |m| m.num_frames());
        let mut v = Vec::with_capacity(mels.len() * t * N_MELS);
        for m in mels {
            if m.num_frames() != t {
                return Err(invalid!("mels in a batch must share a length"));
            }
            for (i, &x) in m.data().iter().enumerate() {
                let k = i % N_MELS;
                v.push((x as f64 - self.norm.mean[k]) / self.norm.std[k]);
            }
        }
        Ok(Tensor::from_vec(v, (mels.len(), t, N_MELS), &device())?)
    }

    /// Undo normalization of a `(1, T, bins)` model output.
    pub fn tensor_to_mel(&self, t: &Tensor) -> Result<MelSpectrogram> {
        let (b, frames, bins) = t.dims3()?;
        if b != 1 || bins != N_MELS {
            return Err(invalid!("expected a (1, T, {N_MELS}) tensor, got {:?}", t.dims()));
        }
        let data = to_vec(t)?
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let k = i % N_MELS;
                (x * self.norm.std[k] + self.norm.mean[k]) as f32
            })
            .collect();
        MelSpectrogram::from_frames(data, frames)
    }

    pub fn speaker_posterior(&self, mel: &MelSpectrogram) -> Result<GaussianSeq> {
        let shared = self.encode_shared(&self.mel_tensor(mel)?)?;
        Ok(self.encode_speaker(&shared, None)?.detach())
    }

    pub fn content_posterior(&self, mel: &MelSpectrogram) -> Result<GaussianSeq> {
        let shared = self.encode_shared(&self.mel_tensor(mel)?)?;
        Ok(self.encode_content(&shared)?.detach())
    }

    pub fn content_prior(&self, alignment: &AlignmentSequence) -> Result<GaussianSeq> {
        self.check_condition(alignment)?;
        let (prior, _) = self.encode_prior(&[alignment.tokens().to_vec()], &[MaskSet::empty(alignment.len())])?;
        Ok(prior.detach())
    }

    pub fn check_condition(&self, a: &AlignmentSequence) -> Result<()> {
        let c = self.arch.condition;
        if a.kind() != c.kind || a.vocab_size() != c.vocab_size {
            return Err(invalid!(
                "model is conditioned on {} with vocabulary {}, got {} with {}",
                c.kind,
                c.vocab_size,
                a.kind(),
                a.vocab_size()
            ));
        }
        Ok(())
    }

    /// Decode using posterior means for both latents.
    pub fn reconstruct(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        let shared = self.encode_shared(&self.mel_tensor(mel)?)?;
        let zs = LatentSample::mean_of(&self.encode_speaker(&shared, None)?, LatentSource::PosteriorSpeaker);
        let zc = LatentSample::mean_of(&self.encode_content(&shared)?, LatentSource::PosteriorContent);
        self.tensor_to_mel(&self.decode(&zs, &zc)?)
    }

    // --- persistence --------------------------------------------------------------

    pub fn checkpoint(&self, optimizer: &AdamState, step: u64, epoch: u32, rng: RngState) -> Checkpoint {
        let config = serde_json::json!({ "arch": self.arch, "norm": self.norm });
        Checkpoint::capture(CHECKPOINT_KIND, config, &self.params, optimizer, step, epoch, rng)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let arch: ArchConfig = serde_json::from_value(ck.config["arch"].clone())
            .map_err(|e| invalid!("checkpoint architecture: {e}"))?;
        let norm: MelNorm = serde_json::from_value(ck.config["norm"].clone())
            .map_err(|e| invalid!("checkpoint normalization: {e}"))?;
        let model = Self::new(arch, norm, &mut SeededRng::new(0))?;
        model.params.restore(&ck.params)?;
        Ok(model)
    }
}
