use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{key_bias, length_mask, PhonemeSequence, StageState};
use crate::alignment::{PhonemeDurations, NUM_PHONES};
use crate::error::{invalid, Result};
use crate::nn::{device, to_vec, Checkpoint, Conv1d, Embedding, LayerNorm, Linear, MultiHeadAttention, ParamStore, StepDecay};
use crate::rng::SeededRng;

pub const DURATION_KIND: &str = "duration";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationArch {
    pub model_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    pub attention_layers: usize,
    pub conv_channels: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub speaker_dim: usize,
}

impl DurationArch {
    /// Embedding -> MHA(256, 128, 128, 2) x4 -> Conv1D(256, 3) x2 -> Dense(1).
    pub fn full() -> Self {
        Self {
            model_dim: 256,
            key_dim: 128,
            value_dim: 128,
            heads: 2,
            attention_layers: 4,
            conv_channels: 256,
            conv_layers: 2,
            kernel: 3,
            speaker_dim: 64,
        }
    }

    pub fn desk() -> Self {
        Self {
            model_dim: 64,
            key_dim: 32,
            value_dim: 32,
            conv_channels: 64,
            ..Self::full()
        }
    }

    pub fn tiny(speaker_dim: usize) -> Self {
        Self {
            model_dim: 4,
            key_dim: 4,
            value_dim: 4,
            heads: 2,
            attention_layers: 1,
            conv_channels: 3,
            conv_layers: 1,
            kernel: 3,
            speaker_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.key_dim % self.heads != 0 || self.value_dim % self.heads != 0 {
            return Err(invalid!("attention widths must divide evenly across heads"));
        }
        if self.kernel % 2 == 0 || self.conv_layers == 0 {
            return Err(invalid!("duration conv stack needs an odd kernel and at least one layer"));
        }
        Ok(())
    }
}

/// Speaker-aware duration predictor; outputs log-frame durations per phoneme.
#[derive(Debug)]
pub struct DurationModel {
    arch: DurationArch,
    params: ParamStore,
    embed: Embedding,
    attention: Vec<(MultiHeadAttention, LayerNorm)>,
    speaker: Linear,
    convs: Vec<Conv1d>,
    out: Linear,
}

fn sinusoid(n: usize, dim: usize) -> Result<Tensor> {
    let mut v = vec![0.0f64; n * dim];
    for pos in 0..n {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            v[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Ok(Tensor::from_vec(v, (1, n, dim), &device())?)
}

impl DurationModel {
    pub fn new(arch: DurationArch, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let mut ps = ParamStore::new();
        let a = &arch;
        let embed = Embedding::new(&mut ps, "dur.embed", NUM_PHONES as usize, a.model_dim, rng)?;
        let attention = (0..a.attention_layers)
            .map(|l| {
                Ok((
                    MultiHeadAttention::new(&mut ps, &format!("dur.mha{l}"), a.model_dim, a.key_dim, a.value_dim, a.heads, rng)?,
                    LayerNorm::new(&mut ps, &format!("dur.ln{l}"), a.model_dim)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let speaker = Linear::new(&mut ps, "dur.speaker", a.speaker_dim, a.model_dim, rng)?;
        let convs = (0..a.conv_layers)
            .map(|l| {
                let input = if l == 0 { a.model_dim } else { a.conv_channels };
                Conv1d::new(&mut ps, &format!("dur.conv{l}"), input, a.conv_channels, a.kernel, a.kernel / 2, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(&mut ps, "dur.out", a.conv_channels, 1, rng)?;
        Ok(Self {
            arch,
            params: ps,
            embed,
            attention,
            speaker,
            convs,
            out,
        })
    }

    pub fn arch(&self) -> &DurationArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(B, N)` log-durations for right-padded phoneme batches; `speakers` is `(B, speaker_dim)`.
    pub fn forward(&self, phonemes: &[Vec<u32>], lengths: &[usize], speakers: &Tensor) -> Result<Tensor> {
        let b = phonemes.len();
        let n = phonemes.first().map_or(0, Vec::len);
        if lengths.len() != b || speakers.dims() != [b, self.arch.speaker_dim] {
            return Err(invalid!(
                "duration batch of {b} sequences needs {b} lengths and a ({b}, {}) speaker matrix",
                self.arch.speaker_dim
            ));
        }
        let mut flat = Vec::with_capacity(b * n);
        for (seq, &len) in phonemes.iter().zip(lengths) {
            if seq.len() != n || len == 0 || len > n {
                return Err(invalid!("phoneme batch must be right-padded to a common length"));
            }
            if let Some(&bad) = seq.iter().find(|&&p| p >= NUM_PHONES) {
                return Err(invalid!("phoneme id {bad} outside the {NUM_PHONES}-phone table"));
            }
            flat.extend_from_slice(seq);
        }
        let ids = Tensor::from_vec(flat, (b, n), &device())?;
        let bias = key_bias(lengths, n)?;
        let mask = length_mask(lengths, n)?.unsqueeze(2)?;
        let mut h = self.embed.forward(&ids)?.broadcast_add(&sinusoid(n, self.arch.model_dim)?)?;
        for (mha, ln) in &self.attention {
            h = ln.forward(&(&h + mha.forward(&h, Some(&bias))?)?)?;
        }
        h = h.broadcast_add(&self.speaker.forward(&speakers.unsqueeze(1)?)?)?;
        h = h.broadcast_mul(&mask)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?.broadcast_mul(&mask)?;
        }
        Ok(self.out.forward(&h)?.squeeze(2)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            DURATION_KIND,
            serde_json::json!({ "arch": self.arch }),
            &self.params,
            &Default::default(),
            0,
            0,
            SeededRng::new(0).state(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(DURATION_KIND)?;
        let arch: DurationArch =
            serde_json::from_value(ck.config["arch"].clone()).map_err(|e| invalid!("duration architecture: {e}"))?;
        let m = Self::new(arch, &mut SeededRng::new(0))?;
        m.params.restore(&ck.params)?;
        Ok(m)
    }
}

/// Log-frame durations for one phoneme sequence under one speaker embedding.
pub fn predict_durations(ph: &PhonemeSequence, speaker: &[f64], m: &DurationModel) -> Result<Vec<f64>> {
    if ph.is_empty() {
        return Err(invalid!("cannot predict durations of an empty phoneme sequence"));
    }
    if speaker.len() != m.arch.speaker_dim {
        return Err(invalid!("speaker embedding has {} dims, model expects {}", speaker.len(), m.arch.speaker_dim));
    }
    let spk = Tensor::from_vec(speaker.to_vec(), (1, speaker.len()), &device())?;
    to_vec(&m.forward(&[ph.ids.clone()], &[ph.len()], &spk)?)
}

/// `max(1, ceil(exp(l)))` frames per phoneme.
///
/// A `1e-9` slack keeps values that are integers up to rounding (e.g. `exp(ln 2)`)
/// from being pushed to the next frame.
pub fn durations_to_frames(log_durations: &[f64]) -> Result<Vec<u32>> {
    log_durations
        .iter()
        .map(|&l| {
            if !l.is_finite() {
                return Err(invalid!("non-finite log-duration {l}"));
            }
            let frames = (l.exp() - 1e-9).ceil().min(u32::MAX as f64);
            Ok((frames as u32).max(1))
        })
        .collect()
}

/// Mean squared log-duration error over positions with nonzero weight.
pub fn duration_loss(pred: &Tensor, target: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() || pred.dims() != weights.dims() {
        return Err(invalid!(
            "duration loss shapes differ: {:?} / {:?} / {:?}",
            pred.dims(),
            target.dims(),
            weights.dims()
        ));
    }
    let se = ((pred - target)?.sqr()? * weights)?.sum_all()?;
    Ok(se.broadcast_div(&weights.sum_all()?)?)
}

/// One utterance's phonemes, target frame durations and speaker embedding.
#[derive(Debug, Clone)]
pub struct DurationItem {
    pub durations: PhonemeDurations,
    pub speaker: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DurationTrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub schedule: StepDecay,
}

impl Default for DurationTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            schedule: StepDecay::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationEpoch {
    pub epoch: u32,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

struct DurationBatch {
    phonemes: Vec<Vec<u32>>,
    lengths: Vec<usize>,
    speakers: Tensor,
    target: Tensor,
    weights: Tensor,
}

fn make_batch(items: &[&DurationItem], speaker_dim: usize) -> Result<DurationBatch> {
    let n = items.iter().map(|i| i.durations.phonemes().len()).max().unwrap_or(0);
    let b = items.len();
    let mut phonemes = Vec::with_capacity(b);
    let mut lengths = Vec::with_capacity(b);
    let mut target = vec![0.0; b * n];
    let mut spk = Vec::with_capacity(b * speaker_dim);
    for (i, item) in items.iter().enumerate() {
        let ph = item.durations.phonemes();
        if ph.is_empty() {
            return Err(invalid!("duration item without phonemes"));
        }
        if item.speaker.len() != speaker_dim {
            return Err(invalid!("speaker embedding has {} dims, expected {speaker_dim}", item.speaker.len()));
        }
        let mut row = ph.to_vec();
        row.resize(n, 0);
        phonemes.push(row);
        lengths.push(ph.len());
        for (j, &d) in item.durations.durations().iter().enumerate() {
            target[i * n + j] = (d as f64).ln();
        }
        spk.extend_from_slice(&item.speaker);
    }
    Ok(DurationBatch {
        speakers: Tensor::from_vec(spk, (b, speaker_dim), &device())?,
        target: Tensor::from_vec(target, (b, n), &device())?,
        weights: length_mask(&lengths, n)?,
        phonemes,
        lengths,
    })
}

pub struct DurationTrainer {
    model: DurationModel,
    cfg: DurationTrainConfig,
    state: StageState,
}

impl DurationTrainer {
    pub fn new(model: DurationModel, cfg: DurationTrainConfig, seed: u64) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        Ok(Self {
            model,
            cfg,
            state: StageState::new(seed),
        })
    }

    pub fn resume(ck: &Checkpoint, cfg: DurationTrainConfig) -> Result<Self> {
        Ok(Self {
            model: DurationModel::from_checkpoint(ck)?,
            cfg,
            state: StageState::resume(ck),
        })
    }

    pub fn with_output(mut self, dir: impl AsRef<std::path::Path>) -> Result<Self> {
        self.state.set_output(dir.as_ref())?;
        Ok(self)
    }

    pub fn model(&self) -> &DurationModel {
        &self.model
    }

    pub fn into_model(self) -> DurationModel {
        self.model
    }

    pub fn epoch(&self) -> u32 {
        self.state.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.state.capture(DURATION_KIND, serde_json::json!({ "arch": self.model.arch }), &self.model.params);
        ck.extra = serde_json::json!({ "train": self.cfg });
        ck
    }

    /// Mean training MSE of one shuffled pass.
    pub fn train_epoch(&mut self, items: &[DurationItem], val: &[DurationItem]) -> Result<DurationEpoch> {
        if items.is_empty() {
            return Err(invalid!("no duration training items"));
        }
        let lr = self.cfg.schedule.lr(self.state.epoch);
        let mut order: Vec<usize> = (0..items.len()).collect();
        self.state.rng.shuffle(&mut order);
        let (mut sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let refs: Vec<&DurationItem> = chunk.iter().map(|&i| &items[i]).collect();
            let batch = make_batch(&refs, self.model.arch.speaker_dim)?;
            let pred = self.model.forward(&batch.phonemes, &batch.lengths, &batch.speakers)?;
            let loss = duration_loss(&pred, &batch.target, &batch.weights)?;
            sum += self.state.update(&self.model.params, &loss, lr)?;
            steps += 1;
        }
        let val_mse = if val.is_empty() { None } else { Some(evaluate_duration(&self.model, val)?) };
        let record = DurationEpoch {
            epoch: self.state.epoch,
            train_mse: sum / steps as f64,
            val_mse,
        };
        self.state.epoch += 1;
        log::info!("duration epoch {} train {:.4} val {:?}", self.state.epoch, record.train_mse, record.val_mse);
        let line = serde_json::json!({ "step": self.state.step, "lr": lr, "epoch": record.epoch, "train_mse": record.train_mse, "val_mse": record.val_mse });
        self.state.persist(&self.checkpoint(), &line.to_string())?;
        Ok(record)
    }

    pub fn run(&mut self, items: &[DurationItem], val: &[DurationItem]) -> Result<Vec<DurationEpoch>> {
        let mut out = Vec::new();
        while self.state.epoch < self.cfg.epochs {
            out.push(self.train_epoch(items, val)?);
        }
        Ok(out)
    }
}

/// Mean log-domain MSE over all phonemes of `items`.
pub fn evaluate_duration(model: &DurationModel, items: &[DurationItem]) -> Result<f64> {
    let (mut se, mut n) = (0.0, 0usize);
    for item in items {
        let ph = PhonemeSequence::new(item.durations.phonemes().to_vec(), None)?;
        let pred = predict_durations(&ph, &item.speaker, model)?;
        for (p, &d) in pred.iter().zip(item.durations.durations()) {
            se += (p - (d as f64).ln()).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(invalid!("no phonemes to evaluate"));
    }
    Ok(se / n as f64)
}

/// Train a fresh duration model and return it with per-epoch records.
pub fn train_duration(
    arch: DurationArch,
    items: &[DurationItem],
    val: &[DurationItem],
    cfg: DurationTrainConfig,
    seed: u64,
) -> Result<(DurationModel, Vec<DurationEpoch>)> {
    let mut rng = SeededRng::new(seed);
    let model = DurationModel::new(arch, &mut rng)?;
    let mut trainer = DurationTrainer::new(model, cfg, rng.next_u64())?;
    let log = trainer.run(items, val)?;
    Ok((trainer.into_model(), log))
}
