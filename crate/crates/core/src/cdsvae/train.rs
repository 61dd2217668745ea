use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Batch, Cdsvae, LossOutput};
use super::{LossBreakdown, LossConfig, MaskConfig, ReconMode};
use crate::alignment::AlignmentSequence;
use crate::error::{invalid, Error, Result};
use crate::features::{crop_segment, MelSpectrogram};
use crate::nn::{Adam, Checkpoint, StepDecay};
use crate::rng::SeededRng;

/// One training utterance: a mel spectrogram and its frame-synchronous alignment.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub speaker: String,
    pub mel: MelSpectrogram,
    pub alignment: AlignmentSequence,
}

impl TrainItem {
    pub fn new(
        id: impl Into<String>,
        speaker: impl Into<String>,
        mel: MelSpectrogram,
        alignment: AlignmentSequence,
    ) -> Result<Self> {
        let id = id.into();
        if mel.num_frames() != alignment.len() {
            return Err(invalid!(
                "{id}: mel has {} frames but alignment has {}",
                mel.num_frames(),
                alignment.len()
            ));
        }
        if mel.num_frames() == 0 {
            return Err(invalid!("{id}: empty utterance"));
        }
        Ok(Self {
            id,
            speaker: speaker.into(),
            mel,
            alignment,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    /// Training crops are at most this many frames.
    pub segment_frames: usize,
    pub loss: LossConfig,
    pub mask: MaskConfig,
    pub schedule: StepDecay,
    pub recon: ReconMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            segment_frames: 100,
            loss: LossConfig::default(),
            mask: MaskConfig::default(),
            schedule: StepDecay::default(),
            recon: ReconMode::Posterior,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.segment_frames == 0 {
            return Err(invalid!("batch_size and segment_frames must be positive"));
        }
        self.loss.validate()
    }
}

/// A JSON-lines log row, one per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub steps: usize,
    pub lr: f64,
    /// Mean of the per-step breakdowns.
    pub mean: LossBreakdown,
}

/// Held-out loss averaged over utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutLoss {
    pub mean: LossBreakdown,
    pub recon_posterior: f64,
    pub recon_prior: Option<f64>,
}

pub struct Trainer {
    model: Cdsvae,
    adam: Adam,
    rng: SeededRng,
    cfg: TrainConfig,
    step: u64,
    epoch: u32,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: Cdsvae, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            adam: Adam::default(),
            rng: SeededRng::new(seed),
            cfg,
            step: 0,
            epoch: 0,
            out_dir: None,
        })
    }

    /// Continue an interrupted run: parameters, optimizer moments, RNG, step and epoch.
    pub fn resume(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model: Cdsvae::from_checkpoint(ck)?,
            adam: Adam::with_state(ck.optimizer.clone()),
            rng: SeededRng::from_state(ck.rng.clone()),
            cfg,
            step: ck.step,
            epoch: ck.epoch,
            out_dir: None,
        })
    }

    /// Start a new stage from trained weights with a fresh optimizer and counters.
    pub fn from_base(ck: &Checkpoint, cfg: TrainConfig, seed: u64) -> Result<Self> {
        Self::new(Cdsvae::from_checkpoint(ck)?, cfg, seed)
    }

    /// Write `epoch-NNNN.safetensors`, `latest.safetensors` and `train_log.jsonl` under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn model(&self) -> &Cdsvae {
        &self.model
    }

    pub fn into_model(self) -> Cdsvae {
        self.model
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.checkpoint(self.adam.state(), self.step, self.epoch, self.rng.state());
        ck.extra = serde_json::json!({ "train": self.cfg });
        ck
    }

    fn build_batch(&mut self, items: &[&TrainItem]) -> Result<Batch> {
        let longest = items.iter().map(|i| i.mel.num_frames()).max().unwrap_or(1);
        let len = longest.min(self.cfg.segment_frames);
        let mut mels = Vec::with_capacity(items.len());
        let mut tokens = Vec::with_capacity(items.len());
        let mut valid = Vec::with_capacity(items.len());
        for item in items {
            let crop = crop_segment(&item.mel, len, &mut self.rng)?;
            tokens.push(item.alignment.window(crop.start, len).tokens().to_vec());
            valid.push(crop.valid);
            mels.push(crop.mel);
        }
        let refs: Vec<&MelSpectrogram> = mels.iter().collect();
        Batch::from_tensor(self.model.mel_batch(&refs)?, tokens, valid)
    }

    fn check_items(&self, items: &[TrainItem]) -> Result<()> {
        if items.is_empty() {
            return Err(invalid!("no training items"));
        }
        for item in items {
            self.model.check_condition(&item.alignment)?;
        }
        Ok(())
    }

    /// One pass over `items` in a shuffled order.
    pub fn train_epoch(&mut self, items: &[TrainItem]) -> Result<EpochSummary> {
        self.check_items(items)?;
        let lr = self.cfg.schedule.lr(self.epoch);
        let mut order: Vec<usize> = (0..items.len()).collect();
        self.rng.shuffle(&mut order);
        let mut sum = [0.0f64; 5];
        let mut steps = 0usize;
        let mut log = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch_items: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let batch = self.build_batch(&batch_items)?;
            let out = self
                .model
                .loss(&batch, &self.cfg.loss, &self.cfg.mask, self.cfg.recon, &mut self.rng)?;
            let b = out.breakdown;
            if !b.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    detail: format!("non-finite loss {b:?}"),
                });
            }
            let grads = out.total.backward()?;
            self.adam
                .step(self.model.params(), &grads, lr)
                .map_err(|e| match e {
                    Error::Validation(msg) => Error::Diverged { step: self.step, detail: msg },
                    other => other,
                })?;
            self.step += 1;
            steps += 1;
            for (s, v) in sum.iter_mut().zip([b.recon, b.kld_s, b.kld_c, b.mup, b.total]) {
                *s += v;
            }
            log.push(LogRecord {
                step: self.step,
                epoch: self.epoch,
                lr,
                loss: b,
            });
        }
        let n = steps as f64;
        let summary = EpochSummary {
            epoch: self.epoch,
            steps,
            lr,
            mean: LossBreakdown {
                recon: sum[0] / n,
                kld_s: sum[1] / n,
                kld_c: sum[2] / n,
                mup: sum[3] / n,
                total: sum[4] / n,
            },
        };
        self.epoch += 1;
        if let Some(dir) = self.out_dir.clone() {
            append_log(&dir.join("train_log.jsonl"), &log)?;
            let ck = self.checkpoint();
            ck.save(dir.join(format!("epoch-{:04}.safetensors", self.epoch)))?;
            ck.save(dir.join("latest.safetensors"))?;
        }
        Ok(summary)
    }

    /// Train until `cfg.epochs` epochs have completed (counting any resumed ones).
    pub fn run(&mut self, items: &[TrainItem]) -> Result<Vec<EpochSummary>> {
        let mut out = Vec::new();
        while self.epoch < self.cfg.epochs {
            let s = self.train_epoch(items)?;
            log::info!(
                "epoch {} step {} total {:.4} recon {:.4} kld_s {:.4} kld_c {:.4} mup {:.4}",
                s.epoch + 1,
                self.step,
                s.mean.total,
                s.mean.recon,
                s.mean.kld_s,
                s.mean.kld_c,
                s.mean.mup
            );
            out.push(s);
        }
        Ok(out)
    }

    /// Loss on full-length utterances without updating anything.
    pub fn evaluate(&self, items: &[TrainItem], seed: u64) -> Result<HeldOutLoss> {
        evaluate(&self.model, items, &self.cfg, seed)
    }
}

/// Held-out loss of `model` under `cfg`, one utterance at a time.
pub fn evaluate(model: &Cdsvae, items: &[TrainItem], cfg: &TrainConfig, seed: u64) -> Result<HeldOutLoss> {
    if items.is_empty() {
        return Err(invalid!("no evaluation items"));
    }
    let mut rng = SeededRng::new(seed);
    let mut sum = [0.0f64; 7];
    let mut prior_seen = false;
    for item in items {
        model.check_condition(&item.alignment)?;
        let n = item.mel.num_frames();
        let batch = Batch::from_tensor(model.mel_tensor(&item.mel)?, vec![item.alignment.tokens().to_vec()], vec![n])?;
        let out: LossOutput = model.loss(&batch, &cfg.loss, &cfg.mask, cfg.recon, &mut rng)?;
        let b = out.breakdown;
        for (s, v) in sum.iter_mut().zip([b.recon, b.kld_s, b.kld_c, b.mup, b.total, out.recon_posterior]) {
            *s += v;
        }
        if let Some(p) = out.recon_prior {
            sum[6] += p;
            prior_seen = true;
        }
    }
    let n = items.len() as f64;
    Ok(HeldOutLoss {
        mean: LossBreakdown {
            recon: sum[0] / n,
            kld_s: sum[1] / n,
            kld_c: sum[2] / n,
            mup: sum[3] / n,
            total: sum[4] / n,
        },
        recon_posterior: sum[5] / n,
        recon_prior: prior_seen.then(|| sum[6] / n),
    })
}

fn append_log(path: &Path, rows: &[LogRecord]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| Error::format("train log", e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Train a fresh model with `cfg` and return the trainer for inspection.
pub fn train(model: Cdsvae, items: &[TrainItem], cfg: TrainConfig, seed: u64, out_dir: Option<&Path>) -> Result<Trainer> {
    let mut trainer = Trainer::new(model, cfg, seed)?;
    if let Some(dir) = out_dir {
        trainer = trainer.with_output(dir)?;
    }
    trainer.run(items)?;
    Ok(trainer)
}
