//! Text side of synthesis: lexicon lookup, the speaker-aware duration predictor and
//! the FA-to-UA mapper, each with its own training loop.

mod duration;
mod fa2ua;
mod lexicon;
mod speakers;

pub use duration::{
    duration_loss, durations_to_frames, evaluate_duration, predict_durations, train_duration, DurationArch, DurationEpoch,
    DurationItem, DurationModel, DurationTrainConfig, DurationTrainer, DURATION_KIND,
};
pub use fa2ua::{
    fa2ua_loss, fa2ua_predict, masked_accuracy, train_fa2ua, Fa2UaArch, Fa2UaEpoch, Fa2UaItem, Fa2UaModel, Fa2UaTrainConfig,
    Fa2UaTrainer, FA2UA_KIND,
};
pub use lexicon::{normalize_words, text_to_phonemes, Lexicon, PhoneSet, PhonemeSequence};
pub use speakers::SpeakerPool;

use std::path::{Path, PathBuf};

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, ParamStore};
use crate::rng::SeededRng;

/// Optimizer, RNG and counters shared by the small training loops here.
#[derive(Debug)]
struct StageState {
    adam: Adam,
    rng: SeededRng,
    epoch: u32,
    step: u64,
    out_dir: Option<PathBuf>,
}

impl StageState {
    fn new(seed: u64) -> Self {
        Self {
            adam: Adam::default(),
            rng: SeededRng::new(seed),
            epoch: 0,
            step: 0,
            out_dir: None,
        }
    }

    fn resume(ck: &Checkpoint) -> Self {
        Self {
            adam: Adam::with_state(ck.optimizer.clone()),
            rng: SeededRng::from_state(ck.rng.clone()),
            epoch: ck.epoch,
            step: ck.step,
            out_dir: None,
        }
    }

    fn set_output(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(())
    }

    fn update(&mut self, params: &ParamStore, loss: &Tensor, lr: f64) -> Result<f64> {
        let value = crate::nn::scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!("non-finite loss {value}"),
            });
        }
        let grads = loss.backward()?;
        self.adam.step(params, &grads, lr).map_err(|e| match e {
            Error::Validation(msg) => Error::Diverged { step: self.step, detail: msg },
            other => other,
        })?;
        self.step += 1;
        Ok(value)
    }

    fn capture(&self, kind: &str, config: serde_json::Value, params: &ParamStore) -> Checkpoint {
        Checkpoint::capture(kind, config, params, self.adam.state(), self.step, self.epoch, self.rng.state())
    }

    fn persist(&self, ck: &Checkpoint, log_line: &str) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        use std::io::Write;
        let log = dir.join("train_log.jsonl");
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        writeln!(f, "{log_line}").map_err(|e| Error::io(&log, e))?;
        ck.save(dir.join(format!("epoch-{:04}.safetensors", self.epoch)))?;
        ck.save(dir.join("latest.safetensors"))
    }
}

/// `(B, 1, 1, N)` attention bias: 0 on real positions, -1e9 on padding.
fn key_bias(lengths: &[usize], n: usize) -> Result<Tensor> {
    let v: Vec<f64> = lengths
        .iter()
        .flat_map(|&l| (0..n).map(move |i| if i < l { 0.0 } else { -1e9 }))
        .collect();
    Ok(Tensor::from_vec(v, (lengths.len(), 1, 1, n), &crate::nn::device())?)
}

/// `(B, N)` 0/1 weights for padded sequences.
fn length_mask(lengths: &[usize], n: usize) -> Result<Tensor> {
    let v: Vec<f64> = lengths
        .iter()
        .flat_map(|&l| (0..n).map(move |i| if i < l { 1.0 } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(v, (lengths.len(), n), &crate::nn::device())?)
}
