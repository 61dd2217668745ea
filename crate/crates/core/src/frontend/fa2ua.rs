use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::StageState;
use crate::alignment::{AlignmentKind, AlignmentSequence, FA_MASK, FA_PAD, FA_VOCAB};
use crate::cdsvae::{masked_nll, sample_mask, MaskConfig, MaskSet};
use crate::error::{invalid, Result};
use crate::nn::{device, to_vec, BiLstm, Checkpoint, Embedding, Linear, ParamStore, StepDecay};
use crate::rng::SeededRng;

pub const FA2UA_KIND: &str = "fa2ua";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fa2UaArch {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Size of the UA codebook (classes, without the mask symbol).
    pub num_units: u32,
}

impl Fa2UaArch {
    /// Embedding -> BiLSTM(256, 3) -> linear classifier.
    pub fn full(num_units: u32) -> Self {
        Self {
            embed_dim: 256,
            hidden: 256,
            layers: 3,
            num_units,
        }
    }

    pub fn desk(num_units: u32) -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            ..Self::full(num_units)
        }
    }

    pub fn tiny(num_units: u32) -> Self {
        Self {
            embed_dim: 3,
            hidden: 2,
            layers: 1,
            num_units,
        }
    }
}

#[derive(Debug)]
pub struct Fa2UaModel {
    arch: Fa2UaArch,
    params: ParamStore,
    embed: Embedding,
    rnn: BiLstm,
    classifier: Linear,
}

impl Fa2UaModel {
    pub fn new(arch: Fa2UaArch, rng: &mut SeededRng) -> Result<Self> {
        if arch.num_units < 2 || arch.layers == 0 {
            return Err(invalid!("FA2UA needs at least 2 units and one recurrent layer"));
        }
        let mut ps = ParamStore::new();
        let embed = Embedding::new(&mut ps, "fa2ua.embed", FA_VOCAB as usize, arch.embed_dim, rng)?;
        let rnn = BiLstm::new(&mut ps, "fa2ua.rnn", arch.embed_dim, arch.hidden, arch.layers, rng)?;
        let classifier = Linear::new(&mut ps, "fa2ua.classifier", 2 * arch.hidden, arch.num_units as usize, rng)?;
        Ok(Self {
            arch,
            params: ps,
            embed,
            rnn,
            classifier,
        })
    }

    pub fn arch(&self) -> &Fa2UaArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(B, T, K)` unit logits; FA frames in each mask are replaced by the mask symbol first.
    pub fn logits(&self, fa: &[Vec<u32>], masks: &[MaskSet]) -> Result<Tensor> {
        let b = fa.len();
        let t = fa.first().map_or(0, Vec::len);
        if masks.len() != b {
            return Err(invalid!("{b} FA sequences but {} masks", masks.len()));
        }
        let mut flat = Vec::with_capacity(b * t);
        for (seq, m) in fa.iter().zip(masks) {
            if seq.len() != t || m.seq_len() != t {
                return Err(invalid!("FA batch and masks must share one length"));
            }
            if let Some(&bad) = seq.iter().find(|&&x| x >= FA_VOCAB) {
                return Err(invalid!("FA token {bad} outside vocabulary of {FA_VOCAB}"));
            }
            flat.extend(m.apply(seq, FA_MASK));
        }
        let ids = Tensor::from_vec(flat, (b, t), &device())?;
        self.classifier.forward(&self.rnn.forward(&self.embed.forward(&ids)?)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            FA2UA_KIND,
            serde_json::json!({ "arch": self.arch }),
            &self.params,
            &Default::default(),
            0,
            0,
            SeededRng::new(0).state(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(FA2UA_KIND)?;
        let arch: Fa2UaArch =
            serde_json::from_value(ck.config["arch"].clone()).map_err(|e| invalid!("FA2UA architecture: {e}"))?;
        let m = Self::new(arch, &mut SeededRng::new(0))?;
        m.params.restore(&ck.params)?;
        Ok(m)
    }
}

/// Row-wise argmax of a row-major `(rows, k)` buffer; ties go to the lowest index.
pub(crate) fn argmax_rows(values: &[f64], k: usize) -> Vec<u32> {
    values
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

/// Most probable unit per frame, from the unmasked FA sequence.
pub fn fa2ua_predict(fa: &AlignmentSequence, m: &Fa2UaModel) -> Result<AlignmentSequence> {
    if fa.kind() != AlignmentKind::Fa {
        return Err(invalid!("FA2UA input must be a forced alignment"));
    }
    if fa.is_empty() {
        return AlignmentSequence::ua(Vec::new(), m.arch.num_units);
    }
    let logits = m.logits(&[fa.tokens().to_vec()], &[MaskSet::empty(fa.len())])?;
    let units = argmax_rows(&to_vec(&logits)?, m.arch.num_units as usize);
    AlignmentSequence::ua(units, m.arch.num_units)
}

/// Mean NLL of the UA targets over masked frames only.
pub fn fa2ua_loss(logits: &Tensor, ua: &[Vec<u32>], masks: &[MaskSet]) -> Result<Tensor> {
    masked_nll(logits, ua, masks)
}

/// A frame-synchronous FA/UA pair.
#[derive(Debug, Clone)]
pub struct Fa2UaItem {
    pub fa: AlignmentSequence,
    pub ua: AlignmentSequence,
}

impl Fa2UaItem {
    pub fn new(fa: AlignmentSequence, ua: AlignmentSequence) -> Result<Self> {
        if fa.kind() != AlignmentKind::Fa || ua.kind() != AlignmentKind::Ua {
            return Err(invalid!("FA2UA pairs need an FA input and a UA target"));
        }
        if fa.len() != ua.len() || fa.is_empty() {
            return Err(invalid!("FA has {} frames, UA has {}; they must match and be non-empty", fa.len(), ua.len()));
        }
        Ok(Self { fa, ua })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fa2UaTrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    /// Training crops are at most this many frames.
    pub segment_frames: usize,
    pub mask: MaskConfig,
    pub schedule: StepDecay,
}

impl Default for Fa2UaTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            segment_frames: 200,
            mask: MaskConfig::default(),
            schedule: StepDecay::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fa2UaEpoch {
    pub epoch: u32,
    pub train_loss: f64,
    /// Top-1 accuracy at masked validation frames.
    pub val_masked_accuracy: Option<f64>,
}

pub struct Fa2UaTrainer {
    model: Fa2UaModel,
    cfg: Fa2UaTrainConfig,
    state: StageState,
}

impl Fa2UaTrainer {
    pub fn new(model: Fa2UaModel, cfg: Fa2UaTrainConfig, seed: u64) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.segment_frames == 0 {
            return Err(invalid!("batch_size and segment_frames must be positive"));
        }
        Ok(Self {
            model,
            cfg,
            state: StageState::new(seed),
        })
    }

    pub fn resume(ck: &Checkpoint, cfg: Fa2UaTrainConfig) -> Result<Self> {
        Ok(Self {
            model: Fa2UaModel::from_checkpoint(ck)?,
            cfg,
            state: StageState::resume(ck),
        })
    }

    pub fn with_output(mut self, dir: impl AsRef<std::path::Path>) -> Result<Self> {
        self.state.set_output(dir.as_ref())?;
        Ok(self)
    }

    pub fn model(&self) -> &Fa2UaModel {
        &self.model
    }

    pub fn into_model(self) -> Fa2UaModel {
        self.model
    }

    pub fn epoch(&self) -> u32 {
        self.state.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.state.capture(FA2UA_KIND, serde_json::json!({ "arch": self.model.arch }), &self.model.params);
        ck.extra = serde_json::json!({ "train": self.cfg });
        ck
    }

    fn check(&self, items: &[Fa2UaItem]) -> Result<()> {
        for it in items {
            if it.ua.vocab_size() != self.model.arch.num_units + 1 {
                return Err(invalid!(
                    "UA vocabulary {} does not match a model over {} units",
                    it.ua.vocab_size(),
                    self.model.arch.num_units
                ));
            }
        }
        Ok(())
    }

    pub fn train_epoch(&mut self, items: &[Fa2UaItem], val: &[Fa2UaItem]) -> Result<Fa2UaEpoch> {
        if items.is_empty() {
            return Err(invalid!("no FA2UA training items"));
        }
        self.check(items)?;
        self.check(val)?;
        let lr = self.cfg.schedule.lr(self.state.epoch);
        let mut order: Vec<usize> = (0..items.len()).collect();
        self.state.rng.shuffle(&mut order);
        let (mut sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let longest = chunk.iter().map(|&i| items[i].fa.len()).max().unwrap_or(1);
            let len = longest.min(self.cfg.segment_frames);
            let (mut fa, mut ua, mut masks) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let it = &items[i];
                let n = it.fa.len();
                let (start, valid) = if n > len {
                    (self.state.rng.below(n - len + 1), len)
                } else {
                    (0, n)
                };
                let mut f = it.fa.tokens()[start..start + valid].to_vec();
                let mut u = it.ua.tokens()[start..start + valid].to_vec();
                f.resize(len, FA_PAD);
                u.resize(len, 0);
                masks.push(sample_mask(len, valid, &self.cfg.mask, &mut self.state.rng));
                fa.push(f);
                ua.push(u);
            }
            let logits = self.model.logits(&fa, &masks)?;
            let loss = fa2ua_loss(&logits, &ua, &masks)?;
            if masks.iter().all(MaskSet::is_empty) {
                continue;
            }
            sum += self.state.update(&self.model.params, &loss, lr)?;
            steps += 1;
        }
        let val_masked_accuracy = if val.is_empty() {
            None
        } else {
            Some(masked_accuracy(&self.model, val, &self.cfg.mask, 0)?)
        };
        let record = Fa2UaEpoch {
            epoch: self.state.epoch,
            train_loss: if steps == 0 { 0.0 } else { sum / steps as f64 },
            val_masked_accuracy,
        };
        self.state.epoch += 1;
        log::info!("fa2ua epoch {} loss {:.4} masked acc {:?}", self.state.epoch, record.train_loss, record.val_masked_accuracy);
        let line = serde_json::json!({ "step": self.state.step, "lr": lr, "epoch": record.epoch, "train_loss": record.train_loss, "val_masked_accuracy": record.val_masked_accuracy });
        self.state.persist(&self.checkpoint(), &line.to_string())?;
        Ok(record)
    }

    pub fn run(&mut self, items: &[Fa2UaItem], val: &[Fa2UaItem]) -> Result<Vec<Fa2UaEpoch>> {
        let mut out = Vec::new();
        while self.state.epoch < self.cfg.epochs {
            out.push(self.train_epoch(items, val)?);
        }
        Ok(out)
    }
}

/// Top-1 accuracy at masked frames, with masks drawn from `seed`.
pub fn masked_accuracy(model: &Fa2UaModel, items: &[Fa2UaItem], mask: &MaskConfig, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let (mut hit, mut total) = (0usize, 0usize);
    for it in items {
        let n = it.fa.len();
        let m = sample_mask(n, n, mask, &mut rng);
        if m.is_empty() {
            continue;
        }
        let logits = to_vec(&model.logits(&[it.fa.tokens().to_vec()], &[m.clone()])?)?;
        let pred = argmax_rows(&logits, model.arch.num_units as usize);
        for &i in m.indices() {
            hit += (pred[i] == it.ua.tokens()[i]) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(invalid!("no masked frames to score"));
    }
    Ok(hit as f64 / total as f64)
}

/// Train a fresh FA2UA model and return it with per-epoch records.
pub fn train_fa2ua(
    arch: Fa2UaArch,
    items: &[Fa2UaItem],
    val: &[Fa2UaItem],
    cfg: Fa2UaTrainConfig,
    seed: u64,
) -> Result<(Fa2UaModel, Vec<Fa2UaEpoch>)> {
    let mut rng = SeededRng::new(seed);
    let model = Fa2UaModel::new(arch, &mut rng)?;
    let mut trainer = Fa2UaTrainer::new(model, cfg, rng.next_u64())?;
    let log = trainer.run(items, val)?;
    Ok((trainer.into_model(), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_check, scalar};

    fn model() -> Fa2UaModel {
        Fa2UaModel::new(Fa2UaArch::tiny(6), &mut SeededRng::new(2)).unwrap()
    }

    #[test]
    fn prediction_is_length_preserving_argmax() {
        let m = model();
        let fa = AlignmentSequence::fa(vec![55, 55, 55, 2, 2, 7]).unwrap();
        let ua = fa2ua_predict(&fa, &m).unwrap();
        assert_eq!(ua.len(), 6);
        assert_eq!(ua.vocab_size(), 7);
        let logits = to_vec(&m.logits(&[fa.tokens().to_vec()], &[MaskSet::empty(6)]).unwrap()).unwrap();
        for (t, &u) in ua.tokens().iter().enumerate() {
            let row = &logits[t * 6..(t + 1) * 6];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(row[u as usize], max);
        }
        assert_eq!(ua, fa2ua_predict(&fa, &m).unwrap());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax_rows(&[1.0, 3.0, 3.0, 0.0, 0.0, 0.0], 3), vec![1, 0]);
    }

    #[test]
    fn empty_mask_gives_zero_loss() {
        let m = model();
        let fa = vec![vec![1u32, 2, 3]];
        let logits = m.logits(&fa, &[MaskSet::empty(3)]).unwrap();
        assert_eq!(scalar(&fa2ua_loss(&logits, &[vec![0, 1, 2]], &[MaskSet::empty(3)]).unwrap()).unwrap(), 0.0);
        assert!(fa2ua_loss(&logits, &[vec![0, 1]], &[MaskSet::empty(3)]).unwrap_err().is_validation());
    }

    #[test]
    fn masked_frames_only_feed_the_gradient() {
        let m = model();
        let fa = vec![vec![10u32, 11, 12, 13, 14]];
        let mask = MaskSet::new(vec![0, 1], 5).unwrap();
        let logits = m.logits(&fa, &[mask.clone()]).unwrap();
        let probe = candle_core::Var::from_tensor(&logits.detach()).unwrap();
        let loss = fa2ua_loss(probe.as_tensor(), &[vec![0, 1, 2, 3, 4]], &[mask.clone()]).unwrap();
        let grads = loss.backward().unwrap();
        let g = to_vec(grads.get(probe.as_tensor()).unwrap()).unwrap();
        assert!(g[..12].iter().any(|&v| v != 0.0));
        assert!(g[12..].iter().all(|&v| v == 0.0));

        let loss = fa2ua_loss(&logits, &[vec![0, 1, 2, 3, 4]], &[mask]).unwrap();
        let grads = loss.backward().unwrap();
        let table = to_vec(grads.get(m.params().get("fa2ua.embed.table").unwrap().as_tensor()).unwrap()).unwrap();
        let dim = m.arch().embed_dim;
        // rows of the masked-out inputs 10 and 11 never reach the network
        for row in [10usize, 11] {
            assert!(table[row * dim..(row + 1) * dim].iter().all(|&v| v == 0.0));
        }
        assert!(table[FA_MASK as usize * dim..(FA_MASK as usize + 1) * dim].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let m = model();
        let fa = vec![vec![3u32, 3, 8, 9], vec![1, 5, 5, FA_PAD]];
        let ua = vec![vec![0u32, 0, 4, 5], vec![1, 2, 2, 0]];
        let masks = vec![MaskSet::new(vec![1, 2], 4).unwrap(), MaskSet::new(vec![0, 2], 4).unwrap()];
        let report = finite_difference_check(m.params(), 1e-6, || fa2ua_loss(&m.logits(&fa, &masks)?, &ua, &masks)).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let back = Fa2UaModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
        let fa = AlignmentSequence::fa(vec![4, 4, 9]).unwrap();
        assert_eq!(fa2ua_predict(&fa, &m).unwrap(), fa2ua_predict(&fa, &back).unwrap());
    }
}
