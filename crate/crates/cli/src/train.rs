//! The four training stages.

use anyhow::{bail, Context, Result};
use serde_json::json;
use utts::cdsvae::{evaluate, Cdsvae, HeldOutLoss, MelNorm, TrainConfig, TrainItem, Trainer};
use utts::frontend::{
    evaluate_duration, masked_accuracy, DurationItem, DurationModel, DurationTrainer, Fa2UaItem, Fa2UaModel,
    Fa2UaTrainer, SpeakerPool,
};
use utts::nn::Checkpoint;
use utts::SeededRng;

use crate::config::RunConfig;
use crate::layout::{sub_seed, write_json, Layout, Stage};
use crate::prepare::{self, Prepared};

pub const MODEL_FILE: &str = "model.safetensors";
const LATEST: &str = "latest.safetensors";

/// Which training stage to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainStage {
    Cdsvae,
    CdsvaeDual,
    Duration,
    Fa2ua,
}

pub fn run(cfg: &RunConfig, layout: &Layout, which: TrainStage, force: bool) -> Result<()> {
    let stage = match which {
        TrainStage::Cdsvae => &layout.cdsvae,
        TrainStage::CdsvaeDual => &layout.dual,
        TrainStage::Duration => &layout.duration,
        TrainStage::Fa2ua => &layout.fa2ua,
    };
    if stage.is_complete() && !force {
        println!("train {}: up to date in {}", stage.name, stage.dir.display());
        return Ok(());
    }
    // check prerequisites before touching the stage directory
    let base = match which {
        TrainStage::CdsvaeDual => Some(load_model_checkpoint(&layout.cdsvae, "cdsvae")?),
        TrainStage::Duration => Some(load_model_checkpoint(layout.acoustic(cfg), layout.acoustic(cfg).name)?),
        _ => None,
    };
    let data = prepare::load(&layout.prepare, cfg.num_units())?;
    stage.open(force)?;
    match which {
        TrainStage::Cdsvae => cdsvae(cfg, stage, &data),
        TrainStage::CdsvaeDual => dual(cfg, stage, &data, &base.expect("loaded above")),
        TrainStage::Duration => duration(cfg, stage, &data, &base.expect("loaded above")),
        TrainStage::Fa2ua => fa2ua(cfg, stage, &data),
    }
}

/// The finished model of a stage, with a pointer to the command that produces it.
pub fn load_model_checkpoint(stage: &Stage, command: &str) -> Result<Checkpoint> {
    if !stage.is_complete() {
        bail!(
            "missing prerequisite: no trained {} checkpoint in {}; run `utts train {command}` first",
            stage.name,
            stage.dir.display()
        );
    }
    Ok(Checkpoint::load(stage.path(MODEL_FILE))?)
}

fn items(data: &[Prepared], held_out: bool) -> Result<Vec<TrainItem>> {
    data.iter()
        .filter(|p| p.entry.held_out == held_out)
        .map(|p| Ok(TrainItem::new(&p.entry.id, &p.entry.speaker, p.mel.clone(), p.ua.clone())?))
        .collect()
}

fn stamp(mut ck: Checkpoint, stage: &Stage) -> Checkpoint {
    let extra = std::mem::take(&mut ck.extra);
    ck.extra = json!({ "config_hash": stage.hash, "stage": stage.name, "trainer": extra });
    ck
}

/// Resume from `latest.safetensors` when an interrupted run left one behind.
fn resumable(stage: &Stage) -> Result<Option<Checkpoint>> {
    let latest = stage.path(LATEST);
    if latest.is_file() {
        log::info!("{}: resuming from {}", stage.name, latest.display());
        return Ok(Some(Checkpoint::load(latest)?));
    }
    Ok(None)
}

fn train_cdsvae(mut trainer: Trainer, stage: &Stage, train: &[TrainItem]) -> Result<Trainer> {
    let log = trainer.run(train)?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!(
            "train {}: epochs {}..{} total {:.4} -> {:.4} (mup {:.4})",
            stage.name,
            first.epoch + 1,
            last.epoch + 1,
            first.mean.total,
            last.mean.total,
            last.mean.mup
        );
    }
    stamp(trainer.checkpoint(), stage).save(stage.path(MODEL_FILE))?;
    Ok(trainer)
}

fn held_out_loss(model: &Cdsvae, held: &[TrainItem], cfg: &TrainConfig, seed: u64) -> Result<Option<HeldOutLoss>> {
    if held.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(model, held, cfg, seed)?))
}

fn cdsvae(cfg: &RunConfig, stage: &Stage, data: &[Prepared]) -> Result<()> {
    let train = items(data, false)?;
    let held = items(data, true)?;
    let tcfg = cfg.cdsvae.train.clone();
    let trainer = match resumable(stage)? {
        Some(ck) => Trainer::resume(&ck, tcfg.clone())?,
        None => {
            let norm = MelNorm::fit(train.iter().map(|i| &i.mel));
            let model = Cdsvae::new(cfg.cdsvae_arch(), norm, &mut SeededRng::new(sub_seed(cfg.seed, 2)))?;
            Trainer::new(model, tcfg.clone(), sub_seed(cfg.seed, 3))?
        }
    }
    .with_output(&stage.dir)?;
    let trainer = train_cdsvae(trainer, stage, &train)?;
    let held_out = held_out_loss(trainer.model(), &held, &tcfg, sub_seed(cfg.seed, 4))?;
    write_json(&stage.path("heldout.json"), &held_out)?;
    stage.finish(&json!({ "epochs": trainer.epoch(), "steps": trainer.step(), "held_out": held_out }))
}

fn dual(cfg: &RunConfig, stage: &Stage, data: &[Prepared], base: &Checkpoint) -> Result<()> {
    let train = items(data, false)?;
    let held = items(data, true)?;
    let tcfg = cfg.cdsvae.dual.train_config();
    let trainer = match resumable(stage)? {
        Some(ck) => Trainer::resume(&ck, tcfg.clone())?,
        None => Trainer::from_base(base, tcfg.clone(), sub_seed(cfg.seed, 5))?,
    }
    .with_output(&stage.dir)?;
    let trainer = train_cdsvae(trainer, stage, &train)?;
    let seed = sub_seed(cfg.seed, 4);
    let before = held_out_loss(&Cdsvae::from_checkpoint(base)?, &held, &tcfg, seed)?;
    let after = held_out_loss(trainer.model(), &held, &tcfg, seed)?;
    let report = json!({ "base": before, "dual": after });
    write_json(&stage.path("heldout.json"), &report)?;
    if let (Some(b), Some(a)) = (&before, &after) {
        println!(
            "train {}: held-out recon {:.4} -> {:.4}",
            stage.name, b.recon_posterior, a.recon_posterior
        );
    }
    stage.finish(&json!({ "epochs": trainer.epoch(), "steps": trainer.step(), "held_out": report }))
}

fn duration(cfg: &RunConfig, stage: &Stage, data: &[Prepared], acoustic: &Checkpoint) -> Result<()> {
    let model = Cdsvae::from_checkpoint(acoustic)?;
    let train: Vec<&Prepared> = data.iter().filter(|p| !p.entry.held_out).collect();
    let pool = SpeakerPool::build(&model, train.iter().map(|p| (p.entry.speaker.as_str(), &p.mel)))?;
    pool.save(stage.path("speakers.json"))?;
    let to_items = |held_out: bool| -> Result<Vec<DurationItem>> {
        data.iter()
            .filter(|p| p.entry.held_out == held_out)
            .filter_map(|p| p.durations.clone().map(|d| (p, d)))
            .map(|(p, durations)| {
                Ok(DurationItem {
                    durations,
                    speaker: pool.get(&p.entry.speaker)?.to_vec(),
                })
            })
            .collect()
    };
    let (train_items, val_items) = (to_items(false)?, to_items(true)?);
    if train_items.is_empty() {
        bail!("no training utterances have forced alignments");
    }
    let dcfg = cfg.frontend.duration.clone();
    let mut trainer = match resumable(stage)? {
        Some(ck) => DurationTrainer::resume(&ck, dcfg)?,
        None => {
            let m = DurationModel::new(cfg.duration_arch(), &mut SeededRng::new(sub_seed(cfg.seed, 6)))?;
            DurationTrainer::new(m, dcfg, sub_seed(cfg.seed, 7))?
        }
    }
    .with_output(&stage.dir)?;
    let log = trainer.run(&train_items, &val_items)?;
    stamp(trainer.checkpoint(), stage).save(stage.path(MODEL_FILE))?;
    let val_mse = if val_items.is_empty() {
        None
    } else {
        Some(evaluate_duration(trainer.model(), &val_items)?)
    };
    if let Some(last) = log.last() {
        println!("train {}: train mse {:.4}, held-out mse {:?}", stage.name, last.train_mse, val_mse);
    }
    stage.finish(&json!({ "epochs": trainer.epoch(), "speakers": pool.len(), "val_mse": val_mse }))
}

fn fa2ua(cfg: &RunConfig, stage: &Stage, data: &[Prepared]) -> Result<()> {
    let to_items = |held_out: bool| -> Result<Vec<Fa2UaItem>> {
        data.iter()
            .filter(|p| p.entry.held_out == held_out)
            .filter_map(|p| p.fa().map(|fa| (p, fa)))
            .map(|(p, fa)| Fa2UaItem::new(fa, p.ua.clone()).with_context(|| p.entry.id.clone()))
            .collect()
    };
    let (train_items, val_items) = (to_items(false)?, to_items(true)?);
    if train_items.is_empty() {
        bail!("no training utterances have forced alignments");
    }
    let fcfg = cfg.frontend.fa2ua.clone();
    let mut trainer = match resumable(stage)? {
        Some(ck) => Fa2UaTrainer::resume(&ck, fcfg.clone())?,
        None => {
            let m = Fa2UaModel::new(cfg.fa2ua_arch(), &mut SeededRng::new(sub_seed(cfg.seed, 8)))?;
            Fa2UaTrainer::new(m, fcfg.clone(), sub_seed(cfg.seed, 9))?
        }
    }
    .with_output(&stage.dir)?;
    let log = trainer.run(&train_items, &val_items)?;
    stamp(trainer.checkpoint(), stage).save(stage.path(MODEL_FILE))?;
    let acc = if val_items.is_empty() {
        None
    } else {
        Some(masked_accuracy(trainer.model(), &val_items, &fcfg.mask, sub_seed(cfg.seed, 10))?)
    };
    if let Some(last) = log.last() {
        println!("train {}: train loss {:.4}, held-out masked accuracy {:?}", stage.name, last.train_loss, acc);
    }
    stage.finish(&json!({ "epochs": trainer.epoch(), "val_masked_accuracy": acc }))
}
