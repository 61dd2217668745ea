//! Data preparation: mels, the unit codebook, unit alignments and duration targets.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use utts::alignment::{
    assign_units, expand_phonemes, fit_codebook, resample_alignment, AlignmentSequence, PhonemeDurations,
};
use utts::features::{
    cepstral_proxy, compute_mel, load_audio, load_feature_matrix, DatasetManifest, FeatureMatrix, ManifestEntry,
    MelSpectrogram,
};
use utts::SeededRng;

use crate::config::{FeatureSource, RunConfig};
use crate::layout::{sub_seed, write_json, Stage};
use crate::Invalid;

/// One row of `index.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub speaker: String,
    pub held_out: bool,
    pub frames: usize,
    pub has_fa: bool,
    pub transcript: Option<String>,
}

#[derive(Debug, Serialize)]
struct PrepareSummary {
    utterances: usize,
    train: usize,
    held_out: usize,
    with_fa: usize,
    mel_frames: usize,
    feature_source: &'static str,
    units: usize,
    kmeans_iterations: usize,
    final_inertia: f64,
    warnings: usize,
}

/// A prepared utterance loaded back from disk.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub entry: IndexEntry,
    pub mel: MelSpectrogram,
    pub ua: AlignmentSequence,
    pub durations: Option<PhonemeDurations>,
}

impl Prepared {
    pub fn fa(&self) -> Option<AlignmentSequence> {
        self.durations.as_ref().map(expand_phonemes)
    }
}

/// Held-out utterances: the last `n` of each speaker in manifest order, keeping at least one for training.
fn split(entries: &[ManifestEntry], n: usize) -> Vec<bool> {
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_speaker.entry(&e.speaker_id).or_default().push(i);
    }
    let mut held = vec![false; entries.len()];
    for idx in by_speaker.values() {
        let take = n.min(idx.len().saturating_sub(1));
        for &i in &idx[idx.len() - take..] {
            held[i] = true;
        }
    }
    held
}

/// Pad by repeating the last token, or truncate, so the alignment has `frames` entries.
fn fit_length(a: &AlignmentSequence, frames: usize, k: u32) -> Result<AlignmentSequence> {
    let mut tokens = a.tokens().to_vec();
    let last = *tokens.last().context("empty unit alignment")?;
    tokens.resize(frames, last);
    Ok(AlignmentSequence::ua(tokens, k)?)
}

/// Shift the final phoneme so the durations cover exactly `frames`, if within `tolerance`.
fn reconcile(pd: PhonemeDurations, frames: usize, tolerance: usize) -> std::result::Result<PhonemeDurations, String> {
    let total = pd.total_frames();
    if total == frames {
        return Ok(pd);
    }
    if total.abs_diff(frames) > tolerance {
        return Err(format!("forced alignment covers {total} frames but the mel has {frames}"));
    }
    let mut durs = pd.durations().to_vec();
    let last = durs.last_mut().expect("durations are non-empty");
    let adjusted = *last as i64 + frames as i64 - total as i64;
    if adjusted < 1 {
        return Err(format!("cannot absorb a {total} vs {frames} frame mismatch in the final phoneme"));
    }
    *last = adjusted as u32;
    PhonemeDurations::new(pd.phonemes().to_vec(), durs).map_err(|e| e.to_string())
}

fn feature_source(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<FeatureSource> {
    let all_ssl = manifest.entries.iter().all(|e| e.ssl_feature_path.is_some());
    Ok(match cfg.features.source {
        FeatureSource::Auto if all_ssl => FeatureSource::Ssl,
        FeatureSource::Auto => FeatureSource::Cepstral,
        FeatureSource::Ssl if !all_ssl => {
            return Err(Invalid("features.source = \"ssl\" but some manifest entries lack ssl_feature_path".into()).into())
        }
        other => other,
    })
}

pub fn run(cfg: &RunConfig, stage: &Stage, force: bool) -> Result<()> {
    if stage.is_complete() && !force {
        println!("prepare: up to date in {}", stage.dir.display());
        return Ok(());
    }
    let manifest = DatasetManifest::load(cfg.manifest()?)?;
    if manifest.is_empty() {
        return Err(Invalid("manifest has no utterances".into()).into());
    }
    let source = feature_source(cfg, &manifest)?;
    stage.open(force)?;
    for sub in ["mel", "ua", "dur"] {
        std::fs::create_dir_all(stage.path(sub))?;
    }
    let held = split(&manifest.entries, cfg.features.held_out_per_speaker);
    let mut warnings = Vec::new();
    let mut mels = Vec::with_capacity(manifest.len());
    let mut feats: Vec<FeatureMatrix> = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let mel = compute_mel(&load_audio(&e.audio_path)?).with_context(|| format!("mel for {}", e.utterance_id))?;
        let f = match source {
            FeatureSource::Ssl => load_feature_matrix(e.ssl_feature_path.as_ref().expect("checked above"))?,
            _ => cepstral_proxy(&mel)?,
        };
        std::fs::write(stage.path(&format!("mel/{}.mel", e.utterance_id)), mel.to_bytes())?;
        mels.push(mel);
        feats.push(f);
    }
    log::info!("prepare: {} mels written, fitting {} units", mels.len(), cfg.alignment.kmeans.k);

    let train_feats: Vec<FeatureMatrix> =
        feats.iter().zip(&held).filter(|(_, &h)| !h).map(|(f, _)| f.clone()).collect();
    let mut rng = SeededRng::new(sub_seed(cfg.seed, 1));
    let (codebook, report) = fit_codebook(&train_feats, &cfg.alignment.kmeans, &mut rng)?;
    codebook.save(stage.path("codebook.bin"))?;
    let k = cfg.num_units();

    let mut index = Vec::with_capacity(manifest.len());
    for ((e, mel), (f, &held_out)) in manifest.entries.iter().zip(&mels).zip(feats.iter().zip(&held)) {
        let frames = mel.num_frames();
        let mut ua = assign_units(f, &codebook)?;
        if f.frame_rate() != mel.frame_rate() {
            ua = resample_alignment(&ua, f.frame_rate(), mel.frame_rate())?;
        }
        let ua = fit_length(&ua, frames, k)?;
        ua.save(stage.path(&format!("ua/{}.ua", e.utterance_id)))?;
        let has_fa = match &e.fa_path {
            None => {
                warnings.push(format!("{}: no forced alignment; excluded from duration and fa2ua training", e.utterance_id));
                false
            }
            Some(p) => match reconcile(PhonemeDurations::load(p)?, frames, cfg.features.fa_tolerance_frames) {
                Ok(pd) => {
                    pd.save(stage.path(&format!("dur/{}.dur", e.utterance_id)))?;
                    true
                }
                Err(msg) => {
                    warnings.push(format!("{}: {msg}; excluded from duration and fa2ua training", e.utterance_id));
                    false
                }
            },
        };
        index.push(IndexEntry {
            id: e.utterance_id.clone(),
            speaker: e.speaker_id.clone(),
            held_out,
            frames,
            has_fa,
            transcript: e.transcript.clone(),
        });
    }
    write_json(&stage.path("index.json"), &index)?;
    std::fs::write(stage.path("warnings.txt"), warnings.iter().map(|w| format!("{w}\n")).collect::<String>())?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let summary = PrepareSummary {
        utterances: index.len(),
        train: index.iter().filter(|e| !e.held_out).count(),
        held_out: index.iter().filter(|e| e.held_out).count(),
        with_fa: index.iter().filter(|e| e.has_fa).count(),
        mel_frames: index.iter().map(|e| e.frames).sum(),
        feature_source: if source == FeatureSource::Ssl { "ssl" } else { "cepstral" },
        units: codebook.k(),
        kmeans_iterations: report.iterations(),
        final_inertia: report.inertia.last().copied().unwrap_or(f64::NAN),
        warnings: warnings.len(),
    };
    stage.finish(&summary)?;
    println!(
        "prepare: {} utterances ({} train, {} held out), {} with FA, {} units, {} warnings -> {}",
        summary.utterances,
        summary.train,
        summary.held_out,
        summary.with_fa,
        summary.units,
        summary.warnings,
        stage.dir.display()
    );
    Ok(())
}

/// Load every prepared utterance, or fail if preparation has not run.
pub fn load(stage: &Stage, k: u32) -> Result<Vec<Prepared>> {
    if !stage.is_complete() {
        bail!("no prepared data in {}; run `utts prepare` first", stage.dir.display());
    }
    let text = std::fs::read_to_string(stage.path("index.json"))?;
    let index: Vec<IndexEntry> = serde_json::from_str(&text).context("index.json")?;
    let read = |p: &Path| std::fs::read(p).with_context(|| format!("reading {}", p.display()));
    index
        .into_iter()
        .map(|entry| {
            let mel = MelSpectrogram::from_bytes(&read(&stage.path(&format!("mel/{}.mel", entry.id)))?)?;
            let ua = AlignmentSequence::load(stage.path(&format!("ua/{}.ua", entry.id)))?;
            if ua.vocab_size() != k + 1 {
                bail!("{}: unit alignment has {} symbols, config expects {}", entry.id, ua.vocab_size(), k + 1);
            }
            let durations = if entry.has_fa {
                Some(PhonemeDurations::load(stage.path(&format!("dur/{}.dur", entry.id)))?)
            } else {
                None
            };
            Ok(Prepared {
                entry,
                mel,
                ua,
                durations,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, spk: &str) -> ManifestEntry {
        ManifestEntry {
            utterance_id: id.into(),
            speaker_id: spk.into(),
            audio_path: "x.wav".into(),
            fa_path: None,
            ssl_feature_path: None,
            transcript: None,
        }
    }

    #[test]
    fn split_holds_out_the_tail_of_each_speaker() {
        let es = vec![entry("a1", "a"), entry("b1", "b"), entry("a2", "a"), entry("a3", "a")];
        assert_eq!(split(&es, 2), vec![false, false, true, true]);
        assert_eq!(split(&es, 0), vec![false; 4]);
    }

    #[test]
    fn reconcile_absorbs_small_mismatches_only() {
        let pd = PhonemeDurations::new(vec![1, 2], vec![3, 4]).unwrap();
        assert_eq!(reconcile(pd.clone(), 8, 2).unwrap().durations(), &[3, 5]);
        assert_eq!(reconcile(pd.clone(), 6, 2).unwrap().durations(), &[3, 3]);
        assert!(reconcile(pd.clone(), 12, 2).is_err());
        let short = PhonemeDurations::new(vec![1, 2], vec![3, 1]).unwrap();
        assert!(reconcile(short, 3, 2).is_err());
    }

    #[test]
    fn fit_length_pads_with_the_last_unit() {
        let a = AlignmentSequence::ua(vec![0, 1, 2], 4).unwrap();
        assert_eq!(fit_length(&a, 5, 4).unwrap().tokens(), &[0, 1, 2, 2, 2]);
        assert_eq!(fit_length(&a, 2, 4).unwrap().tokens(), &[0, 1]);
    }
}
