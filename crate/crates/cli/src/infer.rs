//! Synthesis, voice conversion and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use utts::alignment::NUM_PHONES;
use utts::cdsvae::Cdsvae;
use utts::eval::{
    cer_wer, compute_eer, embed_utterances, export_projection, generate_trials, phoneme_probe, save_projection,
    score_trials, EmbeddingKind, ScoreReport, TrialList, MIN_POINTS,
};
use utts::features::{compute_mel, load_audio, write_wav, MelSpectrogram};
use utts::frontend::{DurationModel, Fa2UaModel, Lexicon, SpeakerPool};
use utts::nn::to_vec;
use utts::pipeline::{
    synthesize, vocode, voice_convert, DurationSpeaker, SynthesisModels, SynthesisRequest, VocoderConfig,
    VocoderHandle,
};
use utts::SeededRng;

use crate::config::RunConfig;
use crate::layout::{sub_seed, Layout, Stage};
use crate::prepare;
use crate::train::load_model_checkpoint;
use crate::Invalid;

/// Which vocoder a command uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VocoderChoice {
    Internal,
    External,
}

fn vocoder(cfg: &RunConfig, choice: Option<VocoderChoice>) -> Result<VocoderHandle> {
    let config = match choice {
        None => cfg.synthesis.vocoder.clone(),
        Some(VocoderChoice::Internal) => match &cfg.synthesis.vocoder {
            v @ VocoderConfig::Internal { .. } => v.clone(),
            VocoderConfig::External { .. } => VocoderConfig::default(),
        },
        Some(VocoderChoice::External) => match (&cfg.synthesis.vocoder, &cfg.synthesis.external_vocoder) {
            (v @ VocoderConfig::External { .. }, _) => v.clone(),
            (_, Some(v)) => v.clone(),
            _ => {
                return Err(Invalid(
                    "--vocoder external needs synthesis.vocoder or synthesis.external_vocoder with kind = \"external\""
                        .into(),
                )
                .into())
            }
        },
    };
    Ok(VocoderHandle::new(config)?)
}

fn reference_mel(path: &Path) -> Result<MelSpectrogram> {
    Ok(compute_mel(&load_audio(path)?).with_context(|| format!("mel for {}", path.display()))?)
}

fn output_stage(out: Option<&Path>, stage: Stage) -> Stage {
    match out {
        Some(dir) => stage.relocated(dir),
        None => stage,
    }
}

fn acoustic(cfg: &RunConfig, layout: &Layout) -> Result<Cdsvae> {
    let stage = layout.acoustic(cfg);
    Ok(Cdsvae::from_checkpoint(&load_model_checkpoint(stage, stage.name)?)?)
}

pub struct SynthesizeArgs<'a> {
    pub text: &'a str,
    pub ref_audio: &'a Path,
    pub speaker: Option<&'a str>,
    pub vocoder: Option<VocoderChoice>,
    pub output: Option<&'a Path>,
}

pub fn synthesize_cmd(cfg: &RunConfig, layout: &Layout, args: &SynthesizeArgs) -> Result<PathBuf> {
    let acoustic_stage = layout.acoustic(cfg);
    let cdsvae = acoustic(cfg, layout)?;
    let duration = DurationModel::from_checkpoint(&load_model_checkpoint(&layout.duration, "duration")?)?;
    let fa2ua = Fa2UaModel::from_checkpoint(&load_model_checkpoint(&layout.fa2ua, "fa2ua")?)?;
    let speakers = SpeakerPool::load(layout.duration.path("speakers.json"))?;
    let (lex, phones) = cfg.lexicon_paths()?;
    let lexicon = Lexicon::load(&lex, &phones)?;
    let vocoder = vocoder(cfg, args.vocoder)?;
    let reference = reference_mel(args.ref_audio)?;
    let duration_speaker = match args.speaker {
        Some(id) => DurationSpeaker::Id(id.to_string()),
        None => DurationSpeaker::Random,
    };
    let request = json!({
        "text": args.text,
        "ref_audio": args.ref_audio,
        "ref_mel_sha256": crate::config::content_hash(&reference.to_bytes()),
        "duration_speaker": duration_speaker,
        "speaker_latent": cfg.synthesis.speaker_latent,
        "seed": cfg.seed,
        "vocoder": vocoder.config(),
    });
    let stage = output_stage(
        args.output,
        layout.adhoc(cfg, "synthesize", request, &[acoustic_stage, &layout.duration, &layout.fa2ua]),
    );
    let models = SynthesisModels {
        cdsvae,
        duration,
        fa2ua,
        lexicon,
        speakers,
        vocoder,
    };
    let req = SynthesisRequest {
        text: args.text.to_string(),
        reference,
        duration_speaker,
        speaker_latent: cfg.synthesis.speaker_latent,
        seed: cfg.seed,
    };
    let bundle = synthesize(&req, &models)?;
    stage.open(true)?;
    bundle.save(&stage.dir)?;
    stage.finish(&json!({
        "frames": bundle.mel.num_frames(),
        "samples": bundle.waveform.len(),
        "duration_speaker": bundle.duration_speaker,
    }))?;
    println!(
        "synthesize: {} frames, {} samples, speaker {} -> {}",
        bundle.mel.num_frames(),
        bundle.waveform.len(),
        bundle.duration_speaker,
        stage.dir.display()
    );
    Ok(stage.dir)
}

pub fn convert_cmd(
    cfg: &RunConfig,
    layout: &Layout,
    source: &Path,
    target: &Path,
    choice: Option<VocoderChoice>,
    output: Option<&Path>,
) -> Result<PathBuf> {
    let model = acoustic(cfg, layout)?;
    let handle = vocoder(cfg, choice)?;
    let (src, tgt) = (reference_mel(source)?, reference_mel(target)?);
    let request = json!({
        "source": source,
        "target": target,
        "source_mel_sha256": crate::config::content_hash(&src.to_bytes()),
        "target_mel_sha256": crate::config::content_hash(&tgt.to_bytes()),
        "vocoder": handle.config(),
    });
    let stage = output_stage(output, layout.adhoc(cfg, "convert", request, &[layout.acoustic(cfg)]));
    let mel = voice_convert(&src, &tgt, &model).map_err(|e| e.in_stage("cdsvae"))?;
    let wave = vocode(&mel, &handle).map_err(|e| e.in_stage("vocoder"))?;
    stage.open(true)?;
    std::fs::write(stage.path("mel.bin"), mel.to_bytes())?;
    write_wav(stage.path("audio.wav"), &wave)?;
    stage.finish(&json!({ "frames": mel.num_frames(), "samples": wave.len(), "vocoder": handle.backend_name() }))?;
    println!("convert: {} frames -> {}", mel.num_frames(), stage.dir.display());
    Ok(stage.dir)
}

pub struct EvaluateArgs<'a> {
    pub trials: Option<&'a Path>,
    pub embeddings: Option<&'a Path>,
    pub hypotheses: Option<&'a Path>,
    pub output: Option<&'a Path>,
}

fn read_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("embeddings {}: {e}", path.display())).into())
}

/// `utterance_id<TAB>hypothesis` lines.
fn read_hypotheses(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, hyp)) = line.split_once('\t') else {
            return Err(Invalid(format!("{}:{}: expected `id<TAB>text`", path.display(), n + 1)).into());
        };
        out.insert(id.trim().to_string(), hyp.to_string());
    }
    Ok(out)
}

fn file_hash(path: Option<&Path>) -> Result<Value> {
    Ok(match path {
        Some(p) => json!(crate::config::content_hash(
            &std::fs::read(p).with_context(|| format!("reading {}", p.display()))?
        )),
        None => Value::Null,
    })
}

pub fn evaluate_cmd(cfg: &RunConfig, layout: Option<&Layout>, args: &EvaluateArgs) -> Result<PathBuf> {
    let request = json!({
        "trials": file_hash(args.trials)?,
        "embeddings": file_hash(args.embeddings)?,
        "hypotheses": file_hash(args.hypotheses)?,
        "eval": cfg.eval,
        "seed": cfg.seed,
    });
    let mut report = ScoreReport::default();
    let (stage, out_files) = match (args.embeddings, layout) {
        (Some(emb), _) => {
            let trials_path = args
                .trials
                .ok_or_else(|| Invalid("--embeddings needs --trials".into()))?;
            let trials = TrialList::load(trials_path)?;
            let embeds = read_embeddings(emb)?;
            let eer = compute_eer(&score_trials(&embeds, &trials)?)?;
            report.push("eer", eer, trials.len());
            let stage = Stage::standalone(&cfg.out_dir, "evaluate", request);
            (stage, Vec::new())
        }
        (None, Some(layout)) => {
            let stage = layout.adhoc(cfg, "evaluate", request, &[&layout.prepare, layout.acoustic(cfg)]);
            let files = model_metrics(cfg, layout, args.trials, &mut report)?;
            (stage, files)
        }
        (None, None) => return Err(Invalid("evaluate needs a manifest (for model metrics) or --embeddings".into()).into()),
    };
    if let Some(hyp) = args.hypotheses {
        let layout = layout.ok_or_else(|| Invalid("--hypotheses needs a manifest with transcripts".into()))?;
        let refs: BTreeMap<String, String> = prepare::load(&layout.prepare, cfg.num_units())?
            .into_iter()
            .filter_map(|p| p.entry.transcript.map(|t| (p.entry.id, t)))
            .collect();
        let hyps = read_hypotheses(hyp)?;
        let (mut cer, mut wer) = (0.0, 0.0);
        for (id, h) in &hyps {
            let r = refs
                .get(id)
                .ok_or_else(|| Invalid(format!("no reference transcript for {id}")))?;
            let rates = cer_wer(r, h)?;
            cer += rates.cer;
            wer += rates.wer;
        }
        if hyps.is_empty() {
            return Err(Invalid("hypothesis file is empty".into()).into());
        }
        report.push("cer", cer / hyps.len() as f64, hyps.len());
        report.push("wer", wer / hyps.len() as f64, hyps.len());
    }
    let stage = output_stage(args.output, stage);
    stage.open(true)?;
    for (name, write) in out_files {
        write(&stage.path(&name))?;
    }
    report.save(stage.path("report.tsv"))?;
    stage.finish(&report.rows)?;
    print!("{}", report.to_text());
    println!("evaluate: -> {}", stage.dir.display());
    Ok(stage.dir)
}

type Writer = Box<dyn Fn(&Path) -> Result<()>>;

/// EERs from speaker and content embeddings, phoneme probes and projections on held-out utterances.
fn model_metrics(
    cfg: &RunConfig,
    layout: &Layout,
    trials: Option<&Path>,
    report: &mut ScoreReport,
) -> Result<Vec<(String, Writer)>> {
    let model = acoustic(cfg, layout)?;
    let data = prepare::load(&layout.prepare, cfg.num_units())?;
    let held: Vec<_> = data.iter().filter(|p| p.entry.held_out).collect();
    if held.is_empty() {
        bail!("no held-out utterances; set features.held_out_per_speaker > 0 and rerun prepare");
    }
    let trials = match trials {
        Some(p) => TrialList::load(p)?,
        None => {
            let pairs: Vec<(String, String)> =
                held.iter().map(|p| (p.entry.id.clone(), p.entry.speaker.clone())).collect();
            generate_trials(&pairs, cfg.eval.trials_per_class, &mut SeededRng::new(sub_seed(cfg.seed, 11)))?
        }
    };
    let utts = || held.iter().map(|p| (p.entry.id.as_str(), &p.mel));
    let speaker = embed_utterances(&model, utts(), EmbeddingKind::Speaker)?;
    let content = embed_utterances(&model, utts(), EmbeddingKind::Content)?;
    report.push("eer_speaker_embedding", compute_eer(&score_trials(&speaker, &trials)?)?, trials.len());
    report.push("eer_content_embedding", compute_eer(&score_trials(&content, &trials)?)?, trials.len());

    let (mut content_frames, mut speaker_frames, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for p in held.iter().filter(|p| p.durations.is_some()) {
        let fa = p.fa().expect("filtered on durations");
        let post = to_vec(&model.content_posterior(&p.mel)?.mean)?;
        let dim = post.len() / p.mel.num_frames();
        let spk = &speaker[&p.entry.id];
        for (t, &label) in fa.tokens().iter().enumerate() {
            content_frames.push(post[t * dim..(t + 1) * dim].to_vec());
            speaker_frames.push(spk.clone());
            labels.push(label as usize);
        }
    }
    if labels.is_empty() {
        log::warn!("no held-out forced alignments; phoneme probes skipped");
    } else {
        let n = labels.len();
        let probe = &cfg.eval.probe;
        let acc = phoneme_probe(&content_frames, &labels, NUM_PHONES as usize, probe)?;
        report.push("probe_accuracy_content", acc.accuracy, acc.test_frames);
        let acc = phoneme_probe(&speaker_frames, &labels, NUM_PHONES as usize, probe)?;
        report.push("probe_accuracy_speaker", acc.accuracy, acc.test_frames);
        log::info!("phoneme probes over {n} frames");
    }

    let mut files: Vec<(String, Writer)> = vec![("trials.txt".into(), {
        let t = trials.clone();
        Box::new(move |p: &Path| Ok(t.save(p)?))
    })];
    if held.len() >= MIN_POINTS {
        for (name, embeds) in [("speaker", &speaker), ("content", &content)] {
            let points: Vec<(String, String, Vec<f64>)> = held
                .iter()
                .map(|p| (p.entry.id.clone(), p.entry.speaker.clone(), embeds[&p.entry.id].clone()))
                .collect();
            let (projected, used) = export_projection(&points, cfg.eval.projection)?;
            log::info!("{name} projection via {used:?}");
            files.push((
                format!("projection_{name}.tsv"),
                Box::new(move |p: &Path| Ok(save_projection(&projected, p)?)),
            ));
        }
    } else {
        log::warn!("fewer than {MIN_POINTS} held-out utterances; projections skipped");
    }
    Ok(files)
}
