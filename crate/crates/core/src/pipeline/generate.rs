use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocoder::{vocode, VocoderHandle};
use crate::alignment::{expand_phonemes, AlignmentSequence, PhonemeDurations};
use crate::cdsvae::{reparameterize, Cdsvae, GaussianSeq, LatentSample, LatentSource};
use crate::error::{invalid, Error, Result};
use crate::features::{write_wav, MelSpectrogram, Waveform, HOP_LENGTH};
use crate::frontend::{
    durations_to_frames, fa2ua_predict, predict_durations, text_to_phonemes, DurationModel, Fa2UaModel, Lexicon,
    SpeakerPool,
};
use crate::rng::SeededRng;

/// How the target speaker latent is taken from its posterior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerLatent {
    #[default]
    Mean,
    Sample,
}

fn speaker_latent(model: &Cdsvae, tgt: &MelSpectrogram, how: SpeakerLatent, rng: &mut SeededRng) -> Result<LatentSample> {
    let g = model.speaker_posterior(tgt)?;
    match how {
        SpeakerLatent::Mean => Ok(LatentSample::mean_of(&g, LatentSource::PosteriorSpeaker)),
        SpeakerLatent::Sample => reparameterize(&g, LatentSource::PosteriorSpeaker, rng),
    }
}

/// Content of `src` in the voice of `tgt`, from posterior means. Output has `src`'s length.
pub fn voice_convert(src: &MelSpectrogram, tgt: &MelSpectrogram, model: &Cdsvae) -> Result<MelSpectrogram> {
    let zs = speaker_latent(model, tgt, SpeakerLatent::Mean, &mut SeededRng::new(0))?;
    let zc = LatentSample::mean_of(&model.content_posterior(src)?, LatentSource::PosteriorContent);
    model.tensor_to_mel(&model.decode(&zs, &zc)?)
}

/// Mel frames for an alignment in the voice of `tgt`, with content sampled from the prior.
pub fn generate_from_alignment(
    a: &AlignmentSequence,
    tgt: &MelSpectrogram,
    model: &Cdsvae,
    speaker: SpeakerLatent,
    rng: &mut SeededRng,
) -> Result<MelSpectrogram> {
    if a.is_empty() {
        return Err(invalid!("cannot generate from an empty alignment"));
    }
    let prior: GaussianSeq = model.content_prior(a)?;
    let zs = speaker_latent(model, tgt, speaker, rng)?;
    let zc = reparameterize(&prior, LatentSource::PriorContent, rng)?;
    model.tensor_to_mel(&model.decode(&zs, &zc)?)
}

/// Whose speaking rate drives the duration predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationSpeaker {
    /// Draw a speaker from the pool with the request seed.
    Random,
    Id(String),
}

#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    pub text: String,
    /// Mel spectrogram of the reference utterance whose voice is cloned.
    pub reference: MelSpectrogram,
    pub duration_speaker: DurationSpeaker,
    pub speaker_latent: SpeakerLatent,
    pub seed: u64,
}

/// Everything synthesis needs, read-only.
pub struct SynthesisModels {
    pub cdsvae: Cdsvae,
    pub duration: DurationModel,
    pub fa2ua: Fa2UaModel,
    pub lexicon: Lexicon,
    pub speakers: SpeakerPool,
    pub vocoder: VocoderHandle,
}

/// Intermediates of one synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactBundle {
    pub text: String,
    pub duration_speaker: String,
    pub log_durations: Vec<f64>,
    pub durations: PhonemeDurations,
    pub fa: AlignmentSequence,
    pub ua: AlignmentSequence,
    pub mel: MelSpectrogram,
    pub waveform: Waveform,
    pub vocoder: String,
}

#[derive(Serialize)]
struct BundleSummary<'a> {
    text: &'a str,
    duration_speaker: &'a str,
    vocoder: &'a str,
    phonemes: usize,
    frames: usize,
    samples: usize,
    log_durations: &'a [f64],
}

impl ArtifactBundle {
    /// Write `summary.json`, `durations.txt`, `fa.txt`, `ua.txt`, `mel.bin` and `audio.wav`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = BundleSummary {
            text: &self.text,
            duration_speaker: &self.duration_speaker,
            vocoder: &self.vocoder,
            phonemes: self.durations.phonemes().len(),
            frames: self.mel.num_frames(),
            samples: self.waveform.len(),
            log_durations: &self.log_durations,
        };
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        write("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;
        self.durations.save(dir.join("durations.txt"))?;
        self.fa.save(dir.join("fa.txt"))?;
        self.ua.save(dir.join("ua.txt"))?;
        write("mel.bin", &self.mel.to_bytes())?;
        write_wav(dir.join("audio.wav"), &self.waveform)
    }
}

/// Text to waveform: phonemes, durations, FA, FA2UA, prior sampling, vocoder.
pub fn synthesize(req: &SynthesisRequest, m: &SynthesisModels) -> Result<ArtifactBundle> {
    let mut rng = SeededRng::new(req.seed);
    let phonemes = text_to_phonemes(&req.text, &m.lexicon)
        .map_err(|e| e.in_stage("frontend"))?
        .with_edge_silence(m.lexicon.phones().silence());
    let (spk_id, spk) = match &req.duration_speaker {
        DurationSpeaker::Random => m.speakers.choose(&mut rng),
        DurationSpeaker::Id(id) => m.speakers.get(id).map(|v| (id.as_str(), v)),
    }
    .map_err(|e| e.in_stage("frontend"))?;
    let log_durations = predict_durations(&phonemes, spk, &m.duration).map_err(|e| e.in_stage("duration"))?;
    let frames = durations_to_frames(&log_durations).map_err(|e| e.in_stage("duration"))?;
    let durations = PhonemeDurations::new(phonemes.ids.clone(), frames).map_err(|e| e.in_stage("duration"))?;
    let fa = expand_phonemes(&durations);
    let ua = fa2ua_predict(&fa, &m.fa2ua).map_err(|e| e.in_stage("fa2ua"))?;
    let mel = generate_from_alignment(&ua, &req.reference, &m.cdsvae, req.speaker_latent, &mut rng)
        .map_err(|e| e.in_stage("cdsvae"))?;
    let waveform = vocode(&mel, &m.vocoder).map_err(|e| e.in_stage("vocoder"))?;
    debug_assert!(waveform.len().abs_diff(mel.num_frames() * HOP_LENGTH) <= HOP_LENGTH);
    Ok(ArtifactBundle {
        text: req.text.clone(),
        duration_speaker: spk_id.to_string(),
        log_durations,
        durations,
        fa,
        ua,
        mel,
        waveform,
        vocoder: m.vocoder.backend_name().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::cdsvae::{ArchConfig, ConditionSpec, MelNorm};
    use crate::features::N_MELS;
    use crate::frontend::{DurationArch, Fa2UaArch, PhoneSet};

    const UNITS: u32 = 6;

    fn model() -> Cdsvae {
        let arch = ArchConfig::tiny(ConditionSpec::ua(UNITS), N_MELS);
        Cdsvae::new(arch, MelNorm::identity(N_MELS), &mut SeededRng::new(1)).unwrap()
    }

    fn mel(frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = SeededRng::new(seed);
        MelSpectrogram::from_frames((0..frames * N_MELS).map(|_| rng.normal() as f32 - 4.0).collect(), frames).unwrap()
    }

    fn models() -> SynthesisModels {
        let cdsvae = model();
        let dim = cdsvae.arch().latent_dim;
        let phones = PhoneSet::arpabet();
        let mut lexicon = Lexicon::new(phones.clone());
        let ids = |s: &str| s.split(' ').map(|p| phones.id(p).unwrap()).collect::<Vec<_>>();
        lexicon.insert("hello", ids("HH AH0 L OW1")).unwrap();
        lexicon.insert("world", ids("W ER1 L D")).unwrap();
        let mut speakers = BTreeMap::new();
        speakers.insert("a".to_string(), vec![0.5; dim]);
        speakers.insert("b".to_string(), vec![-0.5; dim]);
        let mut rng = SeededRng::new(2);
        SynthesisModels {
            duration: DurationModel::new(DurationArch::tiny(dim), &mut rng).unwrap(),
            fa2ua: Fa2UaModel::new(Fa2UaArch::tiny(UNITS), &mut rng).unwrap(),
            cdsvae,
            lexicon,
            speakers: SpeakerPool::from_map(speakers).unwrap(),
            vocoder: VocoderHandle::internal(),
        }
    }

    fn request(text: &str, seed: u64) -> SynthesisRequest {
        SynthesisRequest {
            text: text.into(),
            reference: mel(30, 9),
            duration_speaker: DurationSpeaker::Random,
            speaker_latent: SpeakerLatent::Mean,
            seed,
        }
    }

    #[test]
    fn conversion_keeps_source_length_and_uses_the_target() {
        let m = model();
        let (src, tgt) = (mel(20, 1), mel(35, 2));
        assert_eq!(voice_convert(&src, &src, &m).unwrap(), m.reconstruct(&src).unwrap());
        let out = voice_convert(&src, &tgt, &m).unwrap();
        assert_eq!(out.num_frames(), 20);
        assert_eq!(voice_convert(&tgt, &src, &m).unwrap().num_frames(), 35);
        assert_ne!(out, voice_convert(&src, &src, &m).unwrap());
    }

    #[test]
    fn generation_follows_the_alignment() {
        let m = model();
        let a = AlignmentSequence::ua((0..120).map(|i| (i / 7) % UNITS).collect(), UNITS).unwrap();
        let g = |seed| generate_from_alignment(&a, &mel(25, 3), &m, SpeakerLatent::Mean, &mut SeededRng::new(seed)).unwrap();
        assert_eq!(g(5).num_frames(), 120);
        assert_eq!(g(5), g(5));
        assert_ne!(g(5), g(6));
        let fa = AlignmentSequence::fa(vec![1; 10]).unwrap();
        assert!(generate_from_alignment(&fa, &mel(25, 3), &m, SpeakerLatent::Mean, &mut SeededRng::new(0))
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn synthesis_bookkeeping_and_determinism() {
        let m = models();
        let b = synthesize(&request("Hello, world!", 4), &m).unwrap();
        let total: u32 = b.durations.durations().iter().sum();
        assert_eq!(b.durations.phonemes().len(), 10);
        assert_eq!(total as usize, b.fa.len());
        assert_eq!(b.fa.len(), b.ua.len());
        assert_eq!(b.ua.len(), b.mel.num_frames());
        assert_eq!(b.waveform.len(), b.mel.num_frames() * HOP_LENGTH);
        assert_eq!(b, synthesize(&request("Hello, world!", 4), &m).unwrap());

        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path().join("one")).unwrap();
        b.save(dir.path().join("two")).unwrap();
        for f in ["summary.json", "durations.txt", "fa.txt", "ua.txt", "mel.bin", "audio.wav"] {
            let read = |d: &str| fs::read(dir.path().join(d).join(f)).unwrap();
            assert_eq!(read("one"), read("two"), "{f}");
        }
    }

    #[test]
    fn synthesis_errors_carry_their_stage() {
        let m = models();
        let err = synthesize(&request("   ", 0), &m).unwrap_err();
        assert!(err.is_validation() && err.to_string().starts_with("[frontend]"), "{err}");
        let err = synthesize(&request("hello zebra", 0), &m).unwrap_err();
        assert!(err.to_string().contains("zebra"), "{err}");
        let mut r = request("hello", 0);
        r.duration_speaker = DurationSpeaker::Id("nobody".into());
        assert!(synthesize(&r, &m).is_err());
    }
}
