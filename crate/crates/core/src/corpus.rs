//! Synthetic two-factor speech corpus.
//!
//! Speakers differ in pitch, vocal-tract scale, speaking rate and loudness; phones
//! differ in formant pattern. The two factors are drawn independently, so speaker
//! identity and content are separable by construction. Every utterance comes with
//! its exact forced alignment.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::PhonemeDurations;
use crate::error::{invalid, Error, Result};
use crate::features::{write_wav, DatasetManifest, ManifestEntry, Waveform, HOP_LENGTH, SAMPLE_RATE};
use crate::frontend::{Lexicon, PhoneSet};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub lexicon_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 10,
            utterances_per_speaker: 8,
            lexicon_size: 24,
            min_words: 3,
            max_words: 5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    /// Formant frequencies (Hz) and a gain.
    Voiced([f64; 3], f64),
    /// Noise band centre and width (Hz).
    Noise(f64, f64),
    Silence,
}

struct ToyPhone {
    symbol: &'static str,
    spelling: &'static str,
    source: Source,
    frames: f64,
    vowel: bool,
}

const PHONES: [ToyPhone; 14] = [
    ToyPhone { symbol: "AA1", spelling: "a", source: Source::Voiced([730.0, 1090.0, 2440.0], 1.0), frames: 10.0, vowel: true },
    ToyPhone { symbol: "IY1", spelling: "ee", source: Source::Voiced([270.0, 2290.0, 3010.0], 0.9), frames: 10.0, vowel: true },
    ToyPhone { symbol: "UW1", spelling: "oo", source: Source::Voiced([300.0, 870.0, 2240.0], 0.9), frames: 10.0, vowel: true },
    ToyPhone { symbol: "EH1", spelling: "e", source: Source::Voiced([530.0, 1840.0, 2480.0], 1.0), frames: 9.0, vowel: true },
    ToyPhone { symbol: "AO1", spelling: "aw", source: Source::Voiced([570.0, 840.0, 2410.0], 1.0), frames: 10.0, vowel: true },
    ToyPhone { symbol: "AE1", spelling: "ae", source: Source::Voiced([660.0, 1720.0, 2410.0], 1.0), frames: 9.0, vowel: true },
    ToyPhone { symbol: "ER1", spelling: "er", source: Source::Voiced([490.0, 1350.0, 1690.0], 0.9), frames: 9.0, vowel: true },
    ToyPhone { symbol: "IH1", spelling: "i", source: Source::Voiced([390.0, 1990.0, 2550.0], 0.9), frames: 8.0, vowel: true },
    ToyPhone { symbol: "M", spelling: "m", source: Source::Voiced([280.0, 1000.0, 2200.0], 0.35), frames: 6.0, vowel: false },
    ToyPhone { symbol: "N", spelling: "n", source: Source::Voiced([280.0, 1700.0, 2600.0], 0.35), frames: 6.0, vowel: false },
    ToyPhone { symbol: "L", spelling: "l", source: Source::Voiced([360.0, 1300.0, 2700.0], 0.5), frames: 6.0, vowel: false },
    ToyPhone { symbol: "S", spelling: "s", source: Source::Noise(5500.0, 1500.0), frames: 7.0, vowel: false },
    ToyPhone { symbol: "SH", spelling: "sh", source: Source::Noise(3000.0, 900.0), frames: 7.0, vowel: false },
    ToyPhone { symbol: "sil", spelling: "", source: Source::Silence, frames: 10.0, vowel: false },
];

const SIL: usize = PHONES.len() - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpeaker {
    pub id: String,
    pub f0: f64,
    pub formant_scale: f64,
    pub rate: f64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub id: String,
    pub speaker: String,
    pub transcript: String,
    pub durations: PhonemeDurations,
    pub waveform: Waveform,
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub config: ToyCorpusConfig,
    pub speakers: Vec<ToySpeaker>,
    pub lexicon: Lexicon,
    pub utterances: Vec<ToyUtterance>,
    /// Phone-table ids of the toy inventory, in inventory order.
    phone_ids: Vec<u32>,
    words: Vec<(String, Vec<usize>)>,
}

impl ToyCorpus {
    pub fn generate(config: ToyCorpusConfig) -> Result<Self> {
        if config.speakers == 0 || config.utterances_per_speaker == 0 {
            return Err(invalid!("toy corpus needs at least one speaker and one utterance each"));
        }
        if config.min_words == 0 || config.min_words > config.max_words || config.lexicon_size == 0 {
            return Err(invalid!("toy corpus word counts are inconsistent"));
        }
        let mut rng = SeededRng::new(config.seed);
        let table = PhoneSet::arpabet();
        let phone_ids = PHONES
            .iter()
            .map(|p| table.id(p.symbol).expect("toy phones are ARPAbet"))
            .collect::<Vec<_>>();

        let words = make_words(config.lexicon_size, &mut rng)?;
        let mut lexicon = Lexicon::new(table);
        for (w, ph) in &words {
            lexicon.insert(w, ph.iter().map(|&i| phone_ids[i]).collect())?;
        }

        let speakers: Vec<ToySpeaker> = (0..config.speakers)
            .map(|i| ToySpeaker {
                id: format!("spk{i:02}"),
                f0: 90.0 * (250.0f64 / 90.0).powf(rng.uniform()),
                formant_scale: 0.82 + 0.4 * rng.uniform(),
                rate: 0.8 + 0.45 * rng.uniform(),
                gain: 0.08 + 0.12 * rng.uniform(),
            })
            .collect();

        let mut corpus = Self {
            config,
            speakers,
            lexicon,
            utterances: Vec::new(),
            phone_ids,
            words,
        };
        for s in 0..corpus.speakers.len() {
            for u in 0..corpus.config.utterances_per_speaker {
                let text = corpus.sentence(&mut rng);
                let speaker = corpus.speakers[s].clone();
                let (durations, waveform) = corpus.render(&text, &speaker, &mut rng)?;
                corpus.utterances.push(ToyUtterance {
                    id: format!("{}_{u:03}", speaker.id),
                    speaker: speaker.id.clone(),
                    transcript: text,
                    durations,
                    waveform,
                });
            }
        }
        Ok(corpus)
    }

    /// A random sentence over the toy lexicon.
    pub fn sentence(&self, rng: &mut SeededRng) -> String {
        let span = self.config.max_words - self.config.min_words + 1;
        let n = self.config.min_words + rng.below(span);
        (0..n)
            .map(|_| self.words[rng.below(self.words.len())].0.clone())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Silence-padded phone sequence, frame durations and audio for `text` spoken by `speaker`.
    pub fn render(&self, text: &str, speaker: &ToySpeaker, rng: &mut SeededRng) -> Result<(PhonemeDurations, Waveform)> {
        let mut inventory = vec![SIL];
        for w in text.split_whitespace() {
            let (_, ph) = self
                .words
                .iter()
                .find(|(word, _)| word == w)
                .ok_or_else(|| Error::OutOfVocabulary(vec![w.to_string()]))?;
            inventory.extend(ph);
        }
        inventory.push(SIL);
        let frames: Vec<u32> = inventory
            .iter()
            .map(|&p| {
                let jitter = 1.0 + 0.3 * (rng.uniform() - 0.5);
                ((PHONES[p].frames * speaker.rate * jitter).round() as u32).max(3)
            })
            .collect();
        let ids = inventory.iter().map(|&p| self.phone_ids[p]).collect();
        let durations = PhonemeDurations::new(ids, frames.clone())?;
        let samples = synthesize(&inventory, &frames, speaker, rng);
        Ok((durations, Waveform::new(samples, SAMPLE_RATE)?))
    }

    pub fn speaker(&self, id: &str) -> Option<&ToySpeaker> {
        self.speakers.iter().find(|s| s.id == id)
    }

    /// Write `wav/`, `fa/`, `manifest.jsonl`, `lexicon.txt`, `phones.txt` and
    /// `speakers.json` under `dir`, returning the loaded manifest.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        for sub in ["wav", "fa"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut entries = Vec::new();
        for u in &self.utterances {
            let wav = Path::new("wav").join(format!("{}.wav", u.id));
            let fa = Path::new("fa").join(format!("{}.fa", u.id));
            write_wav(dir.join(&wav), &u.waveform)?;
            u.durations.save(dir.join(&fa))?;
            entries.push(ManifestEntry {
                utterance_id: u.id.clone(),
                speaker_id: u.speaker.clone(),
                audio_path: wav,
                fa_path: Some(fa),
                ssl_feature_path: None,
                transcript: Some(u.transcript.clone()),
            });
        }
        let manifest = dir.join("manifest.jsonl");
        DatasetManifest::new(entries)?.save(&manifest)?;
        self.lexicon.save(dir.join("lexicon.txt"), dir.join("phones.txt"))?;
        let spk = dir.join("speakers.json");
        let text = serde_json::to_string_pretty(&self.speakers).map_err(|e| Error::format("speakers", e.to_string()))?;
        fs::write(&spk, text).map_err(|e| Error::io(&spk, e))?;
        DatasetManifest::load(manifest)
    }
}

fn make_words(n: usize, rng: &mut SeededRng) -> Result<Vec<(String, Vec<usize>)>> {
    let vowels: Vec<usize> = (0..PHONES.len()).filter(|&i| PHONES[i].vowel).collect();
    let consonants: Vec<usize> = (0..SIL).filter(|&i| !PHONES[i].vowel).collect();
    let mut words: Vec<(String, Vec<usize>)> = Vec::new();
    let mut attempts = 0;
    while words.len() < n {
        attempts += 1;
        if attempts > 100 * n + 1000 {
            return Err(invalid!("could not build {n} distinct toy words"));
        }
        let pattern: &[bool] = match rng.below(4) {
            0 => &[false, true],
            1 => &[false, true, false],
            2 => &[true, false],
            _ => &[false, true, false, true],
        };
        let ph: Vec<usize> = pattern
            .iter()
            .map(|&v| {
                let pool = if v { &vowels } else { &consonants };
                pool[rng.below(pool.len())]
            })
            .collect();
        let spelling: String = ph.iter().map(|&i| PHONES[i].spelling).collect();
        if words.iter().all(|(w, p)| *w != spelling && *p != ph) {
            words.push((spelling, ph));
        }
    }
    Ok(words)
}

fn synthesize(phones: &[usize], frames: &[u32], speaker: &ToySpeaker, rng: &mut SeededRng) -> Vec<f32> {
    let hop = HOP_LENGTH;
    let total: usize = frames.iter().map(|&f| f as usize).sum();
    let sr = SAMPLE_RATE as f64;
    let nyquist = sr / 2.0 - 200.0;
    let max_harmonics = (nyquist / 80.0) as usize;

    // per-frame harmonic amplitude spectra and noise bands
    let mut voiced: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut noise: Vec<Option<(f64, f64)>> = Vec::with_capacity(total);
    let mut f0s: Vec<f64> = Vec::with_capacity(total);
    let mut t = 0usize;
    for (&p, &n) in phones.iter().zip(frames) {
        for _ in 0..n {
            let f0 = speaker.f0 * (1.0 + 0.03 * (2.0 * PI * 5.0 * t as f64 * hop as f64 / sr).sin());
            f0s.push(f0);
            let mut amps = vec![0.0; max_harmonics];
            let mut band = None;
            match PHONES[p].source {
                Source::Voiced(formants, gain) => {
                    for (h, a) in amps.iter_mut().enumerate() {
                        let f = f0 * (h + 1) as f64;
                        if f > nyquist {
                            break;
                        }
                        let mut env = 0.0;
                        for (k, &fk) in formants.iter().enumerate() {
                            let centre = fk * speaker.formant_scale;
                            let bw = 90.0 + 40.0 * k as f64;
                            env += [1.0, 0.7, 0.4][k] * (-(f - centre).powi(2) / (2.0 * bw * bw)).exp();
                        }
                        *a = gain * (env + 0.02) / (1.0 + f / 3000.0);
                    }
                }
                Source::Noise(centre, width) => band = Some((centre * speaker.formant_scale, width)),
                Source::Silence => {}
            }
            voiced.push(amps);
            noise.push(band);
            t += 1;
        }
    }

    let mut out = vec![0.0f64; total * hop];
    let mut phase = vec![0.0f64; max_harmonics];
    let mut noise_phase: Vec<f64> = (0..48).map(|_| 2.0 * PI * rng.uniform()).collect();
    for f in 0..total {
        let next = (f + 1).min(total - 1);
        let noise_freqs: Option<Vec<f64>> = noise[f].map(|(c, w)| {
            (0..noise_phase.len())
                .map(|_| (c + w * (rng.uniform() - 0.5) * 2.0).clamp(50.0, nyquist))
                .collect()
        });
        for i in 0..hop {
            let frac = i as f64 / hop as f64;
            let f0 = f0s[f] * (1.0 - frac) + f0s[next] * frac;
            let mut s = 0.0;
            for h in 0..max_harmonics {
                let fh = f0 * (h + 1) as f64;
                if fh > nyquist {
                    break;
                }
                phase[h] = (phase[h] + 2.0 * PI * fh / sr) % (2.0 * PI);
                let a = voiced[f][h] * (1.0 - frac) + voiced[next][h] * frac;
                if a > 1e-6 {
                    s += a * phase[h].sin();
                }
            }
            if let Some(freqs) = &noise_freqs {
                for (k, fr) in freqs.iter().enumerate() {
                    noise_phase[k] = (noise_phase[k] + 2.0 * PI * fr / sr) % (2.0 * PI);
                    s += 0.05 * noise_phase[k].sin();
                }
            }
            out[f * hop + i] = s;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    out.iter()
        .map(|&v| (speaker.gain * v / peak + 1e-4 * (rng.uniform() - 0.5)) as f32)
        .collect()
}
