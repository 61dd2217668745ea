use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cdsvae::Cdsvae;
use crate::error::{invalid, Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::to_vec;
use crate::rng::SeededRng;

/// Per-speaker mean of posterior speaker-embedding means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPool {
    speakers: BTreeMap<String, Vec<f64>>,
}

impl SpeakerPool {
    pub fn build<'a>(model: &Cdsvae, utterances: impl IntoIterator<Item = (&'a str, &'a MelSpectrogram)>) -> Result<Self> {
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (speaker, mel) in utterances {
            let mean = to_vec(&model.speaker_posterior(mel)?.mean)?;
            let entry = sums
                .entry(speaker.to_string())
                .or_insert_with(|| (vec![0.0; mean.len()], 0));
            for (s, v) in entry.0.iter_mut().zip(&mean) {
                *s += v;
            }
            entry.1 += 1;
        }
        if sums.is_empty() {
            return Err(invalid!("speaker pool needs at least one utterance"));
        }
        Ok(Self {
            speakers: sums
                .into_iter()
                .map(|(k, (s, n))| (k, s.into_iter().map(|v| v / n as f64).collect()))
                .collect(),
        })
    }

    pub fn from_map(speakers: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dims: Vec<usize> = speakers.values().map(Vec::len).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(invalid!("speaker embeddings have differing widths"));
        }
        Ok(Self { speakers })
    }

    pub fn get(&self, speaker: &str) -> Result<&[f64]> {
        self.speakers
            .get(speaker)
            .map(Vec::as_slice)
            .ok_or_else(|| invalid!("speaker {speaker:?} is not in the pool"))
    }

    /// Uniformly chosen speaker.
    pub fn choose(&self, rng: &mut SeededRng) -> Result<(&str, &[f64])> {
        if self.speakers.is_empty() {
            return Err(invalid!("speaker pool is empty"));
        }
        let (k, v) = self.speakers.iter().nth(rng.below(self.speakers.len())).expect("index in range");
        Ok((k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.speakers.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format("speaker pool", e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pool: Self = serde_json::from_str(&text).map_err(|e| Error::format("speaker pool", e.to_string()))?;
        Self::from_map(pool.speakers)
    }
}
