use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub utt_a: String,
    pub utt_b: String,
    pub is_target: bool,
}

/// Verification trials, stored as `utt_a utt_b 0|1` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn parse(text: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let is_target = match f.as_slice() {
                [_, _, "1"] => true,
                [_, _, "0"] => false,
                _ => return Err(Error::format("trial list", format!("line {}: expected `utt_a utt_b 0|1`", n + 1))),
            };
            trials.push(Trial {
                utt_a: f[0].to_string(),
                utt_b: f[1].to_string(),
                is_target,
            });
        }
        Ok(Self { trials })
    }

    pub fn to_text(&self) -> String {
        self.trials
            .iter()
            .map(|t| format!("{} {} {}\n", t.utt_a, t.utt_b, t.is_target as u8))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Up to `per_class` target and `per_class` non-target trials over `(utterance, speaker)` pairs.
///
/// Target trials pair two different utterances of one speaker; non-target trials pair
/// utterances of two different speakers. Pairs are drawn without repetition.
pub fn generate_trials(utterances: &[(String, String)], per_class: usize, rng: &mut SeededRng) -> Result<TrialList> {
    let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (u, s) in utterances {
        by_speaker.entry(s.as_str()).or_default().push(u.as_str());
    }
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for i in 0..utterances.len() {
        for j in i + 1..utterances.len() {
            let pair = (i, j);
            if utterances[i].1 == utterances[j].1 {
                targets.push(pair);
            } else {
                nontargets.push(pair);
            }
        }
    }
    if targets.is_empty() || nontargets.is_empty() {
        return Err(invalid!("need at least two speakers and a speaker with two utterances"));
    }
    rng.shuffle(&mut targets);
    rng.shuffle(&mut nontargets);
    let n = per_class.min(targets.len()).min(nontargets.len());
    let mut trials: Vec<Trial> = targets[..n]
        .iter()
        .map(|&p| (p, true))
        .chain(nontargets[..n].iter().map(|&p| (p, false)))
        .map(|((i, j), is_target)| Trial {
            utt_a: utterances[i].0.clone(),
            utt_b: utterances[j].0.clone(),
            is_target,
        })
        .collect();
    rng.shuffle(&mut trials);
    Ok(TrialList { trials })
}
