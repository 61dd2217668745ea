use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cosine, ScoredTrials, TrialList};
use crate::cdsvae::Cdsvae;
use crate::error::{invalid, Result};
use crate::features::MelSpectrogram;
use crate::nn::to_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Posterior speaker mean.
    Speaker,
    /// Time-averaged posterior content mean.
    Content,
}

/// One embedding per utterance, from posterior means (no sampling).
pub fn embed_utterances<'a>(
    model: &Cdsvae,
    utterances: impl IntoIterator<Item = (&'a str, &'a MelSpectrogram)>,
    which: EmbeddingKind,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (id, mel) in utterances {
        if out.contains_key(id) {
            return Err(invalid!("duplicate utterance id {id}"));
        }
        let v = match which {
            EmbeddingKind::Speaker => to_vec(&model.speaker_posterior(mel)?.mean)?,
            EmbeddingKind::Content => to_vec(&model.content_posterior(mel)?.mean.mean(1)?)?,
        };
        out.insert(id.to_string(), v);
    }
    Ok(out)
}

/// Cosine score of every trial.
pub fn score_trials(embeds: &BTreeMap<String, Vec<f64>>, trials: &TrialList) -> Result<ScoredTrials> {
    let get = |u: &str| embeds.get(u).ok_or_else(|| invalid!("no embedding for utterance {u}"));
    let mut scores = Vec::with_capacity(trials.len());
    let mut flags = Vec::with_capacity(trials.len());
    for t in &trials.trials {
        scores.push(cosine(get(&t.utt_a)?, get(&t.utt_b)?));
        flags.push(t.is_target);
    }
    ScoredTrials::new(scores, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Trial;

    #[test]
    fn scores_follow_geometry_and_missing_ids_fail() {
        let mut e = BTreeMap::new();
        e.insert("a".to_string(), vec![1.0, 0.0]);
        e.insert("b".to_string(), vec![2.0, 0.0]);
        e.insert("c".to_string(), vec![0.0, 1.0]);
        e.insert("d".to_string(), vec![-1.0, 0.0]);
        let t = |a: &str, b: &str| Trial { utt_a: a.into(), utt_b: b.into(), is_target: true };
        let list = TrialList { trials: vec![t("a", "b"), t("a", "c"), t("a", "d")] };
        assert_eq!(score_trials(&e, &list).unwrap().scores, vec![1.0, 0.0, -1.0]);
        let bad = TrialList { trials: vec![t("a", "zz")] };
        assert!(score_trials(&e, &bad).unwrap_err().to_string().contains("zz"));
    }
}
