use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Linear softmax probe trained by full-batch gradient descent on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            epochs: 200,
            learning_rate: 1.0,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub train_frames: usize,
    pub test_frames: usize,
}

/// Top-1 accuracy on a held-out split of a linear classifier over frozen frame features.
///
/// Frames are split at random (seeded) into train and test parts.
pub fn phoneme_probe(features: &[Vec<f64>], labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<ProbeResult> {
    if features.len() != labels.len() {
        return Err(invalid!("{} feature frames but {} labels", features.len(), labels.len()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(invalid!("train fraction must be in (0, 1)"));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(invalid!("feature frames must share a non-zero dimension"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(invalid!("label {l} outside {num_classes} classes"));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    SeededRng::new(cfg.seed).shuffle(&mut order);
    let n_train = ((labels.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, labels.len().saturating_sub(1));
    if n_train == 0 || n_train >= labels.len() {
        return Err(invalid!("need at least two frames to split"));
    }
    let (train, test) = order.split_at(n_train);

    let mut mean = vec![0.0; dim];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(&features[i]) {
            *m += v / train.len() as f64;
        }
    }
    let mut std = vec![0.0; dim];
    for &i in train {
        for ((s, v), m) in std.iter_mut().zip(&features[i]).zip(&mean) {
            *s += (v - m).powi(2) / train.len() as f64;
        }
    }
    let std: Vec<f64> = std.iter().map(|s| s.sqrt().max(1e-8)).collect();
    // design matrix with a trailing bias column
    let design = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), dim + 1, |r, c| {
            if c == dim {
                1.0
            } else {
                (features[rows[r]][c] - mean[c]) / std[c]
            }
        })
    };
    let x = design(train);
    let y = DMatrix::from_fn(train.len(), num_classes, |r, c| f64::from(labels[train[r]] == c));
    let mut w = DMatrix::<f64>::zeros(dim + 1, num_classes);
    let xt = x.transpose();
    for _ in 0..cfg.epochs {
        let mut p = &x * &w;
        softmax_rows(&mut p);
        let grad = (&xt * (p - &y)) / train.len() as f64 + &w * cfg.l2;
        w -= grad * cfg.learning_rate;
    }
    let scores = design(test) * &w;
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| argmax(scores.row(r).iter().copied()) == labels[i])
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        train_frames: train.len(),
        test_frames: test.len(),
    })
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
