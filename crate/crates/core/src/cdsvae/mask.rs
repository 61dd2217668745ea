use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Span-masking parameters: every frame starts a span with probability `start_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub start_prob: f64,
    pub span: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            start_prob: 0.08,
            span: 10,
        }
    }
}

impl MaskConfig {
    /// Expected masked fraction far from the sequence edges: `1 - (1 - p)^span`.
    pub fn expected_fraction(&self) -> f64 {
        1.0 - (1.0 - self.start_prob).powi(self.span as i32)
    }
}

/// Strictly increasing masked frame indices within a sequence of `len` frames.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskSet {
    indices: Vec<usize>,
    len: usize,
}

impl MaskSet {
    pub fn new(indices: Vec<usize>, len: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("mask indices must be strictly increasing"));
        }
        if indices.last().is_some_and(|&i| i >= len) {
            return Err(invalid!("mask index out of range for {len} frames"));
        }
        Ok(Self { indices, len })
    }

    pub fn empty(len: usize) -> Self {
        Self {
            indices: Vec::new(),
            len,
        }
    }

    pub fn all(len: usize) -> Self {
        Self {
            indices: (0..len).collect(),
            len,
        }
    }

    /// Union of `[start, start + span)` for each start, clipped to `[0, len)`.
    pub fn from_spans(len: usize, starts: &[usize], span: usize) -> Self {
        let mut hit = vec![false; len];
        for &s in starts {
            for h in hit.iter_mut().take((s + span).min(len)).skip(s) {
                *h = true;
            }
        }
        Self {
            indices: hit.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect(),
            len,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }

    /// Replace masked positions of `tokens` with `mask_token`.
    pub fn apply(&self, tokens: &[u32], mask_token: u32) -> Vec<u32> {
        let mut out = tokens.to_vec();
        for &i in &self.indices {
            out[i] = mask_token;
        }
        out
    }
}

/// Draw span starts independently per frame over the first `valid` of `len` frames.
pub fn sample_mask(len: usize, valid: usize, cfg: &MaskConfig, rng: &mut SeededRng) -> MaskSet {
    let valid = valid.min(len);
    let starts: Vec<usize> = (0..valid).filter(|_| rng.bernoulli(cfg.start_prob)).collect();
    let mut m = MaskSet::from_spans(valid, &starts, cfg.span);
    m.len = len;
    m
}
