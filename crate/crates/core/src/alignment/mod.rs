//! Frame-level alignments: forced alignments from phoneme durations and
//! unsupervised alignments from clustering frame features.

mod kmeans;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use kmeans::{assign_units, fit_codebook, Codebook, KMeansConfig, KMeansReport};

/// Size of the monophone inventory.
pub const NUM_PHONES: u32 = 72;
/// FA token that replaces masked frames.
pub const FA_MASK: u32 = NUM_PHONES;
/// FA padding token.
pub const FA_PAD: u32 = NUM_PHONES + 1;
pub const FA_VOCAB: u32 = NUM_PHONES + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlignmentKind {
    /// Forced alignment over monophones.
    Fa,
    /// Unsupervised alignment over cluster ids.
    Ua,
}

impl fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignmentKind::Fa => "FA",
            AlignmentKind::Ua => "UA",
        })
    }
}

/// Frame-level token sequence. `vocab_size` counts the special symbols too:
/// FA is 72 phones + mask + pad, UA is `K` units + mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSequence {
    tokens: Vec<u32>,
    kind: AlignmentKind,
    vocab_size: u32,
}

impl AlignmentSequence {
    pub fn new(tokens: Vec<u32>, kind: AlignmentKind, vocab_size: u32) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(invalid!("{kind} token {bad} outside vocabulary of {vocab_size}"));
        }
        Ok(Self {
            tokens,
            kind,
            vocab_size,
        })
    }

    pub fn fa(tokens: Vec<u32>) -> Result<Self> {
        Self::new(tokens, AlignmentKind::Fa, FA_VOCAB)
    }

    /// UA over `num_units` clusters (mask symbol is `num_units`).
    pub fn ua(tokens: Vec<u32>, num_units: u32) -> Result<Self> {
        Self::new(tokens, AlignmentKind::Ua, num_units + 1)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn kind(&self) -> AlignmentKind {
        self.kind
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Number of real classes (excludes mask/pad symbols).
    pub fn num_classes(&self) -> u32 {
        match self.kind {
            AlignmentKind::Fa => NUM_PHONES,
            AlignmentKind::Ua => self.vocab_size - 1,
        }
    }

    pub fn mask_token(&self) -> u32 {
        match self.kind {
            AlignmentKind::Fa => FA_MASK,
            AlignmentKind::Ua => self.vocab_size - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Frames `[start, start + len)`, padding past the end by repeating the last token.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let last = self.tokens.last().copied().unwrap_or(0);
        let tokens = (start..start + len)
            .map(|i| self.tokens.get(i).copied().unwrap_or(last))
            .collect();
        Self {
            tokens,
            kind: self.kind,
            vocab_size: self.vocab_size,
        }
    }

    /// Text form: a `#alignment kind=UA vocab_size=N` header, then whitespace-separated tokens.
    pub fn to_text(&self) -> String {
        let mut s = format!("#alignment kind={} vocab_size={}\n", self.kind, self.vocab_size);
        let body: Vec<String> = self.tokens.iter().map(u32::to_string).collect();
        s.push_str(&body.join(" "));
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::format("alignment file", m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let mut kind = None;
        let mut vocab = None;
        for field in header.trim_start_matches("#alignment").split_whitespace() {
            match field.split_once('=') {
                Some(("kind", "FA")) => kind = Some(AlignmentKind::Fa),
                Some(("kind", "UA")) => kind = Some(AlignmentKind::Ua),
                Some(("vocab_size", v)) => vocab = v.parse::<u32>().ok(),
                _ => return Err(bad(&format!("unexpected header field `{field}`"))),
            }
        }
        let (kind, vocab) = kind.zip(vocab).ok_or_else(|| bad("header needs kind and vocab_size"))?;
        let tokens = lines
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<u32>().map_err(|_| bad(&format!("bad token `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tokens, kind, vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Phoneme ids with per-phoneme frame counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeDurations {
    phonemes: Vec<u32>,
    durations: Vec<u32>,
}

impl PhonemeDurations {
    pub fn new(phonemes: Vec<u32>, durations: Vec<u32>) -> Result<Self> {
        if phonemes.len() != durations.len() {
            return Err(invalid!(
                "{} phonemes but {} durations",
                phonemes.len(),
                durations.len()
            ));
        }
        if durations.contains(&0) {
            return Err(invalid!("phoneme durations must be at least one frame"));
        }
        if let Some(&p) = phonemes.iter().find(|&&p| p >= NUM_PHONES) {
            return Err(invalid!("phoneme id {p} outside the {NUM_PHONES}-phone inventory"));
        }
        Ok(Self {
            phonemes,
            durations,
        })
    }

    pub fn phonemes(&self) -> &[u32] {
        &self.phonemes
    }

    pub fn durations(&self) -> &[u32] {
        &self.durations
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    /// FA file body: one `phoneme_id<TAB>duration_frames` row per phoneme, `#` comments allowed.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# phoneme_id\tduration_frames\n");
        for (p, d) in self.phonemes.iter().zip(&self.durations) {
            s.push_str(&format!("{p}\t{d}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut phonemes = Vec::new();
        let mut durations = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |c: Option<&str>| -> Result<u32> {
                c.and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format("FA file", format!("line {}: `{line}`", i + 1)))
            };
            phonemes.push(parse(cols.next())?);
            durations.push(parse(cols.next())?);
        }
        Self::new(phonemes, durations)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Repeat each phoneme by its duration.
pub fn expand_phonemes(pd: &PhonemeDurations) -> AlignmentSequence {
    let tokens = pd
        .phonemes
        .iter()
        .zip(&pd.durations)
        .flat_map(|(&p, &d)| std::iter::repeat_n(p, d as usize))
        .collect();
    AlignmentSequence {
        tokens,
        kind: AlignmentKind::Fa,
        vocab_size: FA_VOCAB,
    }
}

/// Run-length encode a forced alignment back into phonemes and durations.
pub fn durations_from_alignment(a: &AlignmentSequence) -> Result<PhonemeDurations> {
    if a.kind != AlignmentKind::Fa {
        return Err(invalid!("durations need a forced alignment, got {}", a.kind));
    }
    if a.is_empty() {
        return Err(invalid!("cannot take durations of an empty alignment"));
    }
    let mut phonemes: Vec<u32> = Vec::new();
    let mut durations: Vec<u32> = Vec::new();
    for &t in &a.tokens {
        match phonemes.last() {
            Some(&p) if p == t => *durations.last_mut().unwrap() += 1,
            _ => {
                phonemes.push(t);
                durations.push(1);
            }
        }
    }
    PhonemeDurations::new(phonemes, durations)
}

/// Nearest-frame resampling between frame rates.
///
/// Output length is `round(len * dst / src)`; destination frame `j` takes source
/// frame `round(j * src / dst)`, clamped to the last frame.
pub fn resample_alignment(a: &AlignmentSequence, src_rate: f64, dst_rate: f64) -> Result<AlignmentSequence> {
    if !(src_rate > 0.0 && dst_rate > 0.0) {
        return Err(invalid!("frame rates must be positive"));
    }
    if src_rate == dst_rate || a.is_empty() {
        return Ok(a.clone());
    }
    let out_len = (a.len() as f64 * dst_rate / src_rate).round() as usize;
    let last = a.len() - 1;
    let tokens = (0..out_len)
        .map(|j| {
            let src = (j as f64 * src_rate / dst_rate).round() as usize;
            a.tokens[src.min(last)]
        })
        .collect();
    Ok(AlignmentSequence {
        tokens,
        kind: a.kind,
        vocab_size: a.vocab_size,
    })
}
