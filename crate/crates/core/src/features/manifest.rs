use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One utterance. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fa_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssl_feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

/// Line-delimited JSON list of utterances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks id uniqueness only; path existence is checked by [`DatasetManifest::load`].
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(invalid!("duplicate utterance id `{}`", e.utterance_id));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(line).map_err(|err| {
                Error::format("manifest", format!("{}:{}: {err}", path.display(), lineno + 1))
            })?;
            e.audio_path = resolve(base, &e.audio_path);
            e.fa_path = e.fa_path.map(|p| resolve(base, &p));
            e.ssl_feature_path = e.ssl_feature_path.map(|p| resolve(base, &p));
            for p in std::iter::once(&e.audio_path)
                .chain(e.fa_path.iter())
                .chain(e.ssl_feature_path.iter())
            {
                if !p.exists() {
                    return Err(invalid!(
                        "utterance `{}` references missing file {}",
                        e.utterance_id,
                        p.display()
                    ));
                }
            }
            entries.push(e);
        }
        Self::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("manifest entries always serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.speaker_id.clone()))
            .map(|e| e.speaker_id.clone())
            .collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
