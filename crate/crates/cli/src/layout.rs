//! Content-hash-stamped stage directories under the run's output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{content_hash, RunConfig};
use crate::Invalid;

/// Characters of the hash used in directory names.
const SHORT: usize = 12;

#[derive(Debug, Clone)]
pub struct Stage {
    pub name: &'static str,
    pub hash: String,
    pub dir: PathBuf,
    upstream: Vec<String>,
    config: Value,
}

impl Stage {
    fn new(root: &Path, name: &'static str, config: Value, upstream: &[&Stage]) -> Self {
        let upstream: Vec<String> = upstream.iter().map(|s| s.hash.clone()).collect();
        let hash = content_hash(&json!({ "stage": name, "config": config, "upstream": upstream }));
        Self {
            name,
            dir: root.join(format!("{name}-{}", &hash[..SHORT])),
            hash,
            upstream,
            config,
        }
    }

    /// A stage with no upstream, for commands that run without a manifest.
    pub fn standalone(root: &Path, name: &'static str, config: Value) -> Self {
        Self::new(root, name, config, &[])
    }

    /// Same provenance, different directory.
    pub fn relocated(self, dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            ..self
        }
    }

    /// Present once the stage finished; written last.
    pub fn marker(&self) -> PathBuf {
        self.dir.join("stage.json")
    }

    pub fn is_complete(&self) -> bool {
        self.marker().is_file()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Empty the directory when forced, then make sure it exists.
    pub fn open(&self, force: bool) -> Result<()> {
        if force && self.dir.exists() {
            std::fs::remove_dir_all(&self.dir).with_context(|| format!("removing {}", self.dir.display()))?;
        }
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))
    }

    pub fn provenance(&self) -> Value {
        json!({
            "stage": self.name,
            "config_hash": self.hash,
            "upstream": self.upstream,
            "config": self.config,
        })
    }

    pub fn finish(&self, summary: &impl Serialize) -> Result<()> {
        let mut record = self.provenance();
        record["summary"] = serde_json::to_value(summary)?;
        write_json(&self.marker(), &record)
    }
}

/// Every stage directory a run can touch, derived from the config alone.
#[derive(Debug, Clone)]
pub struct Layout {
    pub prepare: Stage,
    pub cdsvae: Stage,
    pub dual: Stage,
    pub duration: Stage,
    pub fa2ua: Stage,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let root = &cfg.out_dir;
        let manifest = cfg.manifest()?;
        let manifest_bytes = std::fs::read(manifest)
            .map_err(|e| Invalid(format!("cannot read manifest {}: {e}", manifest.display())))?;
        let prepare = Stage::new(
            root,
            "prepare",
            json!({
                "seed": cfg.seed,
                "manifest": manifest,
                "manifest_sha256": content_hash(&manifest_bytes),
                "features": cfg.features,
                "alignment": cfg.alignment,
            }),
            &[],
        );
        let cdsvae = Stage::new(
            root,
            "cdsvae",
            json!({ "seed": cfg.seed, "arch": cfg.cdsvae_arch(), "train": cfg.cdsvae.train }),
            &[&prepare],
        );
        let dual = Stage::new(
            root,
            "cdsvae-dual",
            json!({ "seed": cfg.seed, "train": cfg.cdsvae.dual.train_config() }),
            &[&cdsvae],
        );
        let acoustic = if cfg.cdsvae.use_dual { &dual } else { &cdsvae };
        let duration = Stage::new(
            root,
            "duration",
            json!({ "seed": cfg.seed, "arch": cfg.duration_arch(), "train": cfg.frontend.duration }),
            &[&prepare, acoustic],
        );
        let fa2ua = Stage::new(
            root,
            "fa2ua",
            json!({ "seed": cfg.seed, "arch": cfg.fa2ua_arch(), "train": cfg.frontend.fa2ua }),
            &[&prepare],
        );
        Ok(Self {
            prepare,
            cdsvae,
            dual,
            duration,
            fa2ua,
        })
    }

    /// The acoustic model used downstream.
    pub fn acoustic<'a>(&'a self, cfg: &RunConfig) -> &'a Stage {
        if cfg.cdsvae.use_dual {
            &self.dual
        } else {
            &self.cdsvae
        }
    }

    /// A directory for a one-off command, stamped with the hash of its inputs.
    pub fn adhoc(&self, cfg: &RunConfig, name: &'static str, request: Value, upstream: &[&Stage]) -> Stage {
        Stage::new(&cfg.out_dir, name, request, upstream)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Derive independent per-purpose seeds from the run seed.
pub fn sub_seed(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
