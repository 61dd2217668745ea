//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use utts::alignment::KMeansConfig;
use utts::cdsvae::{ArchConfig, ConditionSpec, LossConfig, MaskConfig, ReconMode, TrainConfig};
use utts::nn::StepDecay;
use utts::eval::{ProbeConfig, ProjectionMethod};
use utts::features::N_MELS;
use utts::frontend::{DurationArch, DurationTrainConfig, Fa2UaArch, Fa2UaTrainConfig};
use utts::pipeline::{SpeakerLatent, VocoderConfig, VocoderHandle};

use crate::Invalid;

/// Layer-width preset shared by the three trainable models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    Full,
    #[default]
    Desk,
    Tiny,
}

/// Frame features clustered into units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Self-supervised features when every utterance lists one, otherwise the cepstral proxy.
    #[default]
    Auto,
    Ssl,
    Cepstral,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Defaults to `lexicon.txt` next to the manifest.
    pub lexicon: Option<PathBuf>,
    /// Defaults to `phones.txt` next to the manifest.
    pub phones: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub source: FeatureSource,
    /// The last this-many utterances of each speaker (manifest order) are held out.
    pub held_out_per_speaker: usize,
    /// Largest FA/mel length mismatch absorbed by adjusting the final phoneme.
    pub fa_tolerance_frames: usize,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            source: FeatureSource::Auto,
            held_out_per_speaker: 2,
            fa_tolerance_frames: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSection {
    pub kmeans: KMeansConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdsvaeSection {
    pub arch: ArchPreset,
    pub train: TrainConfig,
    /// Second round with both content encoders feeding the decoder.
    pub dual: DualSection,
    /// Synthesis, duration training and evaluation use the second-round model.
    pub use_dual: bool,
}

impl Default for CdsvaeSection {
    fn default() -> Self {
        Self {
            arch: ArchPreset::Desk,
            train: TrainConfig::default(),
            dual: DualSection::default(),
            use_dual: true,
        }
    }
}

/// Second-round schedule; reconstruction always uses both content paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSection {
    pub epochs: u32,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub loss: LossConfig,
    pub mask: MaskConfig,
    pub schedule: StepDecay,
}

impl Default for DualSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: 10,
            batch_size: t.batch_size,
            segment_frames: t.segment_frames,
            loss: t.loss,
            mask: t.mask,
            schedule: t.schedule,
        }
    }
}

impl DualSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            segment_frames: self.segment_frames,
            loss: self.loss,
            mask: self.mask,
            schedule: self.schedule,
            recon: ReconMode::Dual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendSection {
    pub duration_arch: ArchPreset,
    pub duration: DurationTrainConfig,
    pub fa2ua_arch: ArchPreset,
    pub fa2ua: Fa2UaTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub trials_per_class: usize,
    pub probe: ProbeConfig,
    pub projection: ProjectionMethod,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            trials_per_class: 200,
            probe: ProbeConfig::default(),
            projection: ProjectionMethod::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub speaker_latent: SpeakerLatent,
    pub vocoder: VocoderConfig,
    /// Used by `--vocoder external` when the active vocoder is internal.
    pub external_vocoder: Option<VocoderConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub features: FeaturesSection,
    pub alignment: AlignmentSection,
    pub cdsvae: CdsvaeSection,
    pub frontend: FrontendSection,
    pub eval: EvalSection,
    pub synthesis: SynthesisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            paths: Paths::default(),
            features: FeaturesSection::default(),
            alignment: AlignmentSection::default(),
            cdsvae: CdsvaeSection::default(),
            frontend: FrontendSection::default(),
            eval: EvalSection::default(),
            synthesis: SynthesisSection::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Invalid> {
        toml::from_str(text).map_err(|e| Invalid(format!("config: {e}")))
    }

    /// Canonical TOML: every field, in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Defaults, then `file` (relative paths resolved against its directory), then `flags`.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, Invalid> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
                let mut cfg = Self::parse(&text)?;
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.rebase(base);
                cfg
            }
            None => Self::default(),
        };
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(d) = &flags.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(m) = &flags.manifest {
            cfg.paths.manifest = Some(m.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.paths.manifest, &mut self.paths.lexicon, &mut self.paths.phones]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Every check that can run before touching data.
    pub fn validate(&self) -> Result<(), Invalid> {
        let v = |r: utts::Result<()>, what: &str| r.map_err(|e| Invalid(format!("{what}: {e}")));
        v(self.cdsvae.train.validate(), "cdsvae.train")?;
        v(self.cdsvae.dual.train_config().validate(), "cdsvae.dual")?;
        let km = &self.alignment.kmeans;
        if km.k < 2 || km.max_iters == 0 || !(km.tolerance >= 0.0) {
            return Err(Invalid("alignment.kmeans needs k >= 2, max_iters >= 1, tolerance >= 0".into()));
        }
        if u32::try_from(km.k).is_err() {
            return Err(Invalid("alignment.kmeans.k is too large".into()));
        }
        for (name, b) in [
            ("frontend.duration.batch_size", self.frontend.duration.batch_size),
            ("frontend.fa2ua.batch_size", self.frontend.fa2ua.batch_size),
            ("frontend.fa2ua.segment_frames", self.frontend.fa2ua.segment_frames),
        ] {
            if b == 0 {
                return Err(Invalid(format!("{name} must be positive")));
            }
        }
        let m = self.frontend.fa2ua.mask;
        if !(0.0..=1.0).contains(&m.start_prob) || m.span == 0 {
            return Err(Invalid("frontend.fa2ua.mask needs start_prob in [0, 1] and span >= 1".into()));
        }
        let p = &self.eval.probe;
        if !(p.train_fraction > 0.0 && p.train_fraction < 1.0) || p.epochs == 0 {
            return Err(Invalid("eval.probe needs 0 < train_fraction < 1 and epochs >= 1".into()));
        }
        if self.eval.trials_per_class == 0 {
            return Err(Invalid("eval.trials_per_class must be positive".into()));
        }
        self.cdsvae_arch().validate().map_err(|e| Invalid(format!("cdsvae.arch: {e}")))?;
        VocoderHandle::new(self.synthesis.vocoder.clone()).map_err(|e| Invalid(format!("synthesis.vocoder: {e}")))?;
        if let Some(ext) = &self.synthesis.external_vocoder {
            if !matches!(ext, VocoderConfig::External { .. }) {
                return Err(Invalid("synthesis.external_vocoder must have kind = \"external\"".into()));
            }
            VocoderHandle::new(ext.clone()).map_err(|e| Invalid(format!("synthesis.external_vocoder: {e}")))?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<&Path, Invalid> {
        self.paths
            .manifest
            .as_deref()
            .ok_or_else(|| Invalid("no manifest: set paths.manifest or pass --manifest".into()))
    }

    pub fn lexicon_paths(&self) -> Result<(PathBuf, PathBuf), Invalid> {
        let dir = || -> Result<PathBuf, Invalid> {
            Ok(self.manifest()?.parent().unwrap_or(Path::new(".")).to_path_buf())
        };
        let lex = match &self.paths.lexicon {
            Some(p) => p.clone(),
            None => dir()?.join("lexicon.txt"),
        };
        let phones = match &self.paths.phones {
            Some(p) => p.clone(),
            None => dir()?.join("phones.txt"),
        };
        Ok((lex, phones))
    }

    pub fn num_units(&self) -> u32 {
        self.alignment.kmeans.k as u32
    }

    pub fn cdsvae_arch(&self) -> ArchConfig {
        let cond = ConditionSpec::ua(self.num_units());
        match self.cdsvae.arch {
            ArchPreset::Full => ArchConfig::full(cond),
            ArchPreset::Desk => ArchConfig::desk(cond),
            ArchPreset::Tiny => ArchConfig::tiny(cond, N_MELS),
        }
    }

    pub fn duration_arch(&self) -> DurationArch {
        let speaker_dim = self.cdsvae_arch().latent_dim;
        let base = match self.frontend.duration_arch {
            ArchPreset::Full => DurationArch::full(),
            ArchPreset::Desk => DurationArch::desk(),
            ArchPreset::Tiny => DurationArch::tiny(speaker_dim),
        };
        DurationArch { speaker_dim, ..base }
    }

    pub fn fa2ua_arch(&self) -> Fa2UaArch {
        let k = self.num_units();
        match self.frontend.fa2ua_arch {
            ArchPreset::Full => Fa2UaArch::full(k),
            ArchPreset::Desk => Fa2UaArch::desk(k),
            ArchPreset::Tiny => Fa2UaArch::tiny(k),
        }
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn content_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("hash input serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let text = "seed = 4\n[cdsvae.train.loss]\ngamma = 0.0\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.cdsvae.train.loss.gamma, 0.0);
        assert_eq!(cfg.cdsvae.train.loss.beta, 10.0);
        let canon = cfg.to_toml();
        let again = RunConfig::parse(&canon).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), canon);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 1\n").is_err());
        assert!(RunConfig::parse("[cdsvae.train.loss]\ndelta = 1.0\n").is_err());
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let mut bad = RunConfig::default();
        bad.cdsvae.train.loss.beta = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = RunConfig::default();
        bad.cdsvae.dual.batch_size = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nout_dir = \"out\"\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((cfg.seed, cfg.out_dir.clone()), (3, dir.path().join("out")));
        let flags = Overrides {
            seed: Some(9),
            out_dir: Some("elsewhere".into()),
            manifest: None,
        };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.out_dir), (9, PathBuf::from("elsewhere")));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(content_hash(&a), content_hash(&b));
        b.cdsvae.train.loss.alpha = 0.02;
        assert_ne!(content_hash(&a), content_hash(&b));
        assert_eq!(content_hash(&a).len(), 64);
    }
}
