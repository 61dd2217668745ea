//! `utts`: data preparation, training, synthesis, conversion and evaluation.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or stage failure.

mod config;
mod infer;
mod layout;
mod prepare;
mod train;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use utts::corpus::{ToyCorpus, ToyCorpusConfig};
use utts::pipeline::{griffin_lim, protocol};

use config::{Overrides, RunConfig};
use infer::{EvaluateArgs, SynthesizeArgs, VocoderChoice};
use layout::Layout;
use train::TrainStage;

/// Bad input or configuration; maps to exit code 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "utts", version, about = "Unsupervised text-to-speech toolkit")]
struct Cli {
    /// TOML run configuration; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute stages whose outputs already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides `paths.manifest` from the config.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute mels, fit the unit codebook, write unit alignments and duration targets.
    Prepare,
    /// Train one model stage.
    Train {
        #[arg(value_enum)]
        stage: TrainStage,
    },
    /// Text to speech in the voice of a reference recording.
    Synthesize {
        #[arg(long)]
        text: String,
        #[arg(long)]
        ref_audio: PathBuf,
        /// Speaker whose pooled embedding drives the duration predictor; random when unset.
        #[arg(long)]
        speaker: Option<String>,
        #[arg(long, value_enum)]
        vocoder: Option<VocoderChoice>,
        /// Write the bundle here instead of a hash-stamped directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Speak the content of `--source` in the voice of `--target`.
    Convert {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_enum)]
        vocoder: Option<VocoderChoice>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Verification EERs, phoneme probes, projections and CER/WER.
    Evaluate {
        /// `utt_a utt_b 0|1` trial list; generated from held-out utterances when unset.
        #[arg(long)]
        trials: Option<PathBuf>,
        /// JSON map from utterance id to embedding, scored instead of the model's.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// `id<TAB>hypothesis` transcripts scored against the manifest.
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic multi-speaker corpus with forced alignments and a lexicon.
    ToyCorpus {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = ToyCorpusConfig::default().speakers)]
        speakers: usize,
        #[arg(long, default_value_t = ToyCorpusConfig::default().utterances_per_speaker)]
        utterances: usize,
        #[arg(long, default_value_t = ToyCorpusConfig::default().seed)]
        corpus_seed: u64,
    },
    /// Serve one vocoder request: a mel container on stdin, a WAV on stdout.
    VocoderServe {
        #[arg(long, required = true)]
        stdio: bool,
        #[arg(long, default_value_t = 60)]
        iterations: usize,
    },
    /// Print the resolved configuration in canonical form.
    PrintConfig,
}

fn run(cli: Cli) -> Result<()> {
    let flags = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        manifest: cli.manifest.clone(),
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &flags)?;
    let layout = || Layout::new(&cfg);
    match &cli.command {
        Command::Prepare => {
            let layout = layout()?;
            prepare::run(&cfg, &layout.prepare, cli.force).context("[prepare]")
        }
        Command::Train { stage } => {
            let layout = layout()?;
            train::run(&cfg, &layout, *stage, cli.force).with_context(|| format!("[train {stage:?}]"))
        }
        Command::Synthesize {
            text,
            ref_audio,
            speaker,
            vocoder,
            output,
        } => {
            let layout = layout()?;
            let args = SynthesizeArgs {
                text,
                ref_audio,
                speaker: speaker.as_deref(),
                vocoder: *vocoder,
                output: output.as_deref(),
            };
            infer::synthesize_cmd(&cfg, &layout, &args).context("[synthesize]").map(drop)
        }
        Command::Convert {
            source,
            target,
            vocoder,
            output,
        } => {
            let layout = layout()?;
            infer::convert_cmd(&cfg, &layout, source, target, *vocoder, output.as_deref())
                .context("[convert]")
                .map(drop)
        }
        Command::Evaluate {
            trials,
            embeddings,
            hypotheses,
            output,
        } => {
            let layout = match cfg.paths.manifest {
                Some(_) => Some(layout()?),
                None => None,
            };
            let args = EvaluateArgs {
                trials: trials.as_deref(),
                embeddings: embeddings.as_deref(),
                hypotheses: hypotheses.as_deref(),
                output: output.as_deref(),
            };
            infer::evaluate_cmd(&cfg, layout.as_ref(), &args).context("[evaluate]").map(drop)
        }
        Command::ToyCorpus {
            dir,
            speakers,
            utterances,
            corpus_seed,
        } => {
            let corpus = ToyCorpus::generate(ToyCorpusConfig {
                speakers: *speakers,
                utterances_per_speaker: *utterances,
                seed: *corpus_seed,
                ..ToyCorpusConfig::default()
            })?;
            let manifest = corpus.write(dir)?;
            println!("toy-corpus: {} utterances -> {}", manifest.len(), dir.join("manifest.jsonl").display());
            Ok(())
        }
        Command::VocoderServe { iterations, .. } => {
            let iterations = *iterations;
            let (mut stdin, mut stdout) = (std::io::stdin().lock(), std::io::stdout().lock());
            protocol::serve_once(&mut stdin, &mut stdout, |mel| griffin_lim(mel, iterations))
                .context("[vocoder-serve]")
        }
        Command::PrintConfig => {
            std::io::stdout().write_all(cfg.to_toml().as_bytes())?;
            Ok(())
        }
    }
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<Invalid>().is_some() || c.downcast_ref::<utts::Error>().is_some_and(utts::Error::is_validation)
    })
}

/// The error chain joined by `: `, dropping links already quoted by the previous message.
fn describe(e: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.last().is_some_and(|prev| prev.ends_with(&msg)) {
            continue;
        }
        out.push(msg);
    }
    out.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
