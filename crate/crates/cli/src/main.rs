use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accent_forge::classify::Mode;
use accent_forge::pipeline::{
    generate_audio_corpus, generate_synthetic_corpus, Pipeline, PipelineConfig, Stage, SyntheticSpec, ToneSilenceSpec,
};
use accent_forge::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

#[derive(Parser)]
#[command(name = "accent-forge", version, about = "GMM-UBM accent classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Vowel,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Vowel => Mode::Vowel,
        }
    }
}

#[derive(Args, Clone)]
struct StageArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Overrides `corpus.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Silence removal; also assigns the train/dev/test split.
    Vad(StageArgs),
    /// Normalized cepstral features per utterance.
    Features(StageArgs),
    /// PCA and HLDA fitted on training features.
    Transforms(StageArgs),
    Ubm(StageArgs),
    /// MAP-adapted model per accent.
    Adapt(StageArgs),
    /// Background and adapted models per vowel.
    VowelModels(StageArgs),
    /// Vowel weights from popularity and Hellinger discriminativeness.
    Weights(StageArgs),
    /// Confidence threshold chosen on the dev split.
    Calibrate(StageArgs),
    Classify(StageArgs),
    /// Accuracy and confusion matrix of the last classify run.
    Evaluate(StageArgs),
    /// Every stage in order.
    All(StageArgs),
    /// Per-accent durations before and after silence removal.
    Stats(StageArgs),
    /// Prints the effective configuration.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Writes a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML synthetic corpus description.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Tone/silence audio instead of feature archives.
        #[arg(long)]
        audio: bool,
    },
}

fn load_config(path: Option<&Path>) -> accent_forge::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn pipeline(a: &StageArgs) -> accent_forge::Result<Pipeline> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.scoring.mode = m.into();
    }
    if let Some(m) = &a.manifest {
        cfg.corpus.manifest = m.display().to_string();
    }
    Pipeline::new(cfg, &a.workspace)
}

fn stage(p: &Pipeline, s: Stage) -> accent_forge::Result<()> {
    p.run(s)?;
    if s == Stage::Evaluate {
        print!("{}", std::fs::read_to_string(p.workspace.report_table(p.mode())).unwrap_or_default());
    }
    Ok(())
}

fn run(cli: Cli) -> accent_forge::Result<()> {
    let single = |a: &StageArgs, s: Stage| stage(&pipeline(a)?, s);
    match &cli.command {
        Command::Vad(a) => single(a, Stage::Vad),
        Command::Features(a) => single(a, Stage::Features),
        Command::Transforms(a) => single(a, Stage::Transforms),
        Command::Ubm(a) => single(a, Stage::Ubm),
        Command::Adapt(a) => single(a, Stage::Adapt),
        Command::VowelModels(a) => single(a, Stage::VowelModels),
        Command::Weights(a) => single(a, Stage::Weights),
        Command::Calibrate(a) => single(a, Stage::Calibrate),
        Command::Classify(a) => single(a, Stage::Classify),
        Command::Evaluate(a) => single(a, Stage::Evaluate),
        Command::All(a) => {
            let p = pipeline(a)?;
            p.run_all()?;
            print!("{}", std::fs::read_to_string(p.workspace.report_table(p.mode())).unwrap_or_default());
            Ok(())
        }
        Command::Stats(a) => {
            print!("{}", pipeline(a)?.read_corpus_stats()?.to_table());
            Ok(())
        }
        Command::PrintConfig { config } => {
            print!("{}", load_config(config.as_deref())?.to_toml());
            Ok(())
        }
        Command::Synth { out, spec, seed, audio } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(v) = seed {
                s.seed = *v;
            }
            let m = if *audio {
                let tone = ToneSilenceSpec {
                    seed: s.seed,
                    ..ToneSilenceSpec::default()
                };
                generate_audio_corpus(&s.accent_labels(), s.utterances_per_accent, &tone, out)?
            } else {
                generate_synthetic_corpus(&s, out)?
            };
            println!("{} utterances, manifest {}", m.entries.len(), out.join("manifest.tsv").display());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingPrerequisite { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
