//! Command-line entry point: one subcommand per pipeline stage, all driven
//! by an experiment config file and writing under its run directory.
//!
//! Each successful command prints one JSON line naming its artifacts. Errors
//! print one JSON object on stderr; usage errors exit with 2, config errors
//! with 3 and everything else with 1.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub use commands::{
    run_codec_impact, run_compile_data, run_eval, run_infer, run_report, run_simulate, run_train, run_train_codec,
    EvalArgs, InferArgs, Summary, TextMode, TrainArgs, TrainStage,
};
pub use config::{parse_tasks, DataConfig, EvalConfig, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Synth(#[from] crate::synthworld::SynthError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
    #[error(transparent)]
    Trainer(#[from] crate::trainer::TrainerError),
    #[error(transparent)]
    Generate(#[from] crate::generate::GenerateError),
    #[error(transparent)]
    Eval(#[from] crate::evalkit::EvalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config { .. } => 3,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Synth(_) => "synth",
            CliError::Codec(_) => "codec",
            CliError::Prompt(_) => "prompt",
            CliError::Trainer(_) => "trainer",
            CliError::Generate(_) => "generate",
            CliError::Eval(_) => "eval",
            CliError::Csv(_) | CliError::Json(_) | CliError::Io(_) => "io",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            error: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
            message: String,
        }
        let field = match self {
            CliError::Config { field, .. } => Some(field.as_str()),
            _ => None,
        };
        serde_json::to_string(&Out {
            error: self.kind(),
            field,
            message: self.to_string(),
        })
        .expect("error serializes")
    }
}

#[derive(Debug, Parser)]
#[command(name = "codec-lm", version, about = "Multi-task codec language model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Tts,
    Multitask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextArg {
    On,
    Off,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic corpus.
    Simulate(Common),
    /// Train the residual-quantized codec on the training split.
    TrainCodec(Common),
    /// Encode per-task training sets and the held-out evaluation set.
    CompileData(Common),
    /// Train the AR and NAR models for one stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Stage-1 checkpoint to continue from.
        #[arg(long, conflicts_with = "resume")]
        init: Option<PathBuf>,
        /// Checkpoint of an interrupted run of the same stage.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory name under `train/`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Batch inference over the evaluation set or a request file.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        text: TextArg,
        /// Comma-separated task names, or `all`.
        #[arg(long, default_value = "all")]
        tasks: String,
        /// JSONL request file; defaults to the evaluation set.
        #[arg(long)]
        requests: Option<PathBuf>,
        /// Output directory name under `infer/`.
        #[arg(long, default_value = "default")]
        label: String,
    },
    /// Infer and score the evaluation set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "all")]
        tasks: String,
        #[arg(long, value_enum, default_value = "on")]
        text: TextArg,
        /// Report name under `reports/`.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Compare raw and codec round-trip audio.
    CodecImpact(Common),
    /// Render plots and text tables from existing logs and reports.
    Report(Common),
}

fn text_modes(arg: TextArg) -> Vec<TextMode> {
    match arg {
        TextArg::On => vec![TextMode::On],
        TextArg::Off => vec![TextMode::Off],
        TextArg::Both => vec![TextMode::On, TextMode::Off],
    }
}

fn run(command: Command) -> Result<Summary, CliError> {
    let load = |c: &Common| ExperimentConfig::load(&c.config, c.seed);
    match command {
        Command::Simulate(c) => run_simulate(&load(&c)?),
        Command::TrainCodec(c) => run_train_codec(&load(&c)?),
        Command::CompileData(c) => run_compile_data(&load(&c)?),
        Command::Train {
            common,
            stage,
            init,
            resume,
            name,
        } => {
            let stage = match stage {
                StageArg::Tts => TrainStage::Tts,
                StageArg::Multitask => TrainStage::Multitask,
            };
            run_train(&load(&common)?, &TrainArgs { stage, init, resume, name })
        }
        Command::Infer {
            common,
            checkpoint,
            text,
            tasks,
            requests,
            label,
        } => {
            let text = match text {
                TextArg::On => TextMode::On,
                TextArg::Off => TextMode::Off,
                TextArg::Both => return Err(CliError::Usage("infer takes --text on or --text off".into())),
            };
            run_infer(
                &load(&common)?,
                &InferArgs {
                    checkpoint,
                    text,
                    tasks: parse_tasks(&tasks)?,
                    requests,
                    label,
                },
            )
        }
        Command::Eval {
            common,
            checkpoint,
            tasks,
            text,
            name,
        } => run_eval(
            &load(&common)?,
            &EvalArgs {
                checkpoint,
                tasks: parse_tasks(&tasks)?,
                text: text_modes(text),
                name,
            },
        ),
        Command::CodecImpact(c) => run_codec_impact(&load(&c)?),
        Command::Report(c) => run_report(&load(&c)?),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.kind().to_string());
            eprint!("{e}");
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            0
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}
