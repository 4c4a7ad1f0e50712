//! Command line front end for the attribution pipeline.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use veritext_core::attribution::Method;
use veritext_core::Error as CoreError;

use commands::InstanceSelector;
use config::{ModelKind, RunConfig};

/// Failure carrying its process exit code: 2 for user mistakes
/// (arguments, config files, missing artifacts), 1 for everything else.
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> CliError {
        CliError {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn internal(msg: impl Into<String>) -> CliError {
        CliError {
            code: 1,
            msg: msg.into(),
        }
    }

    pub fn from_core(err: CoreError) -> CliError {
        let user = matches!(
            err,
            CoreError::Io { .. }
                | CoreError::Csv(_)
                | CoreError::MissingColumn(_)
                | CoreError::InvalidRows(_)
                | CoreError::EmptyDataset
                | CoreError::BadSplitRatios(_)
                | CoreError::BadVocabulary(_)
                | CoreError::BadModelConfig(_)
                | CoreError::BadCheckpoint { .. }
                | CoreError::ArchitectureMismatch { .. }
                | CoreError::BadEvalConfig(_)
                | CoreError::TooManyActivePositions { .. }
                | CoreError::Diverged { .. }
        );
        if user {
            CliError::user(err.to_string())
        } else {
            CliError::internal(err.to_string())
        }
    }
}

#[derive(Parser)]
#[command(
    name = "veritext",
    version,
    about = "Train small text classifiers, attribute their predictions and score the explanations"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed, overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Model architecture (cnn or lstm), overriding the configured one.
    #[arg(long, global = true)]
    model: Option<ModelKind>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and the train/validation/test split.
    Prepare,
    /// Train a classifier, preparing the dataset first when needed.
    Train,
    /// Write attribution records and heatmaps for test instances.
    Explain {
        /// Comma-separated subset of ig,shap,lime (default: configured list).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// A count ("30") or comma-separated instance ids ("3,17,42").
        #[arg(long)]
        instances: Option<InstanceSelector>,
    },
    /// Score explanations with deletion and sufficiency metrics.
    Eval {
        /// Comma-separated subset of ig,shap,lime (default: configured list).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// A count ("30") or comma-separated instance ids ("3,17,42").
        #[arg(long)]
        instances: Option<InstanceSelector>,
    },
}

fn resolve_methods(cfg: &RunConfig, flag: Vec<Method>) -> Result<Vec<Method>, CliError> {
    let methods = if flag.is_empty() {
        cfg.methods.clone()
    } else {
        flag
    };
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(CliError::user(format!("method '{m}' listed twice")));
        }
    }
    Ok(methods)
}

fn resolve_selector(
    flag: Option<InstanceSelector>,
    default_count: usize,
) -> Result<InstanceSelector, CliError> {
    let selector = flag.unwrap_or(InstanceSelector::Count(default_count));
    match &selector {
        InstanceSelector::Count(0) => Err(CliError::user("--instances must select at least 1")),
        InstanceSelector::Ids(ids) if ids.is_empty() => {
            Err(CliError::user("--instances must select at least 1"))
        }
        _ => Ok(selector),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(model) = cli.model {
        cfg.model = model;
    }
    match cli.command {
        Command::Prepare => commands::cmd_prepare(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Explain { methods, instances } => {
            let selector = resolve_selector(instances, cfg.explain_instances)?;
            let methods = resolve_methods(&cfg, methods)?;
            commands::cmd_explain(&cfg, &methods, &selector)
        }
        Command::Eval { methods, instances } => {
            let selector = resolve_selector(instances, cfg.eval_instances)?;
            let methods = resolve_methods(&cfg, methods)?;
            commands::cmd_eval(&cfg, &methods, &selector)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.msg);
        std::process::exit(e.code);
    }
}
