mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "pkgrec",
    version,
    about = "Profile-enriched knowledge-graph recommender"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Each one overrides the matching
/// config-file key.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Dataset manifest (`dataset`).
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// Output directory (`work_dir`).
    #[arg(long, global = true)]
    pub work_dir: Option<String>,
    /// Root seed (`seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a dataset and print graph statistics.
    Ingest {
        /// Keep only users and items with at least this many interactions.
        #[arg(long)]
        k_core: Option<usize>,
    },
    /// Write a planted-genre synthetic dataset.
    Synth {
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 5)]
        genres: usize,
        #[arg(long, default_value_t = 20)]
        per_user: usize,
        #[arg(long, default_value_t = 0.9)]
        in_genre: f64,
    },
    /// Generate entity profiles from the training interactions.
    Profile {
        /// `template` or `llm` (`profile_mode`).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Embed stored profiles into the profile matrix.
    Embed,
    /// Train and write the log and the best checkpoint.
    Train,
    /// Evaluate the checkpoint on the test split.
    Eval,
    /// Train and evaluate ablation variants.
    Ablate {
        /// Run every fusion mode.
        #[arg(long)]
        fusion: bool,
        /// Profile variants to drop: user, item, entity, removal, matching, profile.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<String>,
        /// Explicit variant names, e.g. `full,no-profile,fusion:concatenate`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Retrain on downsampled training interactions.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid usage");
            eprintln!("{}", first.trim());
            return ExitCode::from(1);
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
