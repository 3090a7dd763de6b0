mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] ugformer::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Data(ugformer::Error::InvalidConfig(_)) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ugformer", version, about = "Atrium and scar segmentation on synthetic phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML file with [model], [train], [pipeline] and [data] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    La,
    Scar,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Total number of phantoms.
        #[arg(long, default_value_t = 60)]
        count: usize,
        /// Styles cycled through the training split.
        #[arg(long, value_delimiter = ',', default_value = "high_contrast,low_contrast,high_res,low_res")]
        styles: Vec<String>,
        /// Styles for validation and test splits (defaults to --styles).
        #[arg(long, value_delimiter = ',')]
        val_styles: Option<Vec<String>>,
        /// Validation phantoms (defaults to a tenth of --count).
        #[arg(long)]
        val_count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        test_count: usize,
    },
    /// Train a network on a manifest's train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Where to write the checkpoint (defaults to <out>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Start from the matching parameters of this checkpoint.
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TargetArg::La)]
        target: TargetArg,
    },
    /// Write predicted masks (and optional overlays) for a split.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        /// Also write grayscale overlays.
        #[arg(long)]
        overlay: bool,
    },
    /// Atrium, region of interest, then scar.
    TwoStage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Atrium model.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scar model.
        #[arg(long)]
        spm: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
    },
    /// Dice per split and per style.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Atrium model.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scar model; adds two-stage scar rows.
        #[arg(long)]
        spm: Option<PathBuf>,
    },
    /// Train and compare the ETB toggle grid and the bridge grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of every block's backward pass.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Restrict to these blocks.
        #[arg(long, value_delimiter = ',')]
        blocks: Option<Vec<String>>,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { common, count, styles, val_styles, val_count, test_count } => {
            commands::synth(&common, count, &styles, val_styles.as_deref(), val_count, test_count)
        }
        Command::Train { common, data, checkpoint, init_from, target } => {
            commands::train(&common, &data, checkpoint.as_deref(), init_from.as_deref(), target)
        }
        Command::Predict { common, data, checkpoint, split, overlay } => {
            commands::predict(&common, &data, &checkpoint, split, overlay)
        }
        Command::TwoStage { common, data, checkpoint, spm, split } => {
            commands::two_stage(&common, &data, &checkpoint, &spm, split)
        }
        Command::Eval { common, data, checkpoint, spm } => commands::eval(&common, &data, &checkpoint, spm.as_deref()),
        Command::Ablate { common, data } => commands::ablate(&common, &data),
        Command::Gradcheck { common, blocks } => commands::gradcheck(&common, blocks.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
