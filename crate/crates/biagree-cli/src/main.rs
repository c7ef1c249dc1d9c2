mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status 2 for usage and config problems, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<biagree::Error> for CliError {
    fn from(e: biagree::Error) -> Self {
        match e {
            biagree::Error::UnknownKey(_) | biagree::Error::ConfigValue { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "biagree", version, about = "Agreement-regularized bidirectional sequence-to-sequence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Config file in `key = value` format; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set reg.lambda=0.5`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Replace existing outputs without asking.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Maximum-likelihood pretraining.
    Mle,
    /// Joint training with the regularizer switched off.
    Cont,
    /// Joint training with the agreement regularizer.
    Rt,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Mle => "mle",
            Stage::Cont => "cont",
            Stage::Rt => "rt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    L2r,
    R2l,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SmoothingArg {
    None,
    AddOne,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset for the configured task.
    GenData(ConfigArgs),
    /// Pretrain both directions with maximum likelihood.
    TrainMle {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the pretrained models with the joint schedule and the regularizer off.
        #[arg(long = "continue")]
        continue_: bool,
    },
    /// Joint training with the agreement regularizer, starting from the pretrained models.
    TrainRt(ConfigArgs),
    /// Decode a split (or an arbitrary source file) with one model.
    Translate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "mle")]
        stage: Stage,
        #[arg(long, value_enum, default_value = "l2r")]
        direction: DirectionArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Translate this file instead of the split's sources.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rerank the left-to-right n-best list by the sum of both directions' log-probabilities.
    RerankJs {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "mle")]
        stage: Stage,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score a hypothesis file against a reference file.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// One smoothed sentence score per line instead of corpus BLEU.
        #[arg(long)]
        sentence: bool,
        #[arg(long, value_enum)]
        smoothing: Option<SmoothingArg>,
        #[arg(long)]
        lowercase: bool,
    },
    /// Corpus BLEU per source-length bucket for one or more systems.
    BucketReport {
        #[arg(long)]
        source: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// `name=path`; the first system is the baseline for the delta columns.
        #[arg(long = "system", value_name = "NAME=PATH", required = true)]
        systems: Vec<String>,
        /// Comma-separated bucket lower edges, starting at 0.
        #[arg(long, default_value = "0,6,9")]
        edges: String,
        /// Space-aligned table instead of tab-separated values.
        #[arg(long)]
        aligned: bool,
    },
    /// Compare sampled regularizer gradients with their enumerated values on a tiny model.
    OracleCheck(ConfigArgs),
    /// Iteration tables and length-bucket comparison for a finished run.
    Report(ConfigArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::TrainMle { cfg, continue_ } => commands::train_mle(&cfg, continue_),
        Command::TrainRt(c) => commands::train_rt(&c),
        Command::Translate {
            cfg,
            stage,
            direction,
            split,
            input,
            output,
        } => commands::translate(&cfg, stage, direction, split, input, output),
        Command::RerankJs { cfg, stage, split } => commands::rerank_js(&cfg, stage, split),
        Command::Bleu {
            hyp,
            reference,
            sentence,
            smoothing,
            lowercase,
        } => commands::bleu(&hyp, &reference, sentence, smoothing, lowercase),
        Command::BucketReport {
            source,
            reference,
            systems,
            edges,
            aligned,
        } => commands::bucket_report(&source, &reference, &systems, &edges, aligned),
        Command::OracleCheck(c) => commands::oracle_check(&c),
        Command::Report(c) => commands::report(&c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
