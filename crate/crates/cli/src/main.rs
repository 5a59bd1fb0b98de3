mod batchio;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// ECG pipeline tools: inspect records, preprocess, augment, synthesize and run models, score outputs.
#[derive(Parser, Debug)]
#[command(name = "ecgkit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: Global,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every stochastic step; required by commands that draw random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output format of reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Suppress progress and timing messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Summarize a WFDB record: sampling rate, leads, length and annotation counts.
    Inspect {
        /// Record as DIR/NAME (the header is DIR/NAME.hea).
        #[arg(long)]
        record: PathBuf,
        /// Annotation file extension; `atr` is used when present and this is omitted.
        #[arg(long)]
        ann: Option<String>,
    },
    /// Apply a preprocessing config to a record.
    Preprocess {
        #[arg(long)]
        record: PathBuf,
        /// Preprocessing config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output: a `.ecgw` batch container, or DIR/NAME for a format-16 WFDB record.
        #[arg(long)]
        out: PathBuf,
        /// ADC gain of the written WFDB record; defaults to the input's first lead.
        #[arg(long)]
        gain: Option<f64>,
    },
    /// Apply an augmentation config to a batch container.
    Augment {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand an architecture config and report shapes, parameters and receptive field.
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        /// Input length in samples; overrides the config's `input_len`.
        #[arg(long)]
        input_len: Option<usize>,
        /// Write freshly initialized weights here (needs --seed).
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Run a model on a record or batch and write its outputs as JSON.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        /// Weights container.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, conflicts_with = "batch", required_unless_present = "batch")]
        record: Option<PathBuf>,
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Comma-separated class names, one per model output channel.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        /// Decision threshold for classification outputs.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Class-pair weight matrix (CSV) for the challenge score.
        #[arg(long)]
        weights_csv: Option<PathBuf>,
        /// Class treated as the normal rhythm by the challenge score.
        #[arg(long, default_value = "426783006")]
        normal_class: String,
        /// Matching tolerance in seconds (qrs default 0.075; required for delin).
        #[arg(long)]
        tol_s: Option<f64>,
        /// Edge margin in seconds excluded from qrs scoring.
        #[arg(long, default_value_t = 0.5)]
        edge_s: f64,
        /// Sampling frequency, when the files do not carry one.
        #[arg(long)]
        fs: Option<f64>,
        /// Record length in samples for qrs scoring, when the truth file does not carry it.
        #[arg(long)]
        record_len: Option<usize>,
    },
    /// Run the bundled acceptance checks on synthetic data.
    Selftest {
        /// Run only these checks (1-10).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
    },
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct ModelArgs {
    /// Architecture config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shipped preset name, e.g. tiny-crnn.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Cls,
    Qrs,
    Delin,
    Challenge,
}

/// Error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_FAILED_CHECKS: u8 = 1;
pub const EXIT_USER: u8 = 2;
pub const EXIT_DATA: u8 = 3;

pub type CmdResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    /// Bad flags, missing files, invalid configs.
    fn user(self) -> CmdResult<T>;
    /// Malformed data, shape or weight mismatches.
    fn data(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn user(self) -> CmdResult<T> {
        self.map_err(|e| Failure { code: EXIT_USER, error: e.into() })
    }

    fn data(self) -> CmdResult<T> {
        self.map_err(|e| Failure { code: EXIT_DATA, error: e.into() })
    }
}

pub fn user_err<T>(msg: impl std::fmt::Display) -> CmdResult<T> {
    Err(Failure { code: EXIT_USER, error: anyhow::anyhow!("{msg}") })
}

pub fn data_err<T>(msg: impl std::fmt::Display) -> CmdResult<T> {
    Err(Failure { code: EXIT_DATA, error: anyhow::anyhow!("{msg}") })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
