//! `cgmmn` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure (factorization, non-finite loss), 4 I/O or malformed input file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<cgmmn::Error> for CliError {
    fn from(e: cgmmn::Error) -> Self {
        use cgmmn::Error as E;
        match &e {
            E::Io(_) | E::Parse(_) | E::Json(_) => CliError::Io(e.to_string()),
            _ if e.is_numeric() => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Kernel flag: `rbf:<σ²>`, `rbf` (median heuristic), `linear`, `delta` or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelArg {
    Auto,
    RbfMedian,
    Spec(cgmmn::KernelSpec),
}

impl FromStr for KernelArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(KernelArg::Auto),
            "rbf" => Ok(KernelArg::RbfMedian),
            "linear" => Ok(KernelArg::Spec(cgmmn::KernelSpec::Linear)),
            "delta" => Ok(KernelArg::Spec(cgmmn::KernelSpec::Delta)),
            _ => {
                let bw = s
                    .strip_prefix("rbf:")
                    .ok_or_else(|| format!("unknown kernel {s:?}"))?
                    .parse::<f64>()
                    .map_err(|e| format!("bad rbf bandwidth: {e}"))?;
                cgmmn::KernelSpec::rbf(bw)
                    .map(KernelArg::Spec)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cgmmn",
    version,
    about = "Conditional generative moment-matching networks"
)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for relative output paths.
    #[arg(long, global = true, env = "CGMMN_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DataKind {
    ConditionalGaussian,
    Cubic,
    CubicToy,
    Mixture,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset to CSV.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        slope: f64,
        #[arg(long, default_value_t = 0.5)]
        noise_sd: f64,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Biased MMD² between two sample sets, optionally with a permutation test.
    Mmd {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Columns to read (default: all).
        #[arg(long, value_delimiter = ',')]
        cols: Vec<String>,
        #[arg(long, default_value = "auto")]
        kernel: KernelArg,
        /// Permutation resamples (0 disables the test).
        #[arg(long, default_value_t = 0)]
        resamples: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// CMMD² between two paired CSV datasets.
    Cmmd {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        cols: PairColumns,
        #[arg(long, default_value = "auto")]
        kx: KernelArg,
        #[arg(long, default_value = "auto")]
        ky: KernelArg,
        /// Ridge (default: scaled mean Gram diagonal of the data inputs).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a generator from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw samples from a trained generator.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cond: Conditioning,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Error rate of argmax predictions on labelled data.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: LabelledData,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Outputs along one hidden coordinate with the others held at 0.
    Traverse {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cond: Conditioning,
        #[arg(long, default_value_t = 0)]
        dim: usize,
        #[arg(long, default_value_t = 11)]
        steps: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit a Bayesian teacher, distil it into a generator, compare RMSE.
    Distill(DistillArgs),
    /// Finite-difference checks of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct PairColumns {
    #[arg(long, value_delimiter = ',', default_value = "x")]
    pub x_cols: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "y")]
    pub y_cols: Vec<String>,
    #[arg(long, value_enum, default_value = "none")]
    pub label_mode: LabelModeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelModeArg {
    None,
    X,
    Y,
}

impl From<LabelModeArg> for cgmmn::datasets::LabelMode {
    fn from(m: LabelModeArg) -> Self {
        match m {
            LabelModeArg::None => Self::None,
            LabelModeArg::X => Self::X,
            LabelModeArg::Y => Self::Y,
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Conditioning {
    /// Inline inputs: comma-separated coordinates, rows separated by ';'.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    /// CSV of inputs (every column is read).
    #[arg(long)]
    pub x_file: Option<PathBuf>,
    /// Class labels for a label-conditioned model, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub class: Option<Vec<u32>>,
    /// Every class of a label-conditioned model.
    #[arg(long)]
    pub all_classes: bool,
}

#[derive(Debug, Args)]
pub struct LabelledData {
    /// CSV with input columns and one integer label column.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    pub csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Vec<String>,
    #[arg(long, default_value = "label")]
    pub label_col: String,
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub max_n: usize,
    #[arg(long)]
    pub downscale: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// CSV training data (default: the 20-point cubic toy).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "x")]
    pub x_cols: Vec<String>,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Fraction of CSV rows held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Test points drawn from the toy recipe when no CSV is given.
    #[arg(long, default_value_t = 500)]
    pub test_n: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, default_value_t = 100.0)]
    pub prior_var: f64,
    #[arg(long, default_value_t = 9.0)]
    pub noise_var: f64,
    #[arg(long, default_value_t = 150)]
    pub per_x: usize,
    /// Input perturbation as a fraction of the per-dimension input std.
    #[arg(long, default_value_t = cgmmn::distill::DEFAULT_PERTURB_FRACTION)]
    pub perturb_fraction: f64,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub h_dim: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value = "auto")]
    pub kx: KernelArg,
    #[arg(long, default_value = "auto")]
    pub ky: KernelArg,
    #[arg(long, default_value_t = 41)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 200)]
    pub samples_per_x: usize,
    #[arg(long, default_value = "distill_report.json")]
    pub report: PathBuf,
    #[arg(long, default_value = "distill_grid.csv")]
    pub grid_output: PathBuf,
    #[arg(long, default_value = "teacher.csv")]
    pub teacher_output: PathBuf,
    #[arg(long, default_value = "student.json")]
    pub student_output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
