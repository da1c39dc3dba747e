//! `goi-kit`: one binary exposing the library's experiments and detectors
//! with reproducible seeds and machine-readable outputs.
//!
//! Grid experiments emit CSV records with the fixed column set
//! `experiment,n,d,trial,statistic,value,seed` plus a JSON summary with
//! fitted slopes; detectors and the solver emit JSON. Exit codes: 0 success
//! or healthy, 2 dynamic flags present, 3 near-degenerate, 1 any error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "goi-kit", version, about = "Sensitivity and observability diagnostics for SE(3) pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scene file: JSON {landmarks, pose, sigma}
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,
    /// Base seed for all random streams
    #[arg(long, env = "GOI_KIT_SEED", default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Format for feature reports (grids are always CSV, verdicts JSON)
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for trial grids
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// se(3) metric: JSON 6x6 row-major; identity when omitted
    #[arg(long, value_name = "FILE")]
    g_metric: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Injection {
    /// Fraction of synthesized features receiving a dynamic bias
    #[arg(long, default_value_t = 0.0)]
    dynamic_fraction: f64,
    /// Image-space bias magnitude for dynamic features
    #[arg(long, default_value_t = 0.0)]
    bias_magnitude: f64,
    /// Bias direction rule
    #[arg(long, value_enum, default_value_t = BiasModeArg::Random)]
    bias_mode: BiasModeArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BiasModeArg {
    Random,
    WeakAligned,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the analytic residual Jacobian against central differences
    VerifyJacobian {
        #[command(flatten)]
        common: Common,
        /// Number of random (pose, landmark) cases
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Monte Carlo check of the score-moment identity against the curvature
    FisherCheck {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo sample counts
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 10_000, 100_000, 1_000_000])]
        n_grid: Vec<usize>,
    },
    /// Concentration of the empirical curvature around the frozen reference
    Concentration {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 10_000, 100_000])]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Population spectra across a family of depth scales
    DegeneracySweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0, 1000.0])]
        d_grid: Vec<f64>,
    },
    /// Observable-error scaling of the Gauss-Newton solver
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 400, 1600, 6400])]
        n_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
        d_grid: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        trials: usize,
    },
    /// Per-feature influence report
    GoiReport {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        injection: Injection,
        /// Sensitivity threshold; 95th-percentile rule when omitted
        #[arg(long)]
        tau_goi: Option<f64>,
        /// Weak-direction alignment threshold
        #[arg(long, default_value_t = 0.6)]
        tau_rho: f64,
    },
    /// Flag dynamic or inconsistent features
    DetectDynamic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        injection: Injection,
        /// Sensitivity threshold; 95th-percentile rule when omitted
        #[arg(long)]
        tau_goi: Option<f64>,
        /// Weak-direction alignment threshold
        #[arg(long, default_value_t = 0.6)]
        tau_rho: f64,
    },
    /// Detect pure-rotation / low-parallax observability collapse
    DetectDegeneracy {
        #[command(flatten)]
        common: Common,
        /// Eigenvalue threshold; 1e-6 * lambda_max rule when omitted
        #[arg(long)]
        tau_lambda: Option<f64>,
    },
    /// Solve for the pose from the scene's measurements
    Solve {
        #[command(flatten)]
        common: Common,
        /// Initial pose file: JSON {r, t}; scene pose when omitted
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
