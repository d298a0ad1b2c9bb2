//! `blockspike` — command-line front end for the block-structured spiked
//! Wigner toolkit.
//!
//! Subcommands:
//! - `predict`: solve the limiting theory for a model file (phase, outlier
//!   location, overlaps, spectral density, support edges).
//! - `simulate`: draw finite-`N` samples, measure spectra and overlaps.
//! - `sweep`: vary one model parameter and compare theory against Monte
//!   Carlo at every stop.
//! - `reproduce`: run a bundled experiment (`fig1`: three density panels,
//!   `fig2`: two overlap sweeps) and emit plot-ready data plus a gnuplot
//!   script.
//! - `selftest`: run the built-in correctness checks.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 configuration error,
//! 3 numerical failure. Errors on stderr name the failing
//! `module::operation`. All outputs are deterministic: rerunning a command
//! with the same inputs reproduces every file byte for byte.

mod ops;
mod selftest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blockspike_core::model::{self, ModelParams, RawModel};

/// Default upper guard on the matrix dimension: an `N×N` dense symmetric
/// eigenproblem beyond this size takes minutes and gigabytes, which is
/// almost always a typo rather than an intent. `--max-n` raises the guard.
const DEFAULT_MAX_N: usize = 8000;

#[derive(Parser)]
#[command(
    name = "blockspike",
    version,
    about = "Spectral predictions and Monte Carlo experiments for block-structured spiked Wigner matrices",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the limiting theory for a model: phase, outlier, overlaps,
    /// density curve, and support edges.
    Predict(PredictArgs),
    /// Draw finite-N samples and measure spectra and signal overlaps.
    Simulate(SimulateArgs),
    /// Vary one parameter entry over a range; tabulate theory vs Monte
    /// Carlo overlap at every stop.
    Sweep(SweepArgs),
    /// Run a bundled experiment end to end (`fig1` or `fig2`).
    Reproduce(ReproduceArgs),
    /// Run the built-in correctness checks.
    Selftest,
}

#[derive(Args)]
struct PredictArgs {
    /// Model file (JSON: {"K":…, "rho":[…], "S":[[…]], "prior":…}).
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Density grid as MIN:MAX:COUNT; default spans the support.
    #[arg(long, value_name = "MIN:MAX:COUNT", allow_hyphen_values = true)]
    grid: Option<GridSpec>,
    /// Smallest spectral resolution η for the density continuation.
    #[arg(long, value_name = "FLOAT", default_value_t = blockspike_core::qve::DENSITY_ETA_DEFAULT)]
    eta: f64,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Which output families to write.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file (JSON: {"K":…, "rho":[…], "S":[[…]], "prior":…}).
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Matrix dimension.
    #[arg(long = "N", value_name = "INT", default_value_t = 1000)]
    n: usize,
    /// Number of independent samples.
    #[arg(long, value_name = "INT", default_value_t = 1)]
    samples: usize,
    /// Base RNG seed; per-sample seeds are derived from it.
    #[arg(long, value_name = "INT", default_value_t = 42)]
    seed: u64,
    /// Histogram bin count.
    #[arg(long, value_name = "INT", default_value_t = 60)]
    bins: usize,
    /// Also dump the pooled eigenvalues as binary (eigenvalues.bin).
    #[arg(long)]
    raw_eigenvalues: bool,
    /// Upper guard on N (raise it deliberately for very large runs).
    #[arg(long, value_name = "INT", default_value_t = DEFAULT_MAX_N)]
    max_n: usize,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Which output families to write.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    /// Model file providing the baseline parameters.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Which parameter to sweep: `s:I:J` (symmetric S entry, both (I,J)
    /// and (J,I)) or `rho:K` (block proportion K; the others rescale
    /// proportionally).
    #[arg(long, value_name = "PATH")]
    param: ParamPath,
    /// Swept values as MIN:MAX:COUNT (inclusive linear range).
    #[arg(long, value_name = "MIN:MAX:COUNT", allow_hyphen_values = true)]
    range: GridSpec,
    /// Matrix dimension for the Monte Carlo stops.
    #[arg(long = "N", value_name = "INT", default_value_t = 1000)]
    n: usize,
    /// Samples per sweep stop.
    #[arg(long, value_name = "INT", default_value_t = 10)]
    samples: usize,
    /// Base RNG seed; per-stop and per-sample seeds are derived from it.
    #[arg(long, value_name = "INT", default_value_t = 42)]
    seed: u64,
    /// Upper guard on N (raise it deliberately for very large runs).
    #[arg(long, value_name = "INT", default_value_t = DEFAULT_MAX_N)]
    max_n: usize,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Which output families to write.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Bundled experiment id: `fig1` (three density panels at snr 0.5, 1,
    /// 3) or `fig2` (two overlap sweeps over snr 0.55..3.5).
    #[arg(value_name = "ID")]
    id: String,
    /// Matrix dimension (default 3000, the bundled setting).
    #[arg(long = "N", value_name = "INT")]
    n: Option<usize>,
    /// Samples per panel / per sweep stop (defaults: fig1 → 1, fig2 → 10).
    #[arg(long, value_name = "INT")]
    samples: Option<usize>,
    /// Base RNG seed.
    #[arg(long, value_name = "INT", default_value_t = 42)]
    seed: u64,
    /// Histogram bin count (fig1 panels).
    #[arg(long, value_name = "INT", default_value_t = 60)]
    bins: usize,
    /// Smallest spectral resolution η for the density curves.
    #[arg(long, value_name = "FLOAT", default_value_t = blockspike_core::qve::DENSITY_ETA_DEFAULT)]
    eta: f64,
    /// Upper guard on N (raise it deliberately for very large runs).
    #[arg(long, value_name = "INT", default_value_t = DEFAULT_MAX_N)]
    max_n: usize,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Which output families to write.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

/// Output family selector: JSON documents, CSV tables, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

/// `MIN:MAX:COUNT` — an inclusive linear range with at least two points.
#[derive(Debug, Clone, Copy)]
struct GridSpec {
    min: f64,
    max: f64,
    count: usize,
}

impl GridSpec {
    fn values(&self) -> Vec<f64> {
        blockspike_core::qve::linspace(self.min, self.max, self.count)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.count)
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected MIN:MAX:COUNT, got `{s}`"));
        }
        let min: f64 = parts[0]
            .parse()
            .map_err(|e| format!("bad MIN `{}`: {e}", parts[0]))?;
        let max: f64 = parts[1]
            .parse()
            .map_err(|e| format!("bad MAX `{}`: {e}", parts[1]))?;
        let count: usize = parts[2]
            .parse()
            .map_err(|e| format!("bad COUNT `{}`: {e}", parts[2]))?;
        if !min.is_finite() || !max.is_finite() {
            return Err(format!("range ends must be finite, got `{s}`"));
        }
        if min >= max {
            return Err(format!("MIN must be below MAX, got `{s}`"));
        }
        if count < 2 {
            return Err(format!("COUNT must be at least 2, got `{s}`"));
        }
        Ok(GridSpec { min, max, count })
    }
}

/// Which model parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamPath {
    /// `S[i][j]` and `S[j][i]` together (the matrix stays symmetric).
    S(usize, usize),
    /// `rho[k]`; the remaining proportions rescale to keep the sum at 1.
    Rho(usize),
}

impl fmt::Display for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamPath::S(i, j) => write!(f, "s:{i}:{j}"),
            ParamPath::Rho(k) => write!(f, "rho:{k}"),
        }
    }
}

impl FromStr for ParamPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["s", i, j] => {
                let i: usize = i.parse().map_err(|e| format!("bad row index `{i}`: {e}"))?;
                let j: usize = j.parse().map_err(|e| format!("bad column index `{j}`: {e}"))?;
                Ok(ParamPath::S(i, j))
            }
            ["rho", k] => {
                let k: usize = k.parse().map_err(|e| format!("bad block index `{k}`: {e}"))?;
                Ok(ParamPath::Rho(k))
            }
            _ => Err(format!("expected `s:I:J` or `rho:K`, got `{s}`")),
        }
    }
}

/// A command failure: what went wrong, where, and which exit code it maps
/// to. `origin` names the failing `module::operation` for stderr.
#[derive(Debug)]
enum Failure {
    /// Bad inputs or environment — exit 2.
    Config { origin: String, message: String },
    /// A solver or measurement failed on valid inputs — exit 3.
    Numerical { origin: String, message: String },
    /// One or more self-checks failed — exit 1.
    Selftest { failed: usize },
}

impl Failure {
    fn config(origin: &str, message: impl Into<String>) -> Self {
        Failure::Config {
            origin: origin.to_string(),
            message: message.into(),
        }
    }

    fn numerical(origin: &str, message: impl Into<String>) -> Self {
        Failure::Numerical {
            origin: origin.to_string(),
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Selftest { .. } => 1,
            Failure::Config { .. } => 2,
            Failure::Numerical { .. } => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config { origin, message } => write!(f, "error ({origin}): {message}"),
            Failure::Numerical { origin, message } => write!(f, "error ({origin}): {message}"),
            Failure::Selftest { failed } => {
                write!(f, "error (cli::selftest): {failed} check(s) failed")
            }
        }
    }
}

/// Wraps a core error into a numerical failure tagged with the failing
/// operation.
fn num_err<E: fmt::Display>(origin: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure::numerical(origin, e.to_string())
}

/// Reads and validates a model file.
fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::config(
            "cli::load_model",
            format!("cannot read model file `{}`: {e}", path.display()),
        )
    })?;
    let raw: RawModel = serde_json::from_str(&text).map_err(|e| {
        Failure::config(
            "cli::load_model",
            format!("model file `{}` is not valid model JSON: {e}", path.display()),
        )
    })?;
    model::validate(&raw).map_err(|e| Failure::config("model::validate", e.to_string()))
}

/// Ensures the output directory exists.
fn ensure_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::config(
            "cli::ensure_out_dir",
            format!("cannot create output directory `{}`: {e}", dir.display()),
        )
    })
}

/// Validates the matrix dimension against the model and the size guard.
fn check_n(n: usize, m: &ModelParams, max_n: usize) -> Result<(), Failure> {
    if n < m.k() || n < 2 {
        return Err(Failure::config(
            "cli::check_n",
            format!("N = {n} is too small: need N ≥ K = {} and N ≥ 2", m.k()),
        ));
    }
    if n > max_n {
        return Err(Failure::config(
            "cli::check_n",
            format!("N = {n} exceeds the size guard {max_n}; pass --max-n {n} to allow it"),
        ));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Predict(args) => ops::predict(&args),
        Command::Simulate(args) => ops::simulate(&args),
        Command::Sweep(args) => ops::sweep(&args),
        Command::Reproduce(args) => ops::reproduce(&args),
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
