use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heisenclone_core::spectra::DEFAULT_PARTITION_CAP;
use heisenclone_core::{ErrorKind, Limits};

mod commands;
mod report;

use report::{CliError, Format};

/// Probabilistic replication of quantum clocks: fidelities, bounds, sweeps
/// and metrology checks.
#[derive(Parser, Debug)]
#[command(name = "heisenclone", version)]
struct Cli {
    #[command(flatten)]
    config: RunConfig,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct RunConfig {
    /// Spectrum JSON file. Defaults to the equal-weight qubit on {0, 1}.
    #[arg(long, global = true, value_name = "PATH")]
    pub spectrum: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Seed for randomized subcommands.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Largest number of grid points an N-copy distribution may occupy.
    #[arg(
        long,
        global = true,
        env = "HEISENCLONE_CAP",
        default_value_t = heisenclone_core::spectra::DEFAULT_SUPPORT_CAP,
        value_parser = clap::value_parser!(u64).range(1..)
    )]
    pub support_cap: u64,
}

impl RunConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            support_cap: self.support_cap,
            partition_cap: DEFAULT_PARTITION_CAP,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fidelity and success probability of one N -> M replication.
    Replicate(ReplicateArgs),
    /// Sweep a family of (N, M) points and emit one row per point.
    Sweep(SweepArgs),
    /// Lower bound, exact value and upper bound for one (N, M).
    Bounds(BoundsArgs),
    /// Quantum Fisher information and related checks.
    #[command(subcommand)]
    Metrology(MetrologyCommand),
    /// Parse and validate the spectrum (and system) files.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterChoice {
    Super,
    Windowed,
    Identity,
    /// Unfiltered shift channel with the best shift near the anchor.
    Deterministic,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Window scale f(N). Defaults to ln(N + 1).
    #[arg(long)]
    pub f_value: Option<f64>,
    /// Window constant xi. Defaults to the linear-rate value for --c2.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Rate constant M ~ c2 N used to derive xi.
    #[arg(long, default_value_t = 2.0)]
    pub c2: f64,
}

#[derive(Args, Debug)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub m: u64,
    #[arg(long, value_enum, default_value_t = FilterChoice::Super)]
    pub filter: FilterChoice,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitChoice {
    /// ln p_yes against N.
    Pyes,
    /// ln(-ln(1 - F)) against ln N.
    Infidelity,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundChoice {
    /// Upper bound at the largest energy cut, N ||H - <H>||.
    Lemma1,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["fig2", "alpha", "n"]))]
pub struct SweepArgs {
    /// N = 20 and M = 20, 40, ..., 400.
    #[arg(long)]
    pub fig2: bool,
    /// Rate mode: M = ceil(c N^alpha).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0, requires = "alpha")]
    pub c: f64,
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = (20..=120).step_by(10).collect::<Vec<u64>>(),
        requires = "alpha"
    )]
    pub n_values: Vec<u64>,
    /// Fixed-N mode, with --m-values.
    #[arg(long, requires = "m_values")]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',', requires = "n")]
    pub m_values: Vec<u64>,
    #[arg(long, value_enum, default_value_t = FilterChoice::Super)]
    pub filter: FilterChoice,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Append an exponent fit of the chosen column.
    #[arg(long, value_enum, conflicts_with = "bound")]
    pub fit: Option<FitChoice>,
    /// Emit an upper-bound table instead of the fidelity table.
    #[arg(long, value_enum)]
    pub bound: Option<BoundChoice>,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub m: u64,
    /// Success probability fed to the upper bound. Defaults to the super
    /// filter's own.
    #[arg(long)]
    pub p_yes: Option<f64>,
    /// Energy cut. Defaults to five evenly spaced cuts up to N ||H - <H>||.
    #[arg(long)]
    pub e_delta: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SystemArgs {
    /// System JSON file (Hamiltonian and probe). Defaults to the spectrum's
    /// diagonal system.
    #[arg(long, value_name = "PATH")]
    pub system: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum MetrologyCommand {
    /// QFI of the clock state at time t.
    Qfi {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Probabilistic QFI after a filter; the epsilon filter if --epsilon is
    /// given, the identity otherwise.
    ProbQfi {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Average QFI of random diagonal filters against the spectral width.
    AvgBound {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Period of the clock. Required with --system.
        #[arg(long)]
        period: Option<f64>,
    },
    /// Heisenberg-limited variance floor for N copies.
    Hl {
        #[arg(long)]
        n: u64,
    },
    /// Gaussian twirl of a random positive operator.
    Twirl {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Filter-then-channel decomposition of a random CP map.
    Decompose {
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long)]
        dim_out: Option<usize>,
        #[arg(long, default_value_t = 2)]
        kraus: usize,
    },
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Core(e) => match e.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Resource => 3,
            ErrorKind::Numeric => 4,
        },
        CliError::Io { .. } | CliError::Usage(_) | CliError::Unsupported(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string());
            report::emit_error(&err);
            return ExitCode::from(exit_code(&err));
        }
    };

    let config = &cli.config;
    let result = match &cli.command {
        Command::Replicate(args) => commands::replicate(config, args),
        Command::Sweep(args) => commands::sweep(config, args),
        Command::Bounds(args) => commands::bounds(config, args),
        Command::Metrology(cmd) => commands::metrology(config, cmd),
        Command::Validate(args) => commands::validate(config, args),
    }
    .and_then(|r| r.render(config.format));

    match result {
        Ok(text) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            report::emit_error(&err);
            ExitCode::from(exit_code(&err))
        }
    }
}
