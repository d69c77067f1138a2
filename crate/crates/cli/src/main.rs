mod commands;
mod config;
mod error;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Outcome;
use crate::config::Overrides;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "cbi", version, about = "Multi-type continuous-state branching with immigration: moments, simulation, limit checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check admissibility of the model and initial state.
    Validate(Common),
    /// Eigenvalues, Perron pair, regime of the selected eigenvalue.
    Spectral(Common),
    /// Exact first and second moments on a time grid.
    Moments(Common),
    /// Laplace transform via the Riccati flow.
    Laplace(Common),
    /// Monte Carlo paths.
    Simulate(Common),
    /// Statistical checks of the limit behaviour.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma separated: mean, w-mean, mixed-normal, relative-frequencies,
        /// quadratic-variation, convergence, atoms.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
    /// Sample a matrix perpetuity.
    Perpetuity(Common),
    /// Compare X at t+T against the split at T.
    Decompose(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon override.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            dt: self.dt,
            t: self.t,
        }
    }
}

fn emit(name: &str, outcome: &Outcome, common: &Common, cfg: &config::ExperimentConfig) -> Result<(), CliError> {
    let section = cfg.output.as_ref();
    let format = match common.format {
        Some(f) => f,
        None => match section.and_then(|o| o.format.as_deref()) {
            None | Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            Some(other) => return Err(CliError::Config(format!("output.format `{other}` is not json or csv"))),
        },
    };
    let out = common
        .out
        .clone()
        .or_else(|| section.and_then(|o| o.path.clone()).map(PathBuf::from));
    let json = report::to_json_bytes(&outcome.report)?;
    let bytes = match (format, &outcome.table) {
        (Format::Csv, Some(t)) => t.to_bytes()?,
        (Format::Csv, None) => {
            eprintln!("{name}: no tabular output, writing JSON");
            json.clone()
        }
        (Format::Json, _) => json.clone(),
    };
    match out {
        Some(path) => {
            report::write_atomic(&path, &bytes)?;
            if format == Format::Csv && outcome.table.is_some() {
                report::write_atomic(&sidecar(&path), &json)?;
            }
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<Option<bool>, CliError> {
    let (common, checks) = match &cli.command {
        Command::Verify { common, checks } => (common, checks.clone()),
        Command::Validate(c)
        | Command::Spectral(c)
        | Command::Moments(c)
        | Command::Laplace(c)
        | Command::Simulate(c)
        | Command::Perpetuity(c)
        | Command::Decompose(c) => (c, None),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = config::load(&common.config)?;
    let ov = common.overrides();
    let (name, outcome) = match &cli.command {
        Command::Validate(_) => ("validate", commands::validate(&cfg)?),
        Command::Spectral(_) => ("spectral", commands::spectral(&cfg)?),
        Command::Moments(_) => ("moments", commands::moments(&cfg, &ov)?),
        Command::Laplace(_) => ("laplace", commands::laplace(&cfg, &ov)?),
        Command::Simulate(_) => ("simulate", commands::simulate_cmd(&cfg, &ov)?),
        Command::Verify { .. } => ("verify", commands::verify(&cfg, &ov, checks)?),
        Command::Perpetuity(_) => ("perpetuity", commands::perpetuity(&cfg, &ov)?),
        Command::Decompose(_) => ("decompose", commands::decompose(&cfg, &ov)?),
    };
    emit(name, &outcome, common, &cfg)?;
    Ok(outcome.report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Some(false)) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
