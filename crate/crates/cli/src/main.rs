use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dir_core::Error;

mod commands;
mod config;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "dir-sampler", version, about = "Fit and simulate dynamic item response models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset with known truth.
    Simulate(SimulateArgs),
    /// Check a dataset against the posterior-propriety conditions.
    Validate(ValidateArgs),
    /// Fit a dataset and write draws, summaries and a manifest.
    Fit(FitArgs),
    /// Same as `fit --mode online`.
    Online(FitArgs),
    /// Recompute summaries from traces, and coverage when truth is available.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Use the reference ten-individual design (the default when no config is given).
    #[arg(long = "paper-defaults", conflicts_with = "config")]
    reference: bool,
    /// Flat JSON simulation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Directory holding responses.csv and lapses.csv.
    data: PathBuf,
    /// Also write validation.csv here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Directory holding responses.csv, lapses.csv and optionally groups.csv.
    data: PathBuf,
    /// Flat JSON model and sampler settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// retrospective or online
    #[arg(long)]
    mode: Option<String>,
    /// Fixed system-noise standard deviation for online mode.
    #[arg(long)]
    drift_sd: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Output directory of a previous fit.
    run: PathBuf,
    /// Truth CSV; defaults to truth.csv in the run or data directory when present.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Where to write the recomputed files (defaults to the run directory).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) => 2,
        Error::Config(_) | Error::InvalidArgument(_) => 3,
        _ => 1,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("DIR_SAMPLER_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("DIR_SAMPLER_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a.reference, a.config.as_deref(), a.seed, &a.output),
        Command::Validate(a) => commands::validate(&a.data, a.output.as_deref()),
        Command::Fit(a) => commands::fit(&a.into_request(None)),
        Command::Online(a) => {
            if a.mode.as_deref().is_some_and(|m| m != "online") {
                return Err(Error::Config("the online command cannot take another mode".into()));
            }
            commands::fit(&a.into_request(Some("online")))
        }
        Command::Summarize(a) => commands::summarize(&a.run, a.truth.as_deref(), a.output.as_deref()),
    }
}

impl FitArgs {
    fn into_request(self, mode: Option<&str>) -> commands::FitRequest {
        commands::FitRequest {
            data: self.data,
            config: self.config,
            seed: self.seed,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            chains: self.chains,
            mode: mode.map(str::to_string).or(self.mode),
            drift_sd: self.drift_sd,
            output: self.output,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
