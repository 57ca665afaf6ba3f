//! Command-line driver.
//!
//! Exit codes: 0 pass, 1 input or usage error, 2 numerical non-convergence,
//! 3 failed verdict (regularity, witness identities, negative gap).

mod artifact;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use artifact::{config_hash, Artifact, Status, TOOL, VERSION};
pub use commands::{
    never_act_policy, Format, RegularityData, SimulationData, SummaryData, SummaryEntry, ValueData, WitnessData,
    POLICY_FILE, REGULARITY_FILE, SIMULATION_FILE, SOLVE_REPORT_FILE, SUMMARY_FILE, VALUE_FILE, WITNESS_FILE,
};
pub use config::{
    ContinuityParams, PolicyChoice, ProblemSource, RandomWitness, RunConfig, SimulateParams, SolveParams, VerifyParams,
    WitnessInstance, WitnessParams,
};

use crate::error::Error;
use crate::exec;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the problem and write V.json, policy.json and report.json.
    Solve,
    /// Run the regularity checks on a solved V.json.
    Verify,
    /// Build kink witnesses and check their identities.
    Witness,
    /// Simulate a policy and compare with V.json.
    Simulate,
    /// Summarise the artifacts in the output directory.
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "smoothfit", version, about = "Grid solvers and regularity checks for controlled diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of the run configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 or unset uses every core.
    #[arg(long, global = true, env = "SMOOTHFIT_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::LinearSolve(_) => 2,
        _ => 1,
    }
}

fn load_config(path: Option<&PathBuf>, required: bool) -> Result<(RunConfig, PathBuf), Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", p.display())))?;
            let cfg = RunConfig::from_json(&text).map_err(|e| match e {
                Error::Json(j) => Error::InvalidArgument(format!("config {}: {j}", p.display())),
                other => other,
            })?;
            let base = p.parent().map(PathBuf::from).unwrap_or_default();
            Ok((cfg, base))
        }
        None if required => Err(Error::InvalidArgument("--config is required for this command".into())),
        None => Ok((RunConfig::from_json("{}")?, PathBuf::new())),
    }
}

fn dispatch(cli: &Cli) -> Result<commands::Outcome, Error> {
    let format = match cli.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
    if let Command::Report = cli.command {
        return commands::report_cmd(&cli.out, format);
    }
    let required = !matches!(cli.command, Command::Witness);
    let (mut config, base) = load_config(cli.config.as_ref(), required)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = commands::Context { config, base, out: cli.out.clone(), format };
    match cli.command {
        Command::Solve => commands::solve_cmd(&ctx),
        Command::Verify => commands::verify_cmd(&ctx),
        Command::Witness => commands::witness_cmd(&ctx),
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Report => unreachable!("handled above"),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match exec::with_threads(cli.threads.unwrap_or(0), || dispatch(&cli)) {
        Ok(o) => {
            println!("{}", o.message);
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
