//! `ttfed`: run scenarios, sweep one parameter, or tabulate the convergence bound.

mod bound;
mod error;
mod output;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ttfed", version, about = "Time-triggered federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its metrics.
    Run(RunArgs),
    /// Run a grid over one parameter and several seeds.
    Sweep(SweepArgs),
    /// Tabulate the convergence bound for a constants file.
    Bound(BoundArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario file of `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "TTFED_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Master seed, overriding `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// `NAME=v1,v2,...` with NAME one of delta_t_fraction, theta, eta,
    /// policy, or any dotted config key.
    #[arg(long)]
    axis: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Comma-separated algorithms; defaults to `sim.algorithm`.
    #[arg(long)]
    algorithms: Option<String>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct BoundArgs {
    /// Constants file of `key = value` lines.
    #[arg(long)]
    constants: PathBuf,
    /// Comma-separated round counts K.
    #[arg(long, default_value = "0,1,10,100,1000")]
    rounds: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(
            args.scenario.config.as_deref(),
            &args.scenario.overrides,
            args.seed,
            &args.scenario.out_dir,
        ),
        Command::Sweep(args) => sweep::cmd_sweep(&sweep::SweepRequest {
            config: args.scenario.config.as_deref(),
            overrides: &args.scenario.overrides,
            out_dir: &args.scenario.out_dir,
            axis: &args.axis,
            seeds: &args.seeds,
            algorithms: args.algorithms.as_deref(),
            jobs: args.jobs,
        }),
        Command::Bound(args) => bound::cmd_bound(&args.constants, &args.rounds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CliError;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn overrides_repeat() {
        let cli = Cli::try_parse_from([
            "ttfed",
            "run",
            "--override",
            "sim.seed=3",
            "--override",
            "sim.num_users=4",
            "--seed",
            "9",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        assert_eq!(args.scenario.overrides.len(), 2);
        assert_eq!(args.seed, Some(9));
    }

    #[test]
    fn unknown_error_kinds_map_to_exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
    }
}
