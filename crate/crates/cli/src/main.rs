mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use rebal_core::par::{configure_threads, threads_from_env};

use crate::args::{Cli, Command};
use crate::error::CliError;

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = threads_from_env()? {
        configure_threads(n)?;
    }
    let name = match &cli.command {
        Command::Solve(_) => "solve",
        Command::Asymptotic(_) => "asymptotic",
        Command::Policy(_) => "policy",
        Command::Simulate(_) => "simulate",
        Command::Sweep(_) => "sweep",
        Command::Compare(_) => "compare",
    };
    let usage = Cli::command()
        .find_subcommand_mut(name)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    match &cli.command {
        Command::Solve(a) => commands::solve_cmd(a, &usage),
        Command::Asymptotic(a) => commands::asymptotic_cmd(a, &usage),
        Command::Policy(a) => commands::policy_cmd(a, &usage),
        Command::Simulate(a) => commands::simulate_cmd(a, &usage),
        Command::Sweep(a) => commands::sweep_cmd(a, &usage),
        Command::Compare(a) => commands::compare_cmd(a, &usage),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
