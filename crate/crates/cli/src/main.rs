mod args;
mod commands;
mod error;
mod inputs;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::validation(format!("cannot write to stdout: {e}"))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::validation("field `threads` must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::validation(format!("cannot start thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => emit(&commands::fit(a)?, a.out.as_deref()),
        Command::Infer(a) => emit(&commands::infer_cmd(a)?, a.out.as_deref()),
        Command::Hte(a) => emit(&commands::hte(a)?, a.out.as_deref()),
        Command::Simulate(a) => {
            let (report, z_csv) = commands::simulate(a)?;
            if let (Some(path), Some(table)) = (&a.z_csv, z_csv) {
                fs::write(path, table)
                    .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))?;
            }
            emit(&report, a.out.as_deref())
        }
        Command::Diagnose(a) => emit(&commands::diagnose_cmd(a)?, a.out.as_deref()),
        Command::Generate(a) => emit(&commands::generate_cmd(a)?, None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LRINFER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::validation(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
