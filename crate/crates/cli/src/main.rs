mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::CliError;

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SUBSQL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("SUBSQL_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(CliError::Usage("SUBSQL_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Model(a) => commands::model(&a),
        Command::Contour(a) => commands::contour(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::EstimatePsd(a) => commands::estimate_psd(&a),
        Command::Subtract(a) => commands::subtract(&a),
        Command::Stationarity(a) => commands::stationarity(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Demo(a) => commands::demo(&a),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with exit status 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("subsql: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
