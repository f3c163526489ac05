use std::process::ExitCode;

use clap::Parser;
use neurongauge_cli::{exit_code, run, Cli};
use neurongauge_core::ErrorClass;
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version go to stdout and are not failures.
            return if e.use_stderr() { ExitCode::from(exit_code(ErrorClass::Config)) } else { ExitCode::SUCCESS };
        }
    };
    let filter = EnvFilter::try_from_env("NEURONGAUGE_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
