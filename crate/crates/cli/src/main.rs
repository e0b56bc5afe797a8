use std::io;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    // Log level via GJN_LOG, warnings by default.
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GJN_LOG", "warn")).init();
    let cli = gjn_cli::Cli::parse();
    let mut stdout = io::stdout().lock();
    match gjn_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
