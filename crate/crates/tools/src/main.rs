use std::process::ExitCode;

use clap::Parser;
use psr_tools::cli::{run, Cli};
use psr_tools::ToolError;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSR_LOG", "warn")).init();
    match run(&cli).map_err(anyhow::Error::from) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("psr: {err:#}");
            let code = err.downcast_ref::<ToolError>().map_or(1, ToolError::exit_code);
            ExitCode::from(code)
        }
    }
}
