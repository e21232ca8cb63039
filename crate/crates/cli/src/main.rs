mod args;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use report::{CliError, Context};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let message = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            report::print_error(&CliError::Validation(message));
            return ExitCode::from(1);
        }
    };
    let ctx = Context::new(&cli.global);
    match commands::run(&ctx, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            ctx.log(&format!("error: {e}"));
            report::print_error(&e);
            ExitCode::from(e.code())
        }
    }
}
