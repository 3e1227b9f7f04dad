use std::process::ExitCode;

use clap::Parser;
use coviz::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = run(Cli::parse());
    let code = match result {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    };
    log::logger().flush();
    ExitCode::from(code)
}
