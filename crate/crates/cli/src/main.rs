mod commands;
mod config;

use std::process::ExitCode;

use pixel_core::PixelError;

use crate::commands::NumericalFailure;
use crate::config::{parse_config, ConfigError};

/// Map an error to the documented exit status: 2 for configuration
/// problems, 3 for numerical failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NumericalFailure>().is_some() {
        return 3;
    }
    let core = match err.downcast_ref::<ConfigError>() {
        Some(ConfigError::Core(e)) => Some(e),
        Some(_) => return 2,
        None => err.downcast_ref::<PixelError>(),
    };
    match core {
        Some(PixelError::Config(_) | PixelError::Format(_) | PixelError::SizeMismatch { .. }) => 2,
        Some(PixelError::Numerical(_) | PixelError::Convergence(_) | PixelError::Domain(_)) => 3,
        Some(PixelError::OutOfRange { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let invocation = match parse_config(std::env::args_os()) {
        Ok(inv) => inv,
        Err(ConfigError::Cli(e)) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = commands::run(invocation);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
