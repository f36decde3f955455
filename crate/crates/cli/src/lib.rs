//! Shared helpers for the command-line tools.

use std::sync::atomic::{AtomicBool, Ordering};

use mpwide::harness::parse_size;

/// Set by SIGINT/SIGTERM.
pub static STOP: AtomicBool = AtomicBool::new(false);

/// Installs a handler that raises [`STOP`]; a second signal exits at once.
pub fn install_stop_handler() -> anyhow::Result<()> {
    ctrlc::set_handler(|| {
        if STOP.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
    })?;
    Ok(())
}

pub fn init_logging(verbose: bool) {
    let default = if verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp_millis()
        .init();
}

/// clap value parser for byte sizes such as `8M`.
pub fn size_arg(s: &str) -> Result<usize, String> {
    parse_size(s).map_err(|e| e.to_string())
}

/// clap value parser for byte rates such as `16M` (bytes per second).
pub fn rate_arg(s: &str) -> Result<u64, String> {
    size_arg(s).map(|v| v as u64)
}
