//! User-space path forwarder.
//!
//! `forwarder RULES_FILE` where each line reads
//! `listen_host:port target_host:port streams`.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use mpwide::forward::{parse_rules, Forwarder};
use mpwide_cli::{init_logging, install_stop_handler, STOP};

#[derive(Parser)]
#[command(version, about = "Forward MPWide paths between networks")]
struct Args {
    /// Rule file: one `listen target streams` rule per line.
    config: PathBuf,
    #[arg(short, long)]
    verbose: bool,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    init_logging(args.verbose);
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read {}", args.config.display()))?;
    let rules = parse_rules(&text).with_context(|| format!("in {}", args.config.display()))?;
    anyhow::ensure!(
        !rules.is_empty(),
        "{} contains no rules",
        args.config.display()
    );
    let forwarder = Forwarder::bind(&rules)?;
    install_stop_handler()?;
    for addr in forwarder.local_addrs() {
        println!("listening {addr}");
    }
    forwarder.run(&STOP);
    log::info!("stopped");
    Ok(())
}
