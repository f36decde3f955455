//! Two-endpoint benchmark. Start `mpwtest server PORT` on one host and
//! `mpwtest client HOST:PORT` with the same options on the other; both print
//! tab-separated results.

use anyhow::Context;
use clap::{Args as ClapArgs, Parser, Subcommand};
use mpwide::harness::{parse_sizes, render_tsv, run_benchmark, BenchOptions, DEFAULT_REPS};
use mpwide::path::DEFAULT_CHUNK_SIZE;
use mpwide::{Endpoint, Role};
use mpwide_cli::{init_logging, rate_arg, size_arg};

#[derive(Parser)]
#[command(
    version,
    about = "Measure MPWide throughput and latency between two hosts"
)]
struct Args {
    #[command(subcommand)]
    role: RoleArg,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum RoleArg {
    /// Wait for the client on PORT.
    Server {
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: String,
    },
    /// Connect to a waiting server.
    Client { peer: String },
}

#[derive(ClapArgs)]
struct Opts {
    /// Comma-separated message sizes, e.g. 1K,1M,64M.
    #[arg(long, global = true, default_value = "1M,64M")]
    sizes: String,
    #[arg(long, global = true, default_value_t = 1)]
    streams: usize,
    /// Repetitions per size and direction.
    #[arg(long, global = true, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, global = true, value_parser = size_arg, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk: usize,
    /// Pacing rate in bytes per second, e.g. 100M.
    #[arg(long, global = true, value_parser = rate_arg)]
    pace: Option<u64>,
    /// TCP window (socket buffer) size, e.g. 4M.
    #[arg(long, global = true, value_parser = size_arg)]
    window: Option<usize>,
    /// Skip the per-repetition checksum.
    #[arg(long, global = true)]
    no_verify: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    init_logging(args.opts.verbose);
    let o = &args.opts;
    let opts = BenchOptions {
        sizes: parse_sizes(&o.sizes)?,
        streams: o.streams,
        reps: o.reps,
        chunk_size: o.chunk,
        pacing_rate: o.pace,
        window: o.window,
        verify: !o.no_verify,
        ..Default::default()
    };
    opts.validate().context("invalid options")?;
    let (role, endpoint) = match &args.role {
        RoleArg::Server { port, bind } => (Role::Server, Endpoint::new(bind.clone(), *port)?),
        RoleArg::Client { peer } => (Role::Client, peer.parse::<Endpoint>()?),
    };
    let results = run_benchmark(role, &endpoint, &opts)
        .with_context(|| format!("benchmark with {endpoint} failed"))?;
    print!("{}", render_tsv(&results));
    Ok(())
}
