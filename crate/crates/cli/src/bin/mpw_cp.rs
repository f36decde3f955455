//! Multi-stream file copy: `mpw-cp [-n streams] [-c chunk] [--rsh CMD] SRC DST`.

use std::io;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::bail;
use clap::Parser;
use mpwide::filetools::{mpwcp, serve, CopyOptions, FileSpec, ServeMode, DEFAULT_STREAMS};
use mpwide::path::DEFAULT_CHUNK_SIZE;
use mpwide_cli::{init_logging, size_arg};

#[derive(Parser)]
#[command(
    version,
    about = "Copy a file to or from a remote host over parallel streams"
)]
struct Args {
    /// Number of TCP streams.
    #[arg(short = 'n', long, default_value_t = DEFAULT_STREAMS)]
    streams: usize,
    /// Chunk size per write, e.g. 8M.
    #[arg(short = 'c', long, value_parser = size_arg, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk: usize,
    /// Remote shell command used to start the peer.
    #[arg(long, default_value = "ssh")]
    rsh: String,
    /// Command that runs mpw-cp on the remote host.
    #[arg(long, default_value = "mpw-cp")]
    remote_cmd: String,
    /// Seconds the remote peer waits for the connection.
    #[arg(long, default_value_t = 60)]
    accept_timeout: u64,
    /// Run as the remote peer (started by the local side).
    #[arg(long, hide = true)]
    serve: Option<String>,
    #[arg(short, long)]
    verbose: bool,
    /// SRC DST, one of them as host:path. With --serve, the local file only.
    #[arg(required = true, num_args = 1..=2)]
    files: Vec<String>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    init_logging(args.verbose);
    let opts = CopyOptions {
        streams: args.streams,
        chunk_size: args.chunk,
        rsh: args.rsh.split_whitespace().map(str::to_owned).collect(),
        remote_command: args
            .remote_cmd
            .split_whitespace()
            .map(str::to_owned)
            .collect(),
        accept_timeout: Duration::from_secs(args.accept_timeout),
    };
    if let Some(mode) = &args.serve {
        let mode: ServeMode = mode.parse()?;
        let [file] = &args.files[..] else {
            bail!("--serve takes exactly one file");
        };
        serve(mode, &PathBuf::from(file), &opts, &mut io::stdout().lock())?;
        return Ok(());
    }
    let [src, dst] = &args.files[..] else {
        bail!("usage: mpw-cp [OPTIONS] SRC DST");
    };
    let (src, dst): (FileSpec, FileSpec) = (src.parse()?, dst.parse()?);
    let t0 = Instant::now();
    let stats = mpwcp(&src, &dst, &opts)?;
    let secs = t0.elapsed().as_secs_f64();
    eprintln!(
        "{src} -> {dst}: {} bytes in {secs:.2} s ({:.1} MB/s)",
        stats.bytes,
        stats.bytes as f64 / secs.max(1e-9) / 1e6
    );
    Ok(())
}
