//! One-way directory gathering.
//!
//! Source side: `datagather --source DIR (--connect HOST:PORT | --listen PORT)`.
//! Sink side:   `datagather --dest DIR (--listen PORT | --connect HOST:PORT)`.

use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use clap::{ArgGroup, Parser};
use log::{info, warn};
use mpwide::filetools::{datagather_sink, run_source, GatherSource};
use mpwide::{Endpoint, Mpw, MpwError, PathConfig, PathId, Role, StreamListener};
use mpwide_cli::{init_logging, install_stop_handler, STOP};

const RETRY: Duration = Duration::from_millis(500);

#[derive(Parser)]
#[command(
    version,
    about = "Keep a remote directory filled with this one's files"
)]
#[command(group(ArgGroup::new("side").required(true).args(["source", "dest"])))]
#[command(group(ArgGroup::new("link").required(true).args(["connect", "listen"])))]
struct Args {
    /// Directory to gather from.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Directory to gather into.
    #[arg(long)]
    dest: Option<PathBuf>,
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
    #[arg(long, value_name = "PORT")]
    listen: Option<u16>,
    /// Seconds between scans of the source directory.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    #[arg(short = 'n', long, default_value_t = 1)]
    streams: usize,
    #[arg(short, long)]
    verbose: bool,
}

/// Opens paths on demand, as server or client.
enum Link {
    Listen(StreamListener),
    Connect(Endpoint),
}

impl Link {
    fn open(&self, mpw: &Mpw, streams: usize) -> mpwide::Result<PathId> {
        let config = PathConfig {
            autotune: false,
            accept_timeout: Some(RETRY),
            connect_timeout: RETRY,
            ..PathConfig::with_streams(streams)
        };
        match self {
            Link::Listen(l) => mpw.accept_path(l, config),
            Link::Connect(ep) => mpw.create_path(ep, streams, Role::Client, config),
        }
    }

    /// Retries until a path opens or a stop is requested.
    fn wait_open(&self, mpw: &Mpw, streams: usize) -> Option<PathId> {
        while !STOP.load(Ordering::Relaxed) {
            match self.open(mpw, streams) {
                Ok(p) => return Some(p),
                Err(MpwError::Timeout { .. } | MpwError::Connect { .. }) => {}
                Err(e) => {
                    warn!("cannot open path: {e}");
                    thread::sleep(RETRY);
                }
            }
        }
        None
    }
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    init_logging(args.verbose);
    anyhow::ensure!(
        args.interval.is_finite() && args.interval > 0.0,
        "--interval must be positive"
    );
    let link = match (&args.listen, &args.connect) {
        (Some(port), _) => Link::Listen(StreamListener::bind_endpoint(&Endpoint::new(
            "0.0.0.0", *port,
        )?)?),
        (None, Some(peer)) => Link::Connect(peer.parse()?),
        (None, None) => unreachable!("clap requires one"),
    };
    install_stop_handler()?;
    let mpw = Mpw::new();
    match (&args.source, &args.dest) {
        (Some(src), _) => {
            let interval = Duration::from_secs_f64(args.interval);
            let mut source = GatherSource::new(src)
                .with_context(|| format!("cannot gather from {}", src.display()))?;
            while let Some(path) = link.wait_open(&mpw, args.streams) {
                match run_source(&mut source, &mpw, path, interval, &STOP) {
                    Ok(t) => info!("sent {} files, {} bytes", t.frames, t.payload_bytes),
                    Err(e) => warn!("session ended: {e}; reconnecting"),
                }
            }
        }
        (None, Some(dest)) => {
            let dest = dest.clone();
            let streams = args.streams;
            // The sink blocks in receives; it runs on its own thread so a
            // signal can end the process from here.
            thread::spawn(move || {
                while let Some(path) = link.wait_open(&mpw, streams) {
                    match datagather_sink(&mpw, path, &dest) {
                        Ok(s) => info!(
                            "session done: {} files, {} bytes",
                            s.written, s.payload_bytes
                        ),
                        Err(e) => warn!("session ended: {e}"),
                    }
                }
            });
            while !STOP.load(Ordering::Relaxed) {
                thread::sleep(Duration::from_millis(50));
            }
        }
        (None, None) => unreachable!("clap requires one"),
    }
    Ok(())
}
