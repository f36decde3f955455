//! One-way directory gathering.
//!
//! The source polls its tree and sends every file whose size or mtime
//! differs from what it last delivered, one [`FileFrame`] per dynamic
//! exchange (the sink answers with an empty buffer). Deleted files are
//! simply forgotten; the sink keeps its copy.

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::frame::{safe_relative, FileFrame};
use super::manifest::{changed_paths, scan_manifest, Manifest};
use super::mpwcp::write_atomically;
use crate::error::{MpwError, Result};
use crate::path::{Mpw, PathId};

const STOP_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleStats {
    pub frames: u64,
    pub payload_bytes: u64,
}

/// Source-side state: what has been delivered so far.
#[derive(Debug)]
pub struct GatherSource {
    root: PathBuf,
    delivered: Manifest,
    totals: CycleStats,
}

impl GatherSource {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        scan_manifest(&root)?;
        Ok(GatherSource {
            root,
            delivered: Manifest::new(),
            totals: CycleStats::default(),
        })
    }

    pub fn totals(&self) -> CycleStats {
        self.totals
    }

    /// Scans once and sends what changed. A file that cannot be read is
    /// left for the next cycle; a path failure ends the cycle with an error.
    pub fn cycle(&mut self, mpw: &Mpw, path: PathId) -> Result<CycleStats> {
        let now = scan_manifest(&self.root)?;
        let mut stats = CycleStats::default();
        for rel in changed_paths(&self.delivered, &now) {
            let state = now[rel];
            let full = self.root.join(safe_relative(rel)?);
            let frame = match read_frame(&full, rel) {
                Ok(f) => f,
                Err(e) => {
                    warn!("{}: {e}; retrying next cycle", full.display());
                    continue;
                }
            };
            mpw.dsend_recv(path, &frame.encode())?;
            // Recording the pre-read state means a file modified while it
            // was being read is sent again next cycle.
            self.delivered.insert(rel.to_owned(), state);
            stats.frames += 1;
            stats.payload_bytes += frame.content.len() as u64;
        }
        self.totals.frames += stats.frames;
        self.totals.payload_bytes += stats.payload_bytes;
        if stats.frames > 0 {
            debug!(
                "gather cycle: {} files, {} bytes",
                stats.frames, stats.payload_bytes
            );
        }
        Ok(stats)
    }
}

fn read_frame(full: &Path, rel: &str) -> Result<FileFrame> {
    let meta = fs::metadata(full)?;
    let content = fs::read(full)?;
    FileFrame::new(rel, meta.permissions().mode() & 0o7777, content)
}

/// Runs source cycles every `poll_interval` until `stop` is set, then
/// closes the path so the sink returns.
pub fn datagather_sync(
    mpw: &Mpw,
    path: PathId,
    source_root: &Path,
    poll_interval: Duration,
    stop: &AtomicBool,
) -> Result<CycleStats> {
    let mut source = GatherSource::new(source_root)?;
    run_source(&mut source, mpw, path, poll_interval, stop)
}

/// [`datagather_sync`] with caller-owned state, so a caller can reconnect
/// after a path failure without resending everything.
pub fn run_source(
    source: &mut GatherSource,
    mpw: &Mpw,
    path: PathId,
    poll_interval: Duration,
    stop: &AtomicBool,
) -> Result<CycleStats> {
    info!(
        "gathering {} every {poll_interval:?}",
        source.root.display()
    );
    let outcome = loop {
        if stop.load(Ordering::Relaxed) {
            break Ok(source.totals());
        }
        let started = Instant::now();
        if let Err(e) = source.cycle(mpw, path) {
            break Err(e);
        }
        while started.elapsed() < poll_interval && !stop.load(Ordering::Relaxed) {
            thread::sleep(STOP_POLL.min(poll_interval));
        }
    };
    let _ = mpw.destroy_path(path);
    outcome
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SinkStats {
    pub written: u64,
    pub skipped: u64,
    pub payload_bytes: u64,
}

/// Writes incoming frames under `dest_root` until the source closes the
/// path. Frames that would escape the root, or that cannot be written, are
/// skipped and logged.
pub fn datagather_sink(mpw: &Mpw, path: PathId, dest_root: &Path) -> Result<SinkStats> {
    fs::create_dir_all(dest_root)?;
    let mut stats = SinkStats::default();
    loop {
        let raw = match mpw.dsend_recv(path, &[]) {
            Ok(raw) => raw,
            Err(e) if peer_closed(&e) => break,
            Err(e) => return Err(e),
        };
        match store_frame(dest_root, &raw) {
            Ok(n) => {
                stats.written += 1;
                stats.payload_bytes += n;
            }
            Err(e) => {
                warn!("gather sink: skipping frame: {e}");
                stats.skipped += 1;
            }
        }
    }
    let _ = mpw.destroy_path(path);
    info!(
        "gather sink done: {} files written, {} skipped",
        stats.written, stats.skipped
    );
    Ok(stats)
}

fn store_frame(dest_root: &Path, raw: &[u8]) -> Result<u64> {
    let frame = FileFrame::decode(raw)?;
    let target = dest_root.join(safe_relative(&frame.relative_path)?);
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    write_atomically(&target, &frame.content, frame.mode)?;
    Ok(frame.content.len() as u64)
}

/// A clean end of session: the source closed before sending another frame.
fn peer_closed(e: &MpwError) -> bool {
    match e.root() {
        MpwError::Truncated { received: 0, .. } => true,
        MpwError::Transport { source, .. } => matches!(
            source.kind(),
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset
        ),
        _ => false,
    }
}
