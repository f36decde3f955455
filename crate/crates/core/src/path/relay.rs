use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use log::debug;

use super::inner::PathInner;
use crate::error::{MpwError, Result};
use crate::stream::Stream;

const PUMP_BUFFER: usize = 256 * 1024;
const PUMP_STACK: usize = 128 * 1024 + PUMP_BUFFER;

/// Bytes moved by a finished relay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RelayStats {
    pub a_to_b: u64,
    pub b_to_a: u64,
}

struct Direction<'a> {
    from: &'a PathInner,
    to: &'a PathInner,
    bytes: AtomicU64,
    open_streams: AtomicUsize,
}

struct Shared<'a> {
    ab: Direction<'a>,
    ba: Direction<'a>,
    stopping: AtomicBool,
    error: Mutex<Option<MpwError>>,
}

impl Shared<'_> {
    fn stop(&self) {
        if !self.stopping.swap(true, Ordering::AcqRel) {
            self.ab.from.close();
            self.ab.to.close();
        }
    }
}

/// Copies stream `i` of one path to stream `i` of the other in both
/// directions. End-of-stream is passed on as a half-close; once every stream
/// of one side has ended, both paths are shut down.
pub(crate) fn relay(a: &PathInner, b: &PathInner) -> Result<RelayStats> {
    let n = a.streams.len();
    let shared = Shared {
        ab: Direction {
            from: a,
            to: b,
            bytes: AtomicU64::new(0),
            open_streams: AtomicUsize::new(n),
        },
        ba: Direction {
            from: b,
            to: a,
            bytes: AtomicU64::new(0),
            open_streams: AtomicUsize::new(n),
        },
        stopping: AtomicBool::new(false),
        error: Mutex::new(None),
    };
    thread::scope(|scope| {
        for dir in [&shared.ab, &shared.ba] {
            for (src, dst) in dir.from.streams.iter().zip(&dir.to.streams) {
                let shared = &shared;
                let spawned = thread::Builder::new()
                    .stack_size(PUMP_STACK)
                    .spawn_scoped(scope, move || pump(shared, dir, src, dst));
                if let Err(e) = spawned {
                    *shared.error.lock().unwrap() = Some(e.into());
                    shared.stop();
                }
            }
        }
    });
    let stats = RelayStats {
        a_to_b: shared.ab.bytes.load(Ordering::Relaxed),
        b_to_a: shared.ba.bytes.load(Ordering::Relaxed),
    };
    debug!("relay finished: {stats:?}");
    match shared.error.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

fn pump(shared: &Shared<'_>, dir: &Direction<'_>, src: &Stream, dst: &Stream) {
    let mut buf = vec![0u8; PUMP_BUFFER];
    let outcome = loop {
        match src.read_some(&mut buf) {
            Ok(0) => break Ok(()),
            Ok(n) => {
                if let Err(e) = dst.write_all_raw(&buf[..n]) {
                    break Err(e);
                }
                dir.bytes.fetch_add(n as u64, Ordering::Relaxed);
            }
            Err(e) => break Err(e),
        }
    };
    if shared.stopping.load(Ordering::Acquire) {
        return;
    }
    match outcome {
        Ok(()) => {
            dst.shutdown_write();
            if dir.open_streams.fetch_sub(1, Ordering::AcqRel) == 1 {
                debug!("relay: path {} closed", dir.from.id);
                shared.stop();
            }
        }
        Err(e) => {
            let mut slot = shared.error.lock().unwrap();
            if slot.is_none() {
                *slot = Some(MpwError::Transport {
                    sent: dir.bytes.load(Ordering::Relaxed),
                    source: e,
                });
            }
            drop(slot);
            shared.stop();
        }
    }
}
