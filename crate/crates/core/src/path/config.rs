use std::time::Duration;

use crate::error::{MpwError, Result};
use crate::stream::MAX_STREAMS;

pub const KIB: usize = 1024;
pub const MIB: usize = 1024 * KIB;
pub const GIB: usize = 1024 * MIB;

pub const DEFAULT_CHUNK_SIZE: usize = 8 * MIB;
pub const DEFAULT_MAX_DYNAMIC_LEN: u64 = GIB as u64;
pub const DEFAULT_PROBE_BYTES: usize = MIB;

/// Tunables of one path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathConfig {
    pub stream_count: usize,
    /// Largest slice handed to a single send call on one stream.
    pub chunk_size: usize,
    /// Per-stream ceiling in bytes per second; `None` sends unpaced.
    pub pacing_rate: Option<u64>,
    /// Requested socket buffer size; `None` leaves the OS default.
    pub window: Option<usize>,
    /// Probe and pick chunk size right after the path opens.
    pub autotune: bool,
    /// Largest length a peer may advertise in a dynamic-size exchange.
    pub max_dynamic_len: u64,
    pub connect_timeout: Duration,
    /// `None` waits indefinitely for the peer's streams.
    pub accept_timeout: Option<Duration>,
    /// Bytes exchanged per candidate when autotuning.
    pub probe_bytes: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            stream_count: 1,
            chunk_size: DEFAULT_CHUNK_SIZE,
            pacing_rate: None,
            window: None,
            autotune: true,
            max_dynamic_len: DEFAULT_MAX_DYNAMIC_LEN,
            connect_timeout: Duration::from_secs(30),
            accept_timeout: None,
            probe_bytes: DEFAULT_PROBE_BYTES,
        }
    }
}

impl PathConfig {
    pub fn with_streams(stream_count: usize) -> Self {
        PathConfig {
            stream_count,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stream_count == 0 || self.stream_count > MAX_STREAMS {
            return Err(MpwError::OutOfRange {
                what: "stream count",
                value: self.stream_count as u64,
            });
        }
        if self.chunk_size == 0 {
            return Err(MpwError::OutOfRange {
                what: "chunk_size",
                value: 0,
            });
        }
        if self.pacing_rate == Some(0) {
            return Err(MpwError::OutOfRange {
                what: "pacing_rate",
                value: 0,
            });
        }
        if self.window == Some(0) {
            return Err(MpwError::OutOfRange {
                what: "window",
                value: 0,
            });
        }
        Ok(())
    }
}

/// One adjustable per-path setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    ChunkSize(usize),
    /// `None` turns pacing off.
    PacingRate(Option<u64>),
    Window(usize),
    AutoTune(bool),
}

impl Setting {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            Setting::ChunkSize(0) => Err(MpwError::OutOfRange {
                what: "chunk_size",
                value: 0,
            }),
            Setting::PacingRate(Some(0)) => Err(MpwError::OutOfRange {
                what: "pacing_rate",
                value: 0,
            }),
            Setting::Window(0) => Err(MpwError::OutOfRange {
                what: "window",
                value: 0,
            }),
            _ => Ok(()),
        }
    }
}
