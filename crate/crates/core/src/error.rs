use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::path::PathId;

pub type Result<T, E = MpwError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MpwError {
    #[error("unresolvable host `{0}`")]
    UnresolvableHost(String),

    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: u64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("timed out after {elapsed:?} waiting for {what}")]
    Timeout { what: String, elapsed: Duration },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("could not connect to {target}: {source}")]
    Connect {
        target: String,
        #[source]
        source: io::Error,
    },

    #[error("transport error after {sent} bytes: {source}")]
    Transport {
        sent: u64,
        #[source]
        source: io::Error,
    },

    #[error("stream truncated: received {received} of {expected} bytes")]
    Truncated { received: u64, expected: u64 },

    #[error("stream is closed")]
    StreamClosed,

    #[error("no such path: {0}")]
    NoSuchPath(PathId),

    #[error("path {0} has failed and must be destroyed")]
    PathFailed(PathId),

    #[error("path {0} already has a transfer in progress")]
    Busy(PathId),

    #[error("advertised message length {advertised} exceeds limit {limit}")]
    Oversize { advertised: u64, limit: u64 },

    #[error("unknown transfer handle {0}")]
    UnknownHandle(u64),

    #[error("transfer handle {0} was already waited on")]
    HandleConsumed(u64),

    #[error("non-blocking transfer {handle} failed: {source}")]
    TransferFailed {
        handle: u64,
        #[source]
        source: Box<MpwError>,
    },

    #[error("on path {path}: {source}")]
    OnPath {
        path: PathId,
        #[source]
        source: Box<MpwError>,
    },

    #[error("invalid file frame: {0}")]
    BadFrame(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl MpwError {
    pub(crate) fn on_path(self, path: PathId) -> Self {
        match self {
            e @ MpwError::OnPath { .. } => e,
            e => MpwError::OnPath {
                path,
                source: Box::new(e),
            },
        }
    }

    /// Strips any `OnPath` wrapping and returns the underlying error.
    pub fn root(&self) -> &MpwError {
        match self {
            MpwError::OnPath { source, .. } | MpwError::TransferFailed { source, .. } => {
                source.root()
            }
            e => e,
        }
    }
}
