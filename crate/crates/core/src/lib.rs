//! Wide-area message passing over paths of parallel TCP streams.
//!
//! A *path* connects two programs through 1 to 256 TCP streams. Messages are
//! untyped byte buffers, split evenly across the streams and sent
//! concurrently; each stream can be paced and its socket buffers sized. The
//! crate also hosts the logic behind the companion tools: a user-space path
//! forwarder, a multi-stream file copier, a one-way directory gatherer, and
//! the self-test and benchmark programs.
//!
//! ```no_run
//! use mpwide::{Endpoint, Mpw, PathConfig, Role};
//!
//! let mpw = Mpw::new();
//! let peer: Endpoint = "remote.example.org:6000".parse()?;
//! let path = mpw.create_path(&peer, 32, Role::Client, PathConfig::default())?;
//! let reply = mpw.dsend_recv(path, b"hello")?;
//! mpw.destroy_path(path)?;
//! # Ok::<(), mpwide::MpwError>(())
//! ```

pub mod autotune;
pub mod error;
pub mod filetools;
pub mod forward;
pub mod harness;
pub mod path;
pub mod stream;

pub use error::{MpwError, Result};
pub use path::{
    stripe, Mpw, PathConfig, PathId, RelayStats, Role, Setting, StripePlan, TransferHandle,
};
pub use stream::{
    connect_streams, listen_accept_streams, pacing_delay, resolve_host, Endpoint, Stream,
    StreamHandshake, StreamListener, StreamStats, WindowGrant, MAX_STREAMS,
};
