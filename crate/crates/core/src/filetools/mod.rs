//! File tools built on paths: the mpw-cp copier and the DataGather
//! directory gatherer.

mod datagather;
mod frame;
mod manifest;
mod mpwcp;

pub use datagather::{
    datagather_sink, datagather_sync, run_source, CycleStats, GatherSource, SinkStats,
};
pub use frame::{safe_relative, FileFrame};
pub use manifest::{changed_paths, scan_manifest, FileState, Manifest};
pub use mpwcp::{
    mpwcp, serve, shell_quote, write_atomically, CopyOptions, CopyStats, FileSpec, ServeMode,
    DEFAULT_STREAMS, PORT_ANNOUNCE,
};
