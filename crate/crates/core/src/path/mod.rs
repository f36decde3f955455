//! Paths: groups of 1 to 256 TCP streams between two programs, and the
//! message-passing operations that run over them.
//!
//! An [`Mpw`] instance owns a table of open paths addressed by [`PathId`].
//! Fixed-size operations ([`Mpw::send`], [`Mpw::recv`], [`Mpw::send_recv`],
//! [`Mpw::cycle`]) put nothing but payload on the wire, so both ends must
//! agree on message sizes. The dynamic variants ([`Mpw::dsend_recv`],
//! [`Mpw::dcycle`]) prefix each direction with an 8-byte big-endian length on
//! stream 0.

mod config;
mod handle;
mod inner;
mod relay;
mod stripe;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

pub use config::{
    PathConfig, Setting, DEFAULT_CHUNK_SIZE, DEFAULT_MAX_DYNAMIC_LEN, DEFAULT_PROBE_BYTES, GIB,
    KIB, MIB,
};
pub use handle::TransferHandle;
pub use inner::{BARRIER_TOKEN, LENGTH_PREFIX_LEN};
pub use relay::RelayStats;
pub use stripe::{stripe, StripePlan};

use crate::error::{MpwError, Result};
use crate::stream::{connect_streams, Endpoint, Stream, StreamListener, StreamStats, WindowGrant};
use handle::HandleTable;
use inner::{run_all, PathInner};

static NEXT_PATH_ID: AtomicU32 = AtomicU32::new(1);

const CONNECT_RETRY: Duration = Duration::from_millis(50);

/// Process-unique path identifier. Ids are never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathId(u32);

impl PathId {
    fn next() -> Self {
        PathId(NEXT_PATH_ID.fetch_add(1, Ordering::Relaxed))
    }

    pub fn as_u32(self) -> u32 {
        self.0
    }

    pub fn from_u32(raw: u32) -> Self {
        PathId(raw)
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Which side of the connection setup a path endpoint played.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Server,
    Client,
}

/// A message-passing context: the open paths plus non-blocking transfers.
///
/// Creating an `Mpw` initializes the library; [`Mpw::finalize`] closes all
/// paths and leaves the context ready for reuse.
#[derive(Debug, Default)]
pub struct Mpw {
    paths: RwLock<HashMap<PathId, Arc<PathInner>>>,
    handles: HandleTable,
}

impl Mpw {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn path(&self, id: PathId) -> Result<Arc<PathInner>> {
        let path = self
            .paths
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(MpwError::NoSuchPath(id))?;
        path.check_usable()?;
        Ok(path)
    }

    /// Opens a path of `streams` streams.
    ///
    /// As a server, binds `remote` and waits for the peer's streams. As a
    /// client, connects to `remote`, retrying until the peer is listening or
    /// `config.connect_timeout` runs out. When `config.autotune` is set, the
    /// path is probed before it is returned; both ends must agree on that.
    pub fn create_path(
        &self,
        remote: &Endpoint,
        streams: usize,
        role: Role,
        config: PathConfig,
    ) -> Result<PathId> {
        let config = PathConfig {
            stream_count: streams,
            ..config
        };
        config.validate()?;
        match role {
            Role::Server => {
                let listener = StreamListener::bind_endpoint(remote)?;
                self.accept_path(&listener, config)
            }
            Role::Client => {
                let wire_id = rand::random::<u32>();
                let started = Instant::now();
                let streams = loop {
                    let left = config.connect_timeout.saturating_sub(started.elapsed());
                    match connect_streams(remote, wire_id, streams, left) {
                        Ok(s) => break s,
                        Err(e @ MpwError::Connect { .. })
                            if started.elapsed() + CONNECT_RETRY < config.connect_timeout =>
                        {
                            debug!("connect to {remote} failed ({e}), retrying");
                            thread::sleep(CONNECT_RETRY);
                        }
                        Err(e) => return Err(e),
                    }
                };
                self.open(Role::Client, wire_id, streams, config)
            }
        }
    }

    /// Server side of [`create_path`](Self::create_path) on an existing
    /// listener; `config.stream_count` streams are expected.
    pub fn accept_path(&self, listener: &StreamListener, config: PathConfig) -> Result<PathId> {
        config.validate()?;
        let streams = listener.accept_streams(None, config.stream_count, config.accept_timeout)?;
        let wire_id = streams[0].handshake().path_id;
        self.open(Role::Server, wire_id, streams, config)
    }

    /// Wraps already-connected streams into a path without probing.
    pub fn adopt_streams(
        &self,
        role: Role,
        streams: Vec<Stream>,
        config: PathConfig,
    ) -> Result<PathId> {
        let config = PathConfig {
            stream_count: streams.len(),
            autotune: false,
            ..config
        };
        config.validate()?;
        let wire_id = streams[0].handshake().path_id;
        let id = self.register(role, wire_id, streams, config)?;
        Ok(id)
    }

    fn open(
        &self,
        role: Role,
        wire_id: u32,
        streams: Vec<Stream>,
        config: PathConfig,
    ) -> Result<PathId> {
        let autotune = config.autotune;
        let probe_bytes = config.probe_bytes;
        let id = self.register(role, wire_id, streams, config)?;
        info!("path {id} open ({role:?}, wire id {wire_id:#010x})");
        if autotune {
            if let Err(e) = crate::autotune::autotune_path(self, id, probe_bytes) {
                let _ = self.destroy_path(id);
                return Err(e);
            }
        }
        Ok(id)
    }

    fn register(
        &self,
        role: Role,
        wire_id: u32,
        streams: Vec<Stream>,
        config: PathConfig,
    ) -> Result<PathId> {
        let window = config.window;
        let id = PathId::next();
        let inner = Arc::new(PathInner::new(id, wire_id, role, streams, config));
        if let Some(w) = window {
            for s in &inner.streams {
                s.apply_window(w)?;
            }
        }
        self.paths.write().unwrap().insert(id, inner);
        Ok(id)
    }

    /// Closes all streams of the path. In-flight non-blocking transfers on
    /// it fail.
    pub fn destroy_path(&self, id: PathId) -> Result<()> {
        let path = self
            .paths
            .write()
            .unwrap()
            .remove(&id)
            .ok_or(MpwError::NoSuchPath(id))?;
        path.close();
        path.release_cache();
        debug!("path {id} destroyed");
        Ok(())
    }

    /// Ids of all open paths, in creation order.
    pub fn path_ids(&self) -> Vec<PathId> {
        let mut ids: Vec<_> = self.paths.read().unwrap().keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn config(&self, id: PathId) -> Result<PathConfig> {
        Ok(self.path(id)?.config.lock().unwrap().clone())
    }

    /// Path id carried in the stream handshakes (shared by both ends).
    pub fn wire_id(&self, id: PathId) -> Result<u32> {
        Ok(self.path(id)?.wire_id)
    }

    pub fn role(&self, id: PathId) -> Result<Role> {
        Ok(self.path(id)?.role)
    }

    pub fn stream_stats(&self, id: PathId) -> Result<Vec<StreamStats>> {
        Ok(self.path(id)?.streams.iter().map(Stream::stats).collect())
    }

    pub fn windows(&self, id: PathId) -> Result<Vec<Option<WindowGrant>>> {
        Ok(self.path(id)?.streams.iter().map(Stream::window).collect())
    }

    /// Size of the path's cached dynamic-receive buffer.
    pub fn cached_capacity(&self, id: PathId) -> Result<usize> {
        Ok(self.path(id)?.cached_capacity())
    }

    /// Sends `data` striped evenly over the path's streams.
    pub fn send(&self, id: PathId, data: &[u8]) -> Result<()> {
        let path = self.path(id)?;
        let _guard = path.begin()?;
        path.send(data)
    }

    /// Receives exactly `expected_len` bytes, merging the stripes.
    pub fn recv(&self, id: PathId, expected_len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; expected_len];
        self.recv_into(id, &mut buf)?;
        Ok(buf)
    }

    pub fn recv_into(&self, id: PathId, buf: &mut [u8]) -> Result<()> {
        let path = self.path(id)?;
        let _guard = path.begin()?;
        path.recv_into(buf)
    }

    /// Sends `out` and receives `expected_in` bytes at the same time.
    pub fn send_recv(&self, id: PathId, out: &[u8], expected_in: usize) -> Result<Vec<u8>> {
        let path = self.path(id)?;
        let _guard = path.begin()?;
        let mut input = vec![0u8; expected_in];
        path.exchange(out, &mut input)?;
        Ok(input)
    }

    /// Exchanges buffers whose sizes the receiving side does not know.
    pub fn dsend_recv(&self, id: PathId, out: &[u8]) -> Result<Vec<u8>> {
        let path = self.path(id)?;
        let _guard = path.begin()?;
        path.dexchange(out)
    }

    /// Returns once both ends have entered the barrier.
    pub fn barrier(&self, id: PathId) -> Result<()> {
        let path = self.path(id)?;
        let _guard = path.begin()?;
        path.barrier()
    }

    fn cycle_paths(
        &self,
        recv_id: PathId,
        send_id: PathId,
    ) -> Result<(Arc<PathInner>, Arc<PathInner>)> {
        if recv_id == send_id {
            return Err(MpwError::Precondition(format!(
                "cycle needs two distinct paths, got {recv_id} twice"
            )));
        }
        let recv_path = self.path(recv_id).map_err(|e| e.on_path(recv_id))?;
        let send_path = self.path(send_id).map_err(|e| e.on_path(send_id))?;
        Ok((recv_path, send_path))
    }

    /// Sends `out` over `send_id` while receiving `expected_in` bytes from
    /// `recv_id`.
    pub fn cycle(
        &self,
        recv_id: PathId,
        send_id: PathId,
        out: &[u8],
        expected_in: usize,
    ) -> Result<Vec<u8>> {
        let (recv_path, send_path) = self.cycle_paths(recv_id, send_id)?;
        let _rg = recv_path.begin().map_err(|e| e.on_path(recv_id))?;
        let _sg = send_path.begin().map_err(|e| e.on_path(send_id))?;
        let mut input = vec![0u8; expected_in];
        let (sent, received) = thread::scope(|s| {
            let sender = s.spawn(|| send_path.send(out));
            let received = recv_path.recv_into(&mut input);
            (sender.join().expect("cycle sender panicked"), received)
        });
        sent.map_err(|e| e.on_path(send_id))?;
        received.map_err(|e| e.on_path(recv_id))?;
        Ok(input)
    }

    /// [`cycle`](Self::cycle) with length-prefixed buffers in both
    /// directions.
    pub fn dcycle(&self, recv_id: PathId, send_id: PathId, out: &[u8]) -> Result<Vec<u8>> {
        let (recv_path, send_path) = self.cycle_paths(recv_id, send_id)?;
        let _rg = recv_path.begin().map_err(|e| e.on_path(recv_id))?;
        let _sg = send_path.begin().map_err(|e| e.on_path(send_id))?;
        let (sent, received) = thread::scope(|s| {
            let sender = s.spawn(|| {
                let tasks = send_path.send_tasks(out, Some(out.len() as u64));
                run_all(tasks, || send_path.fail())
            });
            let received = recv_path.recv_length().and_then(|len| {
                recv_path.with_cached(len, |buf| {
                    recv_path.recv_into(buf)?;
                    Ok(buf.to_vec())
                })
            });
            (sender.join().expect("dcycle sender panicked"), received)
        });
        sent.map_err(|e| e.on_path(send_id))?;
        received.map_err(|e| e.on_path(recv_id))
    }

    /// Forwards all traffic between two paths, stream `i` to stream `i`, until
    /// either side closes. Both paths are destroyed afterwards.
    pub fn relay(&self, a: PathId, b: PathId) -> Result<RelayStats> {
        if a == b {
            return Err(MpwError::Precondition(
                "relay needs two distinct paths".into(),
            ));
        }
        let pa = self.path(a).map_err(|e| e.on_path(a))?;
        let pb = self.path(b).map_err(|e| e.on_path(b))?;
        if pa.streams.len() != pb.streams.len() {
            return Err(MpwError::Precondition(format!(
                "relay needs equal stream counts, got {} and {}",
                pa.streams.len(),
                pb.streams.len()
            )));
        }
        let result = {
            let _ga = pa.begin().map_err(|e| e.on_path(a))?;
            let _gb = pb.begin().map_err(|e| e.on_path(b))?;
            relay::relay(&pa, &pb)
        };
        let _ = self.destroy_path(a);
        let _ = self.destroy_path(b);
        result
    }

    /// Starts a send/receive exchange in the background and returns at once.
    pub fn isend_recv(&self, id: PathId, out: &[u8], expected_in: usize) -> Result<TransferHandle> {
        let path = self.path(id)?;
        let guard = path.begin()?;
        let out = out.to_vec();
        let (handle, slot) = self.handles.insert(id);
        let worker = path.clone();
        let spawned = thread::Builder::new()
            .name(format!("mpw-isend-{}", handle.id()))
            .spawn(move || {
                let mut input = vec![0u8; expected_in];
                let result = worker.exchange(&out, &mut input).map(|_| input);
                // Free the path before waking the waiter, so a call made
                // right after `wait` returns does not see it busy.
                drop(guard);
                slot.complete(result);
            });
        if let Err(e) = spawned {
            self.handles.forget(handle);
            return Err(e.into());
        }
        Ok(handle)
    }

    /// Whether a non-blocking transfer has completed (successfully or not).
    pub fn has_finished(&self, handle: TransferHandle) -> Result<bool> {
        self.handles.has_finished(handle)
    }

    /// Blocks until the transfer completes and returns the received bytes.
    /// The handle is consumed.
    pub fn wait(&self, handle: TransferHandle) -> Result<Vec<u8>> {
        self.handles.wait(handle)
    }

    /// Changes one tunable. Window changes apply to every stream at once.
    pub fn configure(&self, id: PathId, setting: Setting) -> Result<()> {
        setting.validate()?;
        let path = self.path(id)?;
        let mut config = path.config.lock().unwrap();
        match setting {
            Setting::ChunkSize(c) => config.chunk_size = c,
            Setting::PacingRate(r) => {
                config.pacing_rate = r;
                for s in &path.streams {
                    s.set_pacing_rate(r);
                }
            }
            Setting::Window(w) => {
                config.window = Some(w);
                for s in &path.streams {
                    if let Some(warning) = s.apply_window(w)?.warning {
                        warn!("path {id}: {warning}");
                    }
                }
            }
            Setting::AutoTune(on) => config.autotune = on,
        }
        Ok(())
    }

    /// Raw access for modules that drive streams directly.
    pub(crate) fn with_streams<T>(
        &self,
        id: PathId,
        f: impl FnOnce(&[Stream]) -> Result<T>,
    ) -> Result<T> {
        let path = self.path(id)?;
        let _guard = path.begin()?;
        f(&path.streams).inspect_err(|_| path.fail())
    }

    /// Closes every path and drops all cached buffers and handles.
    pub fn finalize(&self) {
        let paths: Vec<_> = self.paths.write().unwrap().drain().collect();
        for (_, p) in paths {
            p.close();
            p.release_cache();
        }
        self.handles.clear();
    }
}

impl Drop for Mpw {
    fn drop(&mut self) {
        self.finalize();
    }
}
