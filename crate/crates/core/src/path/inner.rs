use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use log::debug;

use super::config::PathConfig;
use super::stripe::stripe;
use super::{PathId, Role};
use crate::error::{MpwError, Result};
use crate::stream::Stream;

/// Barrier token, "MPWBBAR1".
pub const BARRIER_TOKEN: u64 = 0x4D50_5742_4241_5231;
pub const LENGTH_PREFIX_LEN: usize = 8;

const WORKER_STACK: usize = 256 * 1024;

type Task<'a> = Box<dyn FnOnce() -> Result<()> + Send + 'a>;

#[derive(Debug)]
pub(crate) struct PathInner {
    pub id: PathId,
    pub wire_id: u32,
    pub role: Role,
    pub streams: Vec<Stream>,
    pub config: Mutex<PathConfig>,
    busy: AtomicBool,
    failed: AtomicBool,
    closed: AtomicBool,
    dyn_cache: Mutex<Vec<u8>>,
}

/// Exclusive right to run one transfer on a path.
pub(crate) struct TransferGuard {
    path: Arc<PathInner>,
}

impl Drop for TransferGuard {
    fn drop(&mut self) {
        self.path.busy.store(false, Ordering::Release);
    }
}

impl PathInner {
    pub fn new(
        id: PathId,
        wire_id: u32,
        role: Role,
        streams: Vec<Stream>,
        config: PathConfig,
    ) -> Self {
        for s in &streams {
            s.set_pacing_rate(config.pacing_rate);
        }
        PathInner {
            id,
            wire_id,
            role,
            streams,
            config: Mutex::new(config),
            busy: AtomicBool::new(false),
            failed: AtomicBool::new(false),
            closed: AtomicBool::new(false),
            dyn_cache: Mutex::new(Vec::new()),
        }
    }

    pub fn begin(self: &Arc<Self>) -> Result<TransferGuard> {
        self.check_usable()?;
        if self
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(MpwError::Busy(self.id));
        }
        Ok(TransferGuard { path: self.clone() })
    }

    pub fn check_usable(&self) -> Result<()> {
        if self.closed.load(Ordering::Acquire) {
            return Err(MpwError::NoSuchPath(self.id));
        }
        if self.failed.load(Ordering::Acquire) {
            return Err(MpwError::PathFailed(self.id));
        }
        Ok(())
    }

    pub fn chunk_size(&self) -> usize {
        self.config.lock().unwrap().chunk_size
    }

    pub fn max_dynamic_len(&self) -> u64 {
        self.config.lock().unwrap().max_dynamic_len
    }

    pub fn cached_capacity(&self) -> usize {
        self.dyn_cache.lock().unwrap().len()
    }

    pub fn release_cache(&self) {
        *self.dyn_cache.lock().unwrap() = Vec::new();
    }

    /// Closes every stream; in-flight work on other threads fails promptly.
    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        for s in &self.streams {
            s.close();
        }
    }

    pub fn fail(&self) {
        if !self.failed.swap(true, Ordering::AcqRel) {
            debug!("path {} failed, closing streams", self.id);
        }
        for s in &self.streams {
            s.close();
        }
    }

    /// Runs `tasks` concurrently. The first error marks the path failed and
    /// shuts its streams down so the remaining tasks cannot block forever.
    fn run(&self, tasks: Vec<Task<'_>>) -> Result<()> {
        run_all(tasks, || self.fail())
    }

    fn segments<'b>(&self, data: &'b [u8]) -> Vec<&'b [u8]> {
        stripe(data.len(), self.streams.len())
            .ranges()
            .map(|r| &data[r])
            .collect()
    }

    pub fn send_tasks<'a>(&'a self, data: &'a [u8], prefix: Option<u64>) -> Vec<Task<'a>> {
        let chunk = self.chunk_size();
        self.streams
            .iter()
            .zip(self.segments(data))
            .enumerate()
            .map(|(i, (stream, seg))| {
                Box::new(move || {
                    if i == 0 {
                        if let Some(len) = prefix {
                            stream.send_chunked(&len.to_be_bytes(), LENGTH_PREFIX_LEN)?;
                        }
                    }
                    stream.send_chunked(seg, chunk)?;
                    Ok(())
                }) as Task<'a>
            })
            .collect()
    }

    pub fn recv_tasks<'a>(&'a self, buf: &'a mut [u8]) -> Vec<Task<'a>> {
        let plan = stripe(buf.len(), self.streams.len());
        let mut rest = buf;
        let mut tasks: Vec<Task<'a>> = Vec::with_capacity(self.streams.len());
        for (stream, &len) in self.streams.iter().zip(plan.segment_lengths()) {
            let (seg, tail) = rest.split_at_mut(len);
            rest = tail;
            tasks.push(Box::new(move || stream.recv_exact(seg)));
        }
        tasks
    }

    pub fn send(&self, data: &[u8]) -> Result<()> {
        self.run(self.send_tasks(data, None))
    }

    pub fn recv_into(&self, buf: &mut [u8]) -> Result<()> {
        self.run(self.recv_tasks(buf))
    }

    /// Sends `out` while receiving into `input`, both striped over all
    /// streams at once.
    pub fn exchange(&self, out: &[u8], input: &mut [u8]) -> Result<()> {
        let mut tasks = self.send_tasks(out, None);
        tasks.extend(self.recv_tasks(input));
        self.run(tasks)
    }

    pub fn send_length(&self, len: u64) -> Result<()> {
        self.streams[0]
            .send_chunked(&len.to_be_bytes(), LENGTH_PREFIX_LEN)
            .map(drop)
            .inspect_err(|_| self.fail())
    }

    /// Reads a peer's length prefix from stream 0. An advertisement above
    /// the path's limit closes the path.
    pub fn recv_length(&self) -> Result<usize> {
        let mut raw = [0u8; LENGTH_PREFIX_LEN];
        self.streams[0]
            .recv_exact(&mut raw)
            .inspect_err(|_| self.fail())?;
        let advertised = u64::from_be_bytes(raw);
        let limit = self.max_dynamic_len();
        if advertised > limit {
            self.fail();
            return Err(MpwError::Oversize { advertised, limit });
        }
        Ok(advertised as usize)
    }

    /// Runs `f` with a receive buffer of exactly `len` bytes carved from the
    /// path's cache, growing the cache by doubling when it is too small.
    pub fn with_cached<T>(&self, len: usize, f: impl FnOnce(&mut [u8]) -> Result<T>) -> Result<T> {
        let mut cache = self.dyn_cache.lock().unwrap();
        if cache.len() < len {
            let mut cap = if cache.is_empty() { len } else { cache.len() };
            while cap < len {
                cap = cap.saturating_mul(2);
            }
            cache.resize(cap, 0);
        }
        f(&mut cache[..len])
    }

    /// Dynamic-size exchange: each side announces its outgoing length on
    /// stream 0, then both payloads move striped in full duplex.
    pub fn dexchange(&self, out: &[u8]) -> Result<Vec<u8>> {
        // Eight bytes always fit in the socket buffer, so writing before
        // reading cannot deadlock against a peer doing the same.
        self.send_length(out.len() as u64)?;
        let in_len = self.recv_length()?;
        self.with_cached(in_len, |buf| {
            self.exchange(out, buf)?;
            Ok(buf.to_vec())
        })
    }

    pub fn barrier(&self) -> Result<()> {
        let stream = &self.streams[0];
        let res = stream
            .send_chunked(&BARRIER_TOKEN.to_be_bytes(), LENGTH_PREFIX_LEN)
            .and_then(|_| {
                let mut raw = [0u8; 8];
                stream.recv_exact(&mut raw)?;
                match u64::from_be_bytes(raw) {
                    BARRIER_TOKEN => Ok(()),
                    other => Err(MpwError::Protocol(format!(
                        "expected barrier token, got {other:#018x}"
                    ))),
                }
            });
        res.inspect_err(|_| self.fail())
    }
}

/// Runs tasks on scoped threads (inline when there is only one) and returns
/// the first error. `on_error` fires once, after the first failure.
pub(crate) fn run_all<'a>(mut tasks: Vec<Task<'a>>, on_error: impl Fn() + Sync) -> Result<()> {
    if tasks.len() == 1 {
        let task = tasks.pop().unwrap();
        return task().inspect_err(|_| on_error());
    }
    let first_error: Mutex<Option<MpwError>> = Mutex::new(None);
    thread::scope(|scope| {
        let mut handles = Vec::with_capacity(tasks.len());
        for task in tasks {
            let first_error = &first_error;
            let on_error = &on_error;
            let spawned = thread::Builder::new()
                .stack_size(WORKER_STACK)
                .spawn_scoped(scope, move || {
                    if let Err(e) = task() {
                        let mut slot = first_error.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                            drop(slot);
                            on_error();
                        }
                    }
                });
            match spawned {
                Ok(h) => handles.push(h),
                Err(e) => {
                    let mut slot = first_error.lock().unwrap();
                    if slot.is_none() {
                        *slot = Some(e.into());
                        drop(slot);
                        on_error();
                    }
                    break;
                }
            }
        }
        for h in handles {
            let _ = h.join();
        }
    });
    match first_error.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
