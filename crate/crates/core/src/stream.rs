//! Individual TCP streams: the handshake that binds a connection to a path,
//! chunked and paced sending, exact-length receiving and socket options.
//!
//! Every stream of a path connects to the same listening port. The first
//! thirteen bytes on a fresh connection identify it:
//!
//! ```text
//! "MPWP" | version (0x01) | path_id (u32 BE) | stream_index (u16 BE) | stream_count (u16 BE)
//! ```
//!
//! Everything after the handshake is raw payload.

use std::fmt;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use socket2::{Domain, SockRef, Socket, Type};

use crate::error::{MpwError, Result};

pub const MAX_STREAMS: usize = 256;
pub const HANDSHAKE_MAGIC: [u8; 4] = *b"MPWP";
pub const PROTOCOL_VERSION: u8 = 0x01;
pub const HANDSHAKE_LEN: usize = 13;

const LISTEN_BACKLOG: i32 = 1024;
const HANDSHAKE_READ_LIMIT: Duration = Duration::from_secs(2);
const ACCEPT_POLL: Duration = Duration::from_millis(1);

/// Resolves `name` to its first IPv4 address.
///
/// Dotted-quad input is returned unchanged without touching the resolver.
pub fn resolve_host(name: &str) -> Result<Ipv4Addr> {
    if let Ok(addr) = name.parse::<Ipv4Addr>() {
        return Ok(addr);
    }
    if name.is_empty() {
        return Err(MpwError::UnresolvableHost(name.to_owned()));
    }
    let addrs = (name, 0u16)
        .to_socket_addrs()
        .map_err(|_| MpwError::UnresolvableHost(name.to_owned()))?;
    addrs
        .filter_map(|a| match a {
            SocketAddr::V4(v4) => Some(*v4.ip()),
            SocketAddr::V6(_) => None,
        })
        .next()
        .ok_or_else(|| MpwError::UnresolvableHost(name.to_owned()))
}

/// A `host:port` pair naming one side of a path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Endpoint {
    host: String,
    port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Self> {
        let host = host.into();
        if host.is_empty() {
            return Err(MpwError::InvalidEndpoint(format!(":{port}")));
        }
        if port == 0 {
            return Err(MpwError::InvalidEndpoint(format!("{host}:0")));
        }
        Ok(Endpoint { host, port })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn socket_addr(&self) -> Result<SocketAddr> {
        Ok(SocketAddr::from((resolve_host(&self.host)?, self.port)))
    }
}

impl From<SocketAddr> for Endpoint {
    fn from(addr: SocketAddr) -> Self {
        Endpoint {
            host: addr.ip().to_string(),
            port: addr.port(),
        }
    }
}

impl FromStr for Endpoint {
    type Err = MpwError;

    fn from_str(s: &str) -> Result<Self> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| MpwError::InvalidEndpoint(s.to_owned()))?;
        let port = port
            .parse::<u16>()
            .map_err(|_| MpwError::InvalidEndpoint(s.to_owned()))?;
        Endpoint::new(host, port).map_err(|_| MpwError::InvalidEndpoint(s.to_owned()))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

/// Identity of one stream within a path, sent by the connecting side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamHandshake {
    pub path_id: u32,
    pub stream_index: u16,
    pub stream_count: u16,
}

impl StreamHandshake {
    pub fn new(path_id: u32, stream_index: u16, stream_count: u16) -> Result<Self> {
        let hs = StreamHandshake {
            path_id,
            stream_index,
            stream_count,
        };
        hs.validate()?;
        Ok(hs)
    }

    fn validate(&self) -> Result<()> {
        if self.stream_count == 0 || usize::from(self.stream_count) > MAX_STREAMS {
            return Err(MpwError::Protocol(format!(
                "stream count {} outside 1..={MAX_STREAMS}",
                self.stream_count
            )));
        }
        if self.stream_index >= self.stream_count {
            return Err(MpwError::Protocol(format!(
                "stream index {} not below count {}",
                self.stream_index, self.stream_count
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> [u8; HANDSHAKE_LEN] {
        let mut out = [0u8; HANDSHAKE_LEN];
        out[..4].copy_from_slice(&HANDSHAKE_MAGIC);
        out[4] = PROTOCOL_VERSION;
        out[5..9].copy_from_slice(&self.path_id.to_be_bytes());
        out[9..11].copy_from_slice(&self.stream_index.to_be_bytes());
        out[11..13].copy_from_slice(&self.stream_count.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != HANDSHAKE_LEN {
            return Err(MpwError::Protocol(format!(
                "handshake must be {HANDSHAKE_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if bytes[..4] != HANDSHAKE_MAGIC {
            return Err(MpwError::Protocol("bad handshake magic".into()));
        }
        if bytes[4] != PROTOCOL_VERSION {
            return Err(MpwError::Protocol(format!(
                "unsupported protocol version {:#04x}",
                bytes[4]
            )));
        }
        let hs = StreamHandshake {
            path_id: u32::from_be_bytes(bytes[5..9].try_into().unwrap()),
            stream_index: u16::from_be_bytes(bytes[9..11].try_into().unwrap()),
            stream_count: u16::from_be_bytes(bytes[11..13].try_into().unwrap()),
        };
        hs.validate()?;
        Ok(hs)
    }
}

/// Time it takes to put `bytes` on the wire at `rate` bytes per second.
///
/// A zero rate means "unpaced" and yields a zero delay; callers normally skip
/// pacing entirely in that case.
pub fn pacing_delay(bytes: u64, rate: u64) -> Duration {
    if rate == 0 || bytes == 0 {
        return Duration::ZERO;
    }
    let nanos = u128::from(bytes) * 1_000_000_000 / u128::from(rate);
    Duration::from_nanos(u64::try_from(nanos).unwrap_or(u64::MAX))
}

/// Socket buffer sizes the OS actually granted for a window request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowGrant {
    pub requested: usize,
    pub send_buffer: usize,
    pub recv_buffer: usize,
    /// Set when the OS rejected the option; the stream remains usable.
    pub warning: Option<String>,
}

#[derive(Debug, Default)]
struct Counters {
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
    write_calls: AtomicU64,
    largest_write: AtomicU64,
}

/// Snapshot of a stream's traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Number of chunk-sized send calls issued.
    pub write_calls: u64,
    pub largest_write: u64,
}

/// One TCP connection of a path.
///
/// All I/O goes through `&self`, so one sender and one receiver may use the
/// stream from different threads at the same time.
#[derive(Debug)]
pub struct Stream {
    handshake: StreamHandshake,
    socket: TcpStream,
    pacing_rate: AtomicU64,
    window: Mutex<Option<WindowGrant>>,
    closed: AtomicBool,
    counters: Counters,
}

impl Stream {
    fn new(socket: TcpStream, handshake: StreamHandshake) -> Result<Self> {
        socket.set_nodelay(true)?;
        socket.set_read_timeout(None)?;
        socket.set_write_timeout(None)?;
        Ok(Stream {
            handshake,
            socket,
            pacing_rate: AtomicU64::new(0),
            window: Mutex::new(None),
            closed: AtomicBool::new(false),
            counters: Counters::default(),
        })
    }

    pub fn handshake(&self) -> StreamHandshake {
        self.handshake
    }

    pub fn index(&self) -> usize {
        usize::from(self.handshake.stream_index)
    }

    pub fn peer_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.peer_addr()?)
    }

    pub fn pacing_rate(&self) -> Option<u64> {
        match self.pacing_rate.load(Ordering::Relaxed) {
            0 => None,
            r => Some(r),
        }
    }

    pub fn set_pacing_rate(&self, rate: Option<u64>) {
        self.pacing_rate.store(rate.unwrap_or(0), Ordering::Relaxed);
    }

    pub fn window(&self) -> Option<WindowGrant> {
        self.window.lock().unwrap().clone()
    }

    pub fn stats(&self) -> StreamStats {
        let c = &self.counters;
        StreamStats {
            bytes_sent: c.bytes_sent.load(Ordering::Relaxed),
            bytes_received: c.bytes_received.load(Ordering::Relaxed),
            write_calls: c.write_calls.load(Ordering::Relaxed),
            largest_write: c.largest_write.load(Ordering::Relaxed),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    /// Shuts the connection down in both directions. Blocked readers and
    /// writers on other threads wake up with an error or end-of-stream.
    pub fn close(&self) {
        if !self.closed.swap(true, Ordering::AcqRel) {
            let _ = self.socket.shutdown(Shutdown::Both);
        }
    }

    /// Requests `window` bytes for both socket buffers and records what the
    /// OS granted. Clamping by the OS is not an error.
    pub fn apply_window(&self, window: usize) -> Result<WindowGrant> {
        if window == 0 {
            return Err(MpwError::OutOfRange {
                what: "window",
                value: 0,
            });
        }
        if self.is_closed() {
            return Err(MpwError::StreamClosed);
        }
        let sock = SockRef::from(&self.socket);
        let mut warning = None;
        if let Err(e) = sock.set_send_buffer_size(window) {
            warning = Some(format!("SO_SNDBUF: {e}"));
        }
        if let Err(e) = sock.set_recv_buffer_size(window) {
            warning = Some(format!("SO_RCVBUF: {e}"));
        }
        if let Some(w) = &warning {
            warn!(
                "stream {}: window request of {window} bytes: {w}",
                self.index()
            );
        }
        let grant = WindowGrant {
            requested: window,
            send_buffer: sock.send_buffer_size().unwrap_or(0),
            recv_buffer: sock.recv_buffer_size().unwrap_or(0),
            warning,
        };
        debug!("stream {}: window {:?}", self.index(), grant);
        *self.window.lock().unwrap() = Some(grant.clone());
        Ok(grant)
    }

    /// Writes all of `data` in slices of at most `chunk_size` bytes, honoring
    /// the stream's pacing rate. Returns the number of bytes written.
    pub fn send_chunked(&self, data: &[u8], chunk_size: usize) -> Result<u64> {
        if self.is_closed() {
            return Err(MpwError::StreamClosed);
        }
        let counters = &self.counters;
        send_chunked_to(
            &mut &self.socket,
            data,
            chunk_size,
            self.pacing_rate(),
            |n| {
                counters.write_calls.fetch_add(1, Ordering::Relaxed);
                counters
                    .largest_write
                    .fetch_max(n as u64, Ordering::Relaxed);
                counters.bytes_sent.fetch_add(n as u64, Ordering::Relaxed);
            },
        )
    }

    /// Fills `buf` completely from the stream.
    pub fn recv_exact(&self, buf: &mut [u8]) -> Result<()> {
        let got = recv_exact_from(&mut &self.socket, buf);
        let n = match &got {
            Ok(()) => buf.len() as u64,
            Err(MpwError::Truncated { received, .. }) => *received,
            Err(MpwError::Transport { sent, .. }) => *sent,
            Err(_) => 0,
        };
        self.counters.bytes_received.fetch_add(n, Ordering::Relaxed);
        got
    }

    /// Reads whatever is available (at least one byte unless end-of-stream).
    pub(crate) fn read_some(&self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            match (&self.socket).read(buf) {
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                other => return other,
            }
        }
    }

    pub(crate) fn shutdown_write(&self) {
        let _ = self.socket.shutdown(Shutdown::Write);
    }

    pub(crate) fn write_all_raw(&self, buf: &[u8]) -> io::Result<()> {
        (&self.socket).write_all(buf)
    }
}

impl Drop for Stream {
    fn drop(&mut self) {
        self.close();
    }
}

/// Largest burst a paced stream writes between sleeps.
pub const PACING_SLICE: usize = 64 * 1024;

/// Chunked, optionally paced writer behind [`Stream::send_chunked`].
///
/// With a pacing rate, chunks are written in slices of at most
/// [`PACING_SLICE`] bytes, and the writer sleeps after each slice until the
/// elapsed time since the first write covers all bytes sent so far at `rate`.
pub fn send_chunked_to<W: Write>(
    writer: &mut W,
    data: &[u8],
    chunk_size: usize,
    pacing_rate: Option<u64>,
    mut on_write: impl FnMut(usize),
) -> Result<u64> {
    if chunk_size == 0 {
        return Err(MpwError::OutOfRange {
            what: "chunk_size",
            value: 0,
        });
    }
    let rate = pacing_rate.filter(|&r| r > 0);
    let unit = if rate.is_some() {
        chunk_size.min(PACING_SLICE)
    } else {
        chunk_size
    };
    let start = Instant::now();
    let mut sent = 0u64;
    for chunk in data.chunks(unit) {
        write_all_counting(writer, chunk, &mut sent)?;
        on_write(chunk.len());
        if let Some(rate) = rate {
            let due = start + pacing_delay(sent, rate);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }
    Ok(sent)
}

fn write_all_counting<W: Write>(writer: &mut W, mut buf: &[u8], sent: &mut u64) -> Result<()> {
    while !buf.is_empty() {
        match writer.write(buf) {
            Ok(0) => {
                return Err(MpwError::Transport {
                    sent: *sent,
                    source: io::Error::new(ErrorKind::WriteZero, "peer closed the stream"),
                })
            }
            Ok(n) => {
                *sent += n as u64;
                buf = &buf[n..];
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(MpwError::Transport {
                    sent: *sent,
                    source: e,
                })
            }
        }
    }
    Ok(())
}

/// Reads exactly `buf.len()` bytes from `reader`.
pub fn recv_exact_from<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<()> {
    let expected = buf.len() as u64;
    let mut filled = 0usize;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(MpwError::Truncated {
                    received: filled as u64,
                    expected,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(MpwError::Transport {
                    sent: filled as u64,
                    source: e,
                })
            }
        }
    }
    Ok(())
}

fn check_count(count: usize) -> Result<u16> {
    if count == 0 || count > MAX_STREAMS {
        return Err(MpwError::OutOfRange {
            what: "stream count",
            value: count as u64,
        });
    }
    Ok(count as u16)
}

/// Listening socket that assembles incoming streams into paths.
#[derive(Debug)]
pub struct StreamListener {
    inner: TcpListener,
}

impl StreamListener {
    /// Binds a listener; port 0 picks an ephemeral port.
    pub fn bind(addr: SocketAddr) -> Result<Self> {
        let socket = Socket::new(Domain::for_address(addr), Type::STREAM, None)?;
        socket.set_reuse_address(true)?;
        socket.bind(&addr.into())?;
        socket.listen(LISTEN_BACKLOG)?;
        let inner: TcpListener = socket.into();
        inner.set_nonblocking(true)?;
        Ok(StreamListener { inner })
    }

    pub fn bind_endpoint(endpoint: &Endpoint) -> Result<Self> {
        Self::bind(endpoint.socket_addr()?)
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.inner.local_addr()?)
    }

    /// Accepts connections until `count` streams of one path have arrived.
    ///
    /// With `expected_path` unset, the first valid handshake fixes the path
    /// id. Connections with a bad handshake, a foreign path id or a different
    /// stream count are dropped and do not count.
    pub fn accept_streams(
        &self,
        expected_path: Option<u32>,
        count: usize,
        timeout: Option<Duration>,
    ) -> Result<Vec<Stream>> {
        self.accept_streams_after(expected_path, count, timeout, timeout)
    }

    /// Like [`accept_streams`](Self::accept_streams) but with a separate
    /// deadline for the first valid stream. Returns `Timeout` without side
    /// effects when nobody shows up within `first_wait`.
    pub fn accept_streams_after(
        &self,
        expected_path: Option<u32>,
        count: usize,
        first_wait: Option<Duration>,
        timeout: Option<Duration>,
    ) -> Result<Vec<Stream>> {
        let count16 = check_count(count)?;
        let started = Instant::now();
        let mut deadline = first_wait.map(|t| started + t);
        let mut path_id = expected_path;
        let mut slots: Vec<Option<Stream>> = (0..count).map(|_| None).collect();
        let mut filled = 0usize;

        while filled < count {
            let now = Instant::now();
            if deadline.is_some_and(|d| now >= d) {
                return Err(MpwError::Timeout {
                    what: format!("{} of {count} streams", count - filled),
                    elapsed: now - started,
                });
            }
            let (socket, peer) = match self.inner.accept() {
                Ok(pair) => pair,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    thread::sleep(ACCEPT_POLL);
                    continue;
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            let limit = deadline
                .map(|d| d.saturating_duration_since(Instant::now()))
                .unwrap_or(HANDSHAKE_READ_LIMIT)
                .clamp(Duration::from_millis(10), HANDSHAKE_READ_LIMIT);
            let hs = match read_handshake(&socket, limit) {
                Ok(hs) => hs,
                Err(e) => {
                    debug!("dropping connection from {peer}: {e}");
                    continue;
                }
            };
            if path_id.is_some_and(|p| p != hs.path_id) || hs.stream_count != count16 {
                debug!(
                    "dropping connection from {peer}: path {} with {} streams not expected",
                    hs.path_id, hs.stream_count
                );
                continue;
            }
            let slot = &mut slots[usize::from(hs.stream_index)];
            if slot.is_some() {
                return Err(MpwError::Protocol(format!(
                    "duplicate stream index {} on path {}",
                    hs.stream_index, hs.path_id
                )));
            }
            *slot = Some(Stream::new(socket, hs)?);
            filled += 1;
            if path_id.is_none() || filled == 1 {
                path_id = Some(hs.path_id);
                deadline = timeout.map(|t| Instant::now() + t);
            }
        }
        Ok(slots.into_iter().map(|s| s.unwrap()).collect())
    }
}

fn read_handshake(socket: &TcpStream, limit: Duration) -> Result<StreamHandshake> {
    socket.set_nonblocking(false)?;
    socket.set_read_timeout(Some(limit))?;
    let mut buf = [0u8; HANDSHAKE_LEN];
    recv_exact_from(&mut &*socket, &mut buf)?;
    StreamHandshake::decode(&buf)
}

/// Binds `bind` and waits for one path's worth of streams.
pub fn listen_accept_streams(
    bind: &Endpoint,
    expected_path: Option<u32>,
    expected_count: usize,
    timeout: Option<Duration>,
) -> Result<Vec<Stream>> {
    StreamListener::bind_endpoint(bind)?.accept_streams(expected_path, expected_count, timeout)
}

/// Opens `count` connections to `target` and sends each its handshake.
///
/// On any failure every socket opened so far is closed.
pub fn connect_streams(
    target: &Endpoint,
    path_id: u32,
    count: usize,
    timeout: Duration,
) -> Result<Vec<Stream>> {
    let count16 = check_count(count)?;
    let addr = target.socket_addr()?;
    let deadline = Instant::now() + timeout;
    let mut streams = Vec::with_capacity(count);
    for index in 0..count16 {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Err(MpwError::Timeout {
                what: format!("connecting stream {index} to {target}"),
                elapsed: timeout,
            });
        }
        let socket =
            TcpStream::connect_timeout(&addr, remaining).map_err(|source| MpwError::Connect {
                target: target.to_string(),
                source,
            })?;
        let hs = StreamHandshake::new(path_id, index, count16)?;
        (&socket)
            .write_all(&hs.encode())
            .map_err(|source| MpwError::Connect {
                target: target.to_string(),
                source,
            })?;
        streams.push(Stream::new(socket, hs)?);
    }
    Ok(streams)
}
