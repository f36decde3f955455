//! Two-endpoint throughput and latency benchmark.
//!
//! Both ends are started by hand with the same sizes, stream count and
//! repetition count. For each size the two ends first time `reps` ping-pongs,
//! then move the message `reps` times in each direction, each repetition
//! fenced by barriers. The receiver checks an Adler-32 sum of every
//! repetition against the known test pattern.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::autotune::ping_times;
use crate::error::{MpwError, Result};
use crate::path::{Mpw, PathConfig, PathId, Role, DEFAULT_CHUNK_SIZE, GIB, KIB, MIB};
use crate::stream::Endpoint;

pub const DEFAULT_REPS: usize = 20;
pub const DEFAULT_SIZES: [usize; 2] = [MIB, 64 * MIB];
pub const TSV_HEADER: &str =
    "# size_bytes\tstreams\treps\tdirection\tmean_Bps\tmin_Bps\tmax_Bps\tmean_rtt_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ClientToServer, Direction::ServerToClient];

    fn sender(self) -> Role {
        match self {
            Direction::ClientToServer => Role::Client,
            Direction::ServerToClient => Role::Server,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ClientToServer => "c2s",
            Direction::ServerToClient => "s2c",
        })
    }
}

impl FromStr for Direction {
    type Err = MpwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2s" => Ok(Direction::ClientToServer),
            "s2c" => Ok(Direction::ServerToClient),
            other => Err(MpwError::Protocol(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub message_size: usize,
    pub stream_count: usize,
    pub repetitions: usize,
    pub direction: Direction,
    /// Bytes per second.
    pub mean_throughput: f64,
    pub min_throughput: f64,
    pub max_throughput: f64,
    pub mean_rtt: Duration,
}

impl BenchResult {
    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.9}",
            self.message_size,
            self.stream_count,
            self.repetitions,
            self.direction,
            self.mean_throughput,
            self.min_throughput,
            self.max_throughput,
            self.mean_rtt.as_secs_f64()
        )
    }
}

pub fn render_tsv(results: &[BenchResult]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.to_tsv_row());
        out.push('\n');
    }
    out
}

/// Parses benchmark output; `#` lines and blank lines are skipped.
pub fn parse_tsv(text: &str) -> Result<Vec<BenchResult>> {
    let bad = |line: &str, why: &str| MpwError::Protocol(format!("bad TSV row ({why}): {line:?}"));
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(bad(line, "expected 8 columns"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(line, "not an integer"));
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(line, "not a number"));
            Ok(BenchResult {
                message_size: int(f[0])?,
                stream_count: int(f[1])?,
                repetitions: int(f[2])?,
                direction: f[3].parse()?,
                mean_throughput: real(f[4])?,
                min_throughput: real(f[5])?,
                max_throughput: real(f[6])?,
                mean_rtt: Duration::try_from_secs_f64(real(f[7])?)
                    .map_err(|_| bad(line, "bad rtt"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub streams: usize,
    pub reps: usize,
    pub chunk_size: usize,
    pub pacing_rate: Option<u64>,
    pub window: Option<usize>,
    pub verify: bool,
    pub connect_timeout: Duration,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            sizes: DEFAULT_SIZES.to_vec(),
            streams: 1,
            reps: DEFAULT_REPS,
            chunk_size: DEFAULT_CHUNK_SIZE,
            pacing_rate: None,
            window: None,
            verify: true,
            connect_timeout: Duration::from_secs(30),
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(MpwError::Precondition("no message sizes given".into()));
        }
        if self.sizes.contains(&0) {
            return Err(MpwError::Precondition(
                "message sizes must be positive".into(),
            ));
        }
        if self.reps == 0 {
            return Err(MpwError::OutOfRange {
                what: "repetitions",
                value: 0,
            });
        }
        self.path_config().validate()
    }

    fn path_config(&self) -> PathConfig {
        PathConfig {
            chunk_size: self.chunk_size,
            pacing_rate: self.pacing_rate,
            window: self.window,
            autotune: false,
            connect_timeout: self.connect_timeout,
            ..PathConfig::with_streams(self.streams)
        }
    }
}

/// Opens the benchmark path (binding `peer` as server, connecting to it as
/// client) and runs the schedule.
pub fn run_benchmark(role: Role, peer: &Endpoint, opts: &BenchOptions) -> Result<Vec<BenchResult>> {
    opts.validate()?;
    let mpw = Mpw::new();
    let path = mpw.create_path(peer, opts.streams, role, opts.path_config())?;
    let results = run_benchmark_on(&mpw, path, role, opts);
    let _ = mpw.destroy_path(path);
    results
}

/// Runs the schedule on an open path. Both ends must pass equal options.
pub fn run_benchmark_on(
    mpw: &Mpw,
    path: PathId,
    role: Role,
    opts: &BenchOptions,
) -> Result<Vec<BenchResult>> {
    opts.validate()?;
    let streams = mpw.config(path)?.stream_count;
    let mut results = Vec::with_capacity(opts.sizes.len() * 2);
    for &size in &opts.sizes {
        let pings = ping_times(mpw, path, opts.reps)?;
        let mean_rtt = pings.iter().sum::<Duration>() / pings.len() as u32;
        for dir in Direction::BOTH {
            let seed = size as u64 ^ ((dir as u64) << 60);
            let payload = test_payload(size, seed);
            let expected = adler32(&payload);
            let sending = dir.sender() == role;
            let mut buf = if sending { Vec::new() } else { vec![0u8; size] };
            let mut rates = Vec::with_capacity(opts.reps);
            for rep in 0..opts.reps {
                mpw.barrier(path)?;
                let t0 = Instant::now();
                if sending {
                    mpw.send(path, &payload)?;
                } else {
                    mpw.recv_into(path, &mut buf)?;
                }
                mpw.barrier(path)?;
                let elapsed = t0.elapsed().as_secs_f64().max(1e-9);
                rates.push(size as f64 / elapsed);
                if !sending && opts.verify {
                    let got = adler32(&buf);
                    if got != expected {
                        return Err(MpwError::Protocol(format!(
                            "checksum mismatch: size {size}, {dir}, repetition {rep}: \
                             {got:#010x} != {expected:#010x}"
                        )));
                    }
                    buf.fill(0);
                }
            }
            results.push(BenchResult {
                message_size: size,
                stream_count: streams,
                repetitions: opts.reps,
                direction: dir,
                mean_throughput: rates.iter().sum::<f64>() / rates.len() as f64,
                min_throughput: rates.iter().copied().fold(f64::INFINITY, f64::min),
                max_throughput: rates.iter().copied().fold(0.0, f64::max),
                mean_rtt,
            });
        }
    }
    Ok(results)
}

/// Deterministic pseudo-random bytes (xorshift64).
pub fn test_payload(len: usize, seed: u64) -> Vec<u8> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        out.extend_from_slice(&state.to_le_bytes());
    }
    out.truncate(len);
    out
}

pub fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65_521;
    // Largest block for which the sums cannot overflow u32.
    const BLOCK: usize = 5552;
    let (mut a, mut b) = (1u32, 0u32);
    for block in data.chunks(BLOCK) {
        for &byte in block {
            a += u32::from(byte);
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

/// Parses `4096`, `64K`, `8M`, `1G` (also `KiB`/`KB` forms; all binary).
pub fn parse_size(s: &str) -> Result<usize> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (digits, unit) = t.split_at(split);
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => KIB,
        "m" | "mb" | "mib" => MIB,
        "g" | "gb" | "gib" => GIB,
        _ => return Err(MpwError::Precondition(format!("bad size {s:?}"))),
    };
    digits
        .parse::<usize>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| MpwError::Precondition(format!("bad size {s:?}")))
}

/// Comma-separated list of [`parse_size`] values.
pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_size)
        .collect()
}
