//! Post-connect probing of a path's chunk size.
//!
//! Both ends run the same probe schedule in lockstep: a round-trip
//! measurement on stream 0 followed by one full-duplex exchange of
//! `probe_bytes` per candidate chunk size. Each end picks the candidate with
//! the highest measured throughput (ties go to the smaller chunk). The stream
//! count is never touched, and the window setting is left as it was.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use log::info;

use crate::error::{MpwError, Result};
use crate::path::{Mpw, PathConfig, PathId, Role, Setting, KIB, MIB};

pub const CANDIDATE_CHUNK_SIZES: [usize; 3] = [256 * KIB, MIB, 8 * MIB];
pub const MIN_PROBE_BYTES: usize = MIB;
pub const RTT_SAMPLES: usize = 5;

/// Ping-pong token, "MPWPING1".
const PING_TOKEN: u64 = 0x4D50_5750_494E_4731;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub chunk_size: usize,
    /// Bytes moved in both directions per second of wall time.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub rtt: Duration,
    pub candidates: Vec<CandidateResult>,
    pub chosen: PathConfig,
}

impl ProbeReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rtt_seconds={:.9}", self.rtt.as_secs_f64());
        for c in &self.candidates {
            let _ = writeln!(
                out,
                "candidate.{}.bytes_per_second={:.1}",
                c.chunk_size, c.throughput
            );
        }
        let _ = writeln!(out, "chosen.stream_count={}", self.chosen.stream_count);
        let _ = writeln!(out, "chosen.chunk_size={}", self.chosen.chunk_size);
        let _ = writeln!(
            out,
            "chosen.pacing_rate={}",
            self.chosen
                .pacing_rate
                .map_or_else(|| "off".to_owned(), |r| r.to_string())
        );
        let _ = writeln!(
            out,
            "chosen.window={}",
            self.chosen
                .window
                .map_or_else(|| "default".to_owned(), |w| w.to_string())
        );
        out
    }

    /// Key/value pairs of a rendered report, in order.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                    .ok_or_else(|| MpwError::Protocol(format!("not a key=value line: {l:?}")))
            })
            .collect()
    }

    pub fn best(&self) -> Option<&CandidateResult> {
        self.candidates
            .iter()
            .find(|c| c.chunk_size == self.chosen.chunk_size)
    }
}

/// Median round-trip time of `samples` 8-byte ping-pongs on stream 0.
/// Both ends must call this with the same sample count.
pub fn measure_rtt(mpw: &Mpw, path: PathId, samples: usize) -> Result<Duration> {
    let mut times = ping_times(mpw, path, samples)?;
    times.sort();
    Ok(times[times.len() / 2])
}

/// Individual ping-pong round-trip times, in order. The client pings first,
/// then answers the server's ping.
pub fn ping_times(mpw: &Mpw, path: PathId, samples: usize) -> Result<Vec<Duration>> {
    if samples == 0 {
        return Err(MpwError::OutOfRange {
            what: "rtt samples",
            value: 0,
        });
    }
    let role = mpw.role(path)?;
    mpw.with_streams(path, |streams| {
        let s = &streams[0];
        let ping = PING_TOKEN.to_be_bytes();
        let mut times = Vec::with_capacity(samples);
        let mut echo = [0u8; 8];
        let mut timed_ping = || -> Result<Duration> {
            let t0 = Instant::now();
            s.send_chunked(&ping, 8)?;
            s.recv_exact(&mut echo)?;
            expect_ping(&echo)?;
            Ok(t0.elapsed())
        };
        let answer = |buf: &mut [u8; 8]| -> Result<()> {
            s.recv_exact(buf)?;
            expect_ping(buf)?;
            s.send_chunked(buf, 8)?;
            Ok(())
        };
        let mut incoming = [0u8; 8];
        for _ in 0..samples {
            match role {
                Role::Client => {
                    times.push(timed_ping()?);
                    answer(&mut incoming)?;
                }
                Role::Server => {
                    answer(&mut incoming)?;
                    times.push(timed_ping()?);
                }
            }
        }
        Ok(times)
    })
}

fn expect_ping(buf: &[u8; 8]) -> Result<()> {
    match u64::from_be_bytes(*buf) {
        PING_TOKEN => Ok(()),
        other => Err(MpwError::Protocol(format!(
            "expected ping token, got {other:#018x}"
        ))),
    }
}

/// Picks the best candidate: highest throughput, smaller chunk on ties.
pub fn choose(candidates: &[CandidateResult]) -> Option<&CandidateResult> {
    candidates.iter().fold(None, |best, c| match best {
        None => Some(c),
        Some(b) if c.throughput > b.throughput => Some(c),
        Some(b) if c.throughput == b.throughput && c.chunk_size < b.chunk_size => Some(c),
        keep => keep,
    })
}

/// Probes the path and applies the winning chunk size with pacing off.
///
/// On failure the path's configuration is restored to what it was before.
pub fn autotune_path(mpw: &Mpw, path: PathId, probe_bytes: usize) -> Result<ProbeReport> {
    let before = mpw.config(path)?;
    if !before.autotune {
        return Err(MpwError::Precondition(format!(
            "autotuning is disabled on path {path}"
        )));
    }
    if probe_bytes < MIN_PROBE_BYTES {
        return Err(MpwError::OutOfRange {
            what: "probe_bytes",
            value: probe_bytes as u64,
        });
    }
    match probe(mpw, path, probe_bytes, &before) {
        Ok(report) => {
            info!(
                "path {path}: autotuned chunk size {} (rtt {:?})",
                report.chosen.chunk_size, report.rtt
            );
            Ok(report)
        }
        Err(e) => {
            let _ = mpw.configure(path, Setting::ChunkSize(before.chunk_size));
            let _ = mpw.configure(path, Setting::PacingRate(before.pacing_rate));
            Err(e)
        }
    }
}

fn probe(mpw: &Mpw, path: PathId, probe_bytes: usize, before: &PathConfig) -> Result<ProbeReport> {
    mpw.configure(path, Setting::PacingRate(None))?;
    let rtt = measure_rtt(mpw, path, RTT_SAMPLES)?;
    let payload: Vec<u8> = (0..probe_bytes).map(|i| (i % 251) as u8).collect();
    let mut candidates = Vec::with_capacity(CANDIDATE_CHUNK_SIZES.len());
    for &chunk_size in &CANDIDATE_CHUNK_SIZES {
        mpw.configure(path, Setting::ChunkSize(chunk_size))?;
        let t0 = Instant::now();
        let echo = mpw.send_recv(path, &payload, probe_bytes)?;
        let elapsed = t0.elapsed().as_secs_f64().max(1e-9);
        if echo.len() != probe_bytes {
            return Err(MpwError::Protocol("short probe reply".into()));
        }
        candidates.push(CandidateResult {
            chunk_size,
            throughput: (2 * probe_bytes) as f64 / elapsed,
        });
    }
    let winner = choose(&candidates)
        .expect("candidate set is non-empty")
        .chunk_size;
    mpw.configure(path, Setting::ChunkSize(winner))?;
    let chosen = PathConfig {
        chunk_size: winner,
        pacing_rate: None,
        ..before.clone()
    };
    Ok(ProbeReport {
        rtt,
        candidates,
        chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(chunk_size: usize, throughput: f64) -> CandidateResult {
        CandidateResult {
            chunk_size,
            throughput,
        }
    }

    #[test]
    fn choose_prefers_throughput_then_smaller_chunk() {
        let cands = [c(256 * KIB, 5.0), c(MIB, 9.0), c(8 * MIB, 7.0)];
        assert_eq!(choose(&cands).unwrap().chunk_size, MIB);
        let tie = [c(8 * MIB, 9.0), c(MIB, 9.0), c(256 * KIB, 1.0)];
        assert_eq!(choose(&tie).unwrap().chunk_size, MIB);
        assert!(choose(&[]).is_none());
    }

    #[test]
    fn report_text_is_key_value() {
        let report = ProbeReport {
            rtt: Duration::from_micros(150),
            candidates: vec![c(256 * KIB, 10.0), c(MIB, 20.0)],
            chosen: PathConfig {
                chunk_size: MIB,
                ..PathConfig::default()
            },
        };
        let pairs = ProbeReport::parse_text(&report.to_text()).unwrap();
        assert_eq!(pairs[0], ("rtt_seconds".into(), "0.000150000".into()));
        assert!(pairs.contains(&("chosen.chunk_size".into(), MIB.to_string())));
        assert!(pairs.contains(&("chosen.pacing_rate".into(), "off".into())));
        assert!(pairs.contains(&("candidate.262144.bytes_per_second".into(), "10.0".into())));
        assert!(ProbeReport::parse_text("garbage").is_err());
        assert_eq!(report.best().unwrap().chunk_size, MIB);
    }
}
