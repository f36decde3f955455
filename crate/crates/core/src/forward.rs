//! User-space path forwarding.
//!
//! Each rule listens on one endpoint, accepts a whole path there, opens a
//! path with the same stream count to its target and relays the two until
//! either side closes. Then it goes back to accepting. Rules run
//! independently of one another; a failing session only affects its own
//! rule, and only until the next accept.
//!
//! Rule files hold one rule per line:
//!
//! ```text
//! # listen            target             streams
//! 0.0.0.0:6000        compute-17:6000    32
//! ```

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use log::{info, warn};

use crate::error::{MpwError, Result};
use crate::path::{Mpw, PathConfig, Role};
use crate::stream::{connect_streams, Endpoint, StreamListener, MAX_STREAMS};

const ACCEPT_POLL: Duration = Duration::from_millis(200);
const ASSEMBLE_TIMEOUT: Duration = Duration::from_secs(30);
const TARGET_CONNECT_TIMEOUT: Duration = Duration::from_secs(10);
const STOP_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardRule {
    pub listen: Endpoint,
    pub target: Endpoint,
    pub stream_count: usize,
}

impl ForwardRule {
    pub fn new(listen: Endpoint, target: Endpoint, stream_count: usize) -> Result<Self> {
        if listen == target {
            return Err(MpwError::Precondition(format!(
                "rule forwards {listen} to itself"
            )));
        }
        if stream_count == 0 || stream_count > MAX_STREAMS {
            return Err(MpwError::OutOfRange {
                what: "stream count",
                value: stream_count as u64,
            });
        }
        Ok(ForwardRule {
            listen,
            target,
            stream_count,
        })
    }
}

/// Parses a rule file: `listen_host:port target_host:port streams` per line,
/// `#` starts a comment.
pub fn parse_rules(text: &str) -> Result<Vec<ForwardRule>> {
    let mut rules = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad =
            |why: &str| MpwError::Precondition(format!("line {}: {why}: {raw:?}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [listen, target, streams] = fields[..] else {
            return Err(bad("expected `listen target streams`"));
        };
        let listen: Endpoint = listen.parse().map_err(|_| bad("bad listen endpoint"))?;
        let target: Endpoint = target.parse().map_err(|_| bad("bad target endpoint"))?;
        let streams: usize = streams.parse().map_err(|_| bad("bad stream count"))?;
        rules.push(ForwardRule::new(listen, target, streams).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(rules)
}

/// A set of bound rules, ready to run.
#[derive(Debug)]
pub struct Forwarder {
    rules: Vec<(StreamListener, Endpoint, usize)>,
}

impl Forwarder {
    /// Binds every rule's listen endpoint; fails if any port is taken.
    pub fn bind(rules: &[ForwardRule]) -> Result<Self> {
        let rules = rules
            .iter()
            .map(|r| {
                let l = StreamListener::bind_endpoint(&r.listen)?;
                Ok((l, r.target.clone(), r.stream_count))
            })
            .collect::<Result<_>>()?;
        Ok(Forwarder { rules })
    }

    /// Adds a rule on an already-bound listener.
    pub fn with_listener(
        mut self,
        listener: StreamListener,
        target: Endpoint,
        streams: usize,
    ) -> Self {
        self.rules.push((listener, target, streams));
        self
    }

    pub fn empty() -> Self {
        Forwarder { rules: Vec::new() }
    }

    pub fn local_addrs(&self) -> Vec<SocketAddr> {
        self.rules
            .iter()
            .filter_map(|(l, _, _)| l.local_addr().ok())
            .collect()
    }

    /// Serves all rules until `stop` is set. Sessions still relaying when
    /// `stop` is raised are torn down.
    pub fn run(&self, stop: &AtomicBool) {
        thread::scope(|s| {
            for (listener, target, streams) in &self.rules {
                s.spawn(move || serve_rule(listener, target, *streams, stop));
            }
        });
    }
}

/// Binds `rules` and serves them until `stop` is set.
pub fn run_forwarder(rules: &[ForwardRule], stop: &AtomicBool) -> Result<()> {
    Forwarder::bind(rules)?.run(stop);
    Ok(())
}

fn serve_rule(listener: &StreamListener, target: &Endpoint, streams: usize, stop: &AtomicBool) {
    let mpw = Mpw::new();
    let local = listener
        .local_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    info!("forwarding {local} -> {target} ({streams} streams)");
    while !stop.load(Ordering::Relaxed) {
        let incoming = match listener.accept_streams_after(
            None,
            streams,
            Some(ACCEPT_POLL),
            Some(ASSEMBLE_TIMEOUT),
        ) {
            Ok(s) => s,
            Err(MpwError::Timeout { .. }) => continue,
            Err(e) => {
                warn!("{local}: dropping incoming path: {e}");
                continue;
            }
        };
        let wire_id = incoming[0].handshake().path_id;
        let outgoing = match connect_streams(target, wire_id, streams, TARGET_CONNECT_TIMEOUT) {
            Ok(s) => s,
            Err(e) => {
                warn!("{local}: target {target} unreachable, closing incoming path: {e}");
                continue;
            }
        };
        let config = PathConfig::with_streams(streams);
        let (a, b) = match (
            mpw.adopt_streams(Role::Server, incoming, config.clone()),
            mpw.adopt_streams(Role::Client, outgoing, config),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                mpw.finalize();
                continue;
            }
        };
        info!("{local}: relaying path {wire_id:#010x} to {target}");
        let done = AtomicBool::new(false);
        let outcome = thread::scope(|s| {
            s.spawn(|| {
                while !done.load(Ordering::Relaxed) {
                    if stop.load(Ordering::Relaxed) {
                        let _ = mpw.destroy_path(a);
                        let _ = mpw.destroy_path(b);
                        break;
                    }
                    thread::sleep(STOP_POLL);
                }
            });
            let outcome = mpw.relay(a, b);
            done.store(true, Ordering::Relaxed);
            outcome
        });
        match outcome {
            Ok(stats) => info!(
                "{local}: session closed after {} bytes forward, {} back",
                stats.a_to_b, stats.b_to_a
            ),
            Err(e) => warn!("{local}: session ended with error: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rules_and_comments() {
        let text = "\
# listen target streams
127.0.0.1:6000 10.0.0.2:7000 32   # trailing comment

localhost:6001 example.org:6001 1
";
        let rules = parse_rules(text).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].listen.to_string(), "127.0.0.1:6000");
        assert_eq!(rules[0].target.to_string(), "10.0.0.2:7000");
        assert_eq!(rules[0].stream_count, 32);
        assert_eq!(rules[1].stream_count, 1);
        assert!(parse_rules("").unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_rules() {
        for bad in [
            "127.0.0.1:6000 10.0.0.2:7000",
            "127.0.0.1:6000 10.0.0.2:7000 0",
            "127.0.0.1:6000 10.0.0.2:7000 257",
            "127.0.0.1 10.0.0.2:7000 4",
            "127.0.0.1:6000 127.0.0.1:6000 4",
            "a:1 b:2 3 extra",
        ] {
            let err = parse_rules(bad).unwrap_err();
            assert!(err.to_string().contains("line 1"), "{bad}: {err}");
        }
    }
}
