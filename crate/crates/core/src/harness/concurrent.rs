//! Functional checks with both endpoints in one process, over loopback.

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use super::benchmark::test_payload;
use super::report::{ensure, Report};
use crate::path::{Mpw, PathConfig, PathId, Role};
use crate::stream::{Endpoint, StreamListener};

const DEFAULT_LIMIT: Duration = Duration::from_secs(60);

type Check = fn() -> Result<(), String>;

pub fn run_concurrent_tests() -> Report {
    run_concurrent_tests_with_timeout(DEFAULT_LIMIT)
}

/// Runs every check; one that does not finish within `limit` fails.
pub fn run_concurrent_tests_with_timeout(limit: Duration) -> Report {
    let checks: [(&str, Check); 9] = [
        ("send/recv", send_recv_one_way),
        ("send_recv full duplex", send_recv_duplex),
        ("dsend_recv unknown sizes", dsend_recv_sizes),
        ("barrier", barrier),
        ("cycle ring", cycle_ring),
        ("isend_recv/wait", isend_wait),
        ("relay", relay),
        ("autotuned path", autotuned),
        ("peer dies mid-transfer", peer_dies),
    ];
    let mut r = Report::default();
    for (name, check) in checks {
        r.run_bounded(name, limit, check);
    }
    r
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn manual(streams: usize) -> PathConfig {
    PathConfig {
        autotune: false,
        ..PathConfig::with_streams(streams)
    }
}

fn loopback() -> Result<(StreamListener, SocketAddr), String> {
    let l = StreamListener::bind("127.0.0.1:0".parse().unwrap()).map_err(err)?;
    let addr = l.local_addr().map_err(err)?;
    Ok((l, addr))
}

/// A context and its end of a path.
type End = (Mpw, PathId);

/// Opens a path between two fresh contexts; returns (server, client).
fn pair(config: PathConfig) -> Result<(End, End), String> {
    let (listener, addr) = loopback()?;
    connect(&listener, addr, config)
}

fn connect(
    listener: &StreamListener,
    addr: SocketAddr,
    config: PathConfig,
) -> Result<(End, End), String> {
    let (server, client) = (Mpw::new(), Mpw::new());
    let streams = config.stream_count;
    let (s, c) = thread::scope(|scope| {
        let cfg = config.clone();
        let srv = scope.spawn(|| server.accept_path(listener, cfg));
        let c = client.create_path(&Endpoint::from(addr), streams, Role::Client, config);
        (srv.join().expect("accept panicked"), c)
    });
    Ok(((server, s.map_err(err)?), (client, c.map_err(err)?)))
}

fn send_recv_one_way() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(manual(4))?;
    let data = test_payload(MIB_PLUS, 1);
    let got = thread::scope(|s| {
        let h = s.spawn(|| srv.recv(sp, data.len()));
        cli.send(cp, &data).map_err(err)?;
        h.join().unwrap().map_err(err)
    })?;
    ensure!(got == data, "received bytes differ");
    Ok(())
}

const MIB_PLUS: usize = (1 << 20) + 3;

fn send_recv_duplex() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(manual(8))?;
    let a = test_payload(4 << 20, 2);
    let b = test_payload(4 << 20, 3);
    let (at_srv, at_cli) = thread::scope(|s| {
        let h = s.spawn(|| srv.send_recv(sp, &b, a.len()));
        let c = cli.send_recv(cp, &a, b.len());
        (h.join().unwrap(), c)
    });
    ensure!(at_srv.map_err(err)? == a, "server got wrong bytes");
    ensure!(at_cli.map_err(err)? == b, "client got wrong bytes");
    Ok(())
}

fn dsend_recv_sizes() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(manual(3))?;
    for (n_out, n_in) in [(5usize, 12usize), (0, 100_000), (77_777, 0), (0, 0)] {
        let a = test_payload(n_out, 4);
        let b = test_payload(n_in, 5);
        let (at_srv, at_cli) = thread::scope(|s| {
            let h = s.spawn(|| srv.dsend_recv(sp, &b));
            let c = cli.dsend_recv(cp, &a);
            (h.join().unwrap(), c)
        });
        ensure!(
            at_srv.map_err(err)? == a,
            "server got wrong bytes for {n_out}"
        );
        ensure!(
            at_cli.map_err(err)? == b,
            "client got wrong bytes for {n_in}"
        );
    }
    Ok(())
}

fn barrier() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(manual(2))?;
    let skew = Duration::from_millis(50);
    let (early_left, late_entered) = thread::scope(|s| {
        let h = s.spawn(|| {
            srv.barrier(sp)?;
            Ok::<_, crate::MpwError>(Instant::now())
        });
        thread::sleep(skew);
        let entered = Instant::now();
        let _ = cli.barrier(cp);
        (h.join().unwrap(), entered)
    });
    let early_left = early_left.map_err(err)?;
    ensure!(
        early_left >= late_entered,
        "barrier returned before the peer entered"
    );
    Ok(())
}

fn cycle_ring() -> Result<(), String> {
    // Node i receives from node i-1 and sends to node i+1.
    let mpws = [Mpw::new(), Mpw::new(), Mpw::new()];
    let (listeners, addrs): (Vec<_>, Vec<_>) = (0..3)
        .map(|_| loopback())
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .unzip();
    let ids: Vec<(PathId, PathId)> = thread::scope(|s| {
        let handles: Vec<_> = (0..3)
            .map(|i| {
                let (mpw, listener, next) = (&mpws[i], &listeners[i], addrs[(i + 1) % 3]);
                s.spawn(move || {
                    let (from_prev, to_next) = thread::scope(|inner| {
                        let a = inner.spawn(|| mpw.accept_path(listener, manual(2)));
                        let c = mpw.create_path(&Endpoint::from(next), 2, Role::Client, manual(2));
                        (a.join().unwrap(), c)
                    });
                    Ok::<_, crate::MpwError>((from_prev?, to_next?))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect::<Result<_, _>>()
    })
    .map_err(err)?;
    let out = |i: usize| test_payload(10_000 + i, i as u64);
    let fixed: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = (0..3)
            .map(|i| {
                let (mpw, (rx, tx)) = (&mpws[i], ids[i]);
                s.spawn(move || mpw.cycle(rx, tx, &out(i), 10_000 + (i + 2) % 3))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (i, got) in fixed.into_iter().enumerate() {
        ensure!(
            got.map_err(err)? == out((i + 2) % 3),
            "cycle: node {i} got wrong bytes"
        );
    }
    let dyn_out = |i: usize| test_payload(500 * (i + 1), 9);
    let dynamic: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = (0..3)
            .map(|i| {
                let (mpw, (rx, tx)) = (&mpws[i], ids[i]);
                s.spawn(move || mpw.dcycle(rx, tx, &dyn_out(i)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (i, got) in dynamic.into_iter().enumerate() {
        ensure!(
            got.map_err(err)? == dyn_out((i + 2) % 3),
            "dcycle: node {i} got wrong bytes"
        );
    }
    Ok(())
}

fn isend_wait() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(manual(4))?;
    let a = test_payload(3 << 20, 6);
    let b = test_payload(1 << 20, 7);
    let handle = cli.isend_recv(cp, &a, b.len()).map_err(err)?;
    let at_srv = srv.send_recv(sp, &b, a.len()).map_err(err)?;
    let at_cli = cli.wait(handle).map_err(err)?;
    ensure!(
        cli.has_finished(handle).is_err(),
        "handle usable after wait"
    );
    ensure!(
        at_srv == a && at_cli == b,
        "non-blocking exchange corrupted data"
    );
    Ok(())
}

fn relay() -> Result<(), String> {
    // A -> F -> B: F accepts from A, connects to B and relays.
    let (lf, af) = loopback()?;
    let (lb, ab) = loopback()?;
    let (a, f, b) = (Mpw::new(), Mpw::new(), Mpw::new());
    let data = test_payload(2 << 20, 8);
    let reply = test_payload(1000, 9);
    thread::scope(|s| {
        let relay = s.spawn(|| -> Result<(), String> {
            let from_a = f.accept_path(&lf, manual(4)).map_err(err)?;
            let to_b = f
                .create_path(&Endpoint::from(ab), 4, Role::Client, manual(4))
                .map_err(err)?;
            f.relay(from_a, to_b).map_err(err)?;
            Ok(())
        });
        let sink = s.spawn(|| -> Result<Vec<u8>, String> {
            let p = b.accept_path(&lb, manual(4)).map_err(err)?;
            let got = b.dsend_recv(p, &reply).map_err(err)?;
            b.destroy_path(p).map_err(err)?;
            Ok(got)
        });
        let p = a
            .create_path(&Endpoint::from(af), 4, Role::Client, manual(4))
            .map_err(err)?;
        let back = a.dsend_recv(p, &data).map_err(err)?;
        ensure!(back == reply, "reply through relay differs");
        ensure!(
            sink.join().unwrap()? == data,
            "payload through relay differs"
        );
        a.destroy_path(p).map_err(err)?;
        relay.join().unwrap()
    })
}

fn autotuned() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(PathConfig::with_streams(2))?;
    let (sc, cc) = (srv.config(sp).map_err(err)?, cli.config(cp).map_err(err)?);
    ensure!(
        sc.stream_count == 2 && cc.stream_count == 2,
        "stream count changed"
    );
    ensure!(
        crate::autotune::CANDIDATE_CHUNK_SIZES.contains(&cc.chunk_size),
        "chunk {} is not a candidate",
        cc.chunk_size
    );
    let data = test_payload(100_000, 10);
    let got = thread::scope(|s| {
        let h = s.spawn(|| srv.dsend_recv(sp, &[]));
        cli.dsend_recv(cp, &data).map_err(err)?;
        h.join().unwrap().map_err(err)
    })?;
    ensure!(got == data, "autotuned path corrupted data");
    Ok(())
}

fn peer_dies() -> Result<(), String> {
    let ((srv, sp), (cli, cp)) = pair(manual(4))?;
    let outcome = thread::scope(|s| {
        let h = s.spawn(|| srv.recv(sp, 8 << 20));
        cli.send(cp, &test_payload(1000, 11)).map_err(err)?;
        drop(cli);
        Ok::<_, String>(h.join().unwrap())
    })?;
    ensure!(outcome.is_err(), "receive succeeded although the peer died");
    ensure!(srv.recv(sp, 1).is_err(), "failed path still usable");
    Ok(())
}
