mod common;

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{connect_pair, loopback_listener, manual, pattern, sha256};
use mpwide::path::MIB;
use mpwide::{Endpoint, Mpw, MpwError, PathConfig, Role, Setting};

#[test]
fn minimal_path_both_sides_open() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    assert_eq!(a.role(sa).unwrap(), Role::Server);
    assert_eq!(b.role(cb).unwrap(), Role::Client);
    assert_eq!(a.wire_id(sa).unwrap(), b.wire_id(cb).unwrap());
}

#[test]
fn create_path_rejects_zero_streams() {
    let mpw = Mpw::new();
    let ep = Endpoint::new("127.0.0.1", 9).unwrap();
    let err = mpw
        .create_path(&ep, 0, Role::Client, PathConfig::default())
        .unwrap_err();
    assert!(matches!(err, MpwError::OutOfRange { .. }));
    assert!(mpw.path_ids().is_empty());
}

#[test]
fn create_path_by_endpoint_on_both_roles() {
    let (a, b) = (Mpw::new(), Mpw::new());
    // Pick a free port, then release it for the server to bind.
    let port = loopback_listener().1.port();
    let ep = Endpoint::new("127.0.0.1", port).unwrap();
    let (sid, cid) = thread::scope(|s| {
        let server = s.spawn(|| a.create_path(&ep, 32, Role::Server, manual(32)));
        let cid = b.create_path(&ep, 32, Role::Client, manual(32)).unwrap();
        (server.join().unwrap().unwrap(), cid)
    });
    assert_eq!(a.config(sid).unwrap().stream_count, 32);
    let data = pattern(100_000, 1);
    thread::scope(|s| {
        s.spawn(|| b.send(cid, &data).unwrap());
        assert_eq!(a.recv(sid, data.len()).unwrap(), data);
    });
}

#[test]
fn send_recv_large_striped() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(4));
    let data = pattern(64 * MIB, 7);
    let got = thread::scope(|s| {
        s.spawn(|| b.send(cb, &data).unwrap());
        a.recv(sa, data.len()).unwrap()
    });
    assert_eq!(sha256(&got), sha256(&data));
}

#[test]
fn empty_send_and_recv() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(3));
    b.send(cb, &[]).unwrap();
    assert!(a.recv(sa, 0).unwrap().is_empty());
    assert!(a.send_recv(sa, &[], 0).unwrap().is_empty());
}

#[test]
fn operations_on_destroyed_path() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, _cb) = connect_pair(&a, &b, manual(1));
    a.destroy_path(sa).unwrap();
    assert!(matches!(a.send(sa, b"x"), Err(MpwError::NoSuchPath(_))));
    assert!(matches!(a.recv(sa, 1), Err(MpwError::NoSuchPath(_))));
    assert!(matches!(a.destroy_path(sa), Err(MpwError::NoSuchPath(_))));
}

#[test]
fn path_ids_are_never_reused() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (s1, _) = connect_pair(&a, &b, manual(1));
    a.destroy_path(s1).unwrap();
    a.finalize();
    let (s2, _) = connect_pair(&a, &b, manual(1));
    assert!(s2 > s1);
}

#[test]
fn send_recv_full_duplex() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    let (x, y) = (pattern(1024, 1), pattern(1024, 2));
    let (got_a, got_b) = thread::scope(|s| {
        let h = s.spawn(|| b.send_recv(cb, &y, x.len()).unwrap());
        (a.send_recv(sa, &x, y.len()).unwrap(), h.join().unwrap())
    });
    assert_eq!(got_a, y);
    assert_eq!(got_b, x);
}

#[test]
fn send_recv_large_does_not_deadlock() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    let (x, y) = (pattern(16 * MIB, 3), pattern(16 * MIB, 4));
    let (got_a, got_b) = thread::scope(|s| {
        let h = s.spawn(|| b.send_recv(cb, &y, x.len()).unwrap());
        (a.send_recv(sa, &x, y.len()).unwrap(), h.join().unwrap())
    });
    assert_eq!(got_a, y);
    assert_eq!(got_b, x);
}

#[test]
fn short_peer_then_close_is_truncation() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    b.send(cb, &[1u8; 10]).unwrap();
    b.destroy_path(cb).unwrap();
    let err = a.recv(sa, 100).unwrap_err();
    assert!(matches!(err.root(), MpwError::Truncated { .. }), "{err:?}");
    // The failed path refuses further work until destroyed.
    assert!(matches!(a.send(sa, b"x"), Err(MpwError::PathFailed(_))));
    a.destroy_path(sa).unwrap();
}

#[test]
fn dynamic_exchange_of_unknown_sizes() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(3));
    let (x, y) = (pattern(5, 1), pattern(12, 2));
    let (got_a, got_b) = thread::scope(|s| {
        let h = s.spawn(|| b.dsend_recv(cb, &y).unwrap());
        (a.dsend_recv(sa, &x).unwrap(), h.join().unwrap())
    });
    assert_eq!(got_a, y);
    assert_eq!(got_b, x);

    let (e1, e2) = thread::scope(|s| {
        let h = s.spawn(|| b.dsend_recv(cb, &[]).unwrap());
        (a.dsend_recv(sa, &[]).unwrap(), h.join().unwrap())
    });
    assert!(e1.is_empty() && e2.is_empty());
}

#[test]
fn dynamic_cache_grows_by_doubling_and_is_reused() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    let mut caps = Vec::new();
    for len in [100usize, 150, 90, 1000, 10] {
        let msg = pattern(len, len as u64);
        let got = thread::scope(|s| {
            s.spawn(|| b.dsend_recv(cb, &msg).unwrap());
            a.dsend_recv(sa, &[]).unwrap()
        });
        assert_eq!(got, msg);
        caps.push(a.cached_capacity(sa).unwrap());
    }
    assert_eq!(caps, vec![100, 200, 200, 1600, 1600]);
    a.finalize();
    assert!(a.cached_capacity(sa).is_err());
}

#[test]
fn oversize_advertisement_closes_path() {
    let a = Mpw::new();
    let (listener, ep) = loopback_listener();
    // A corrupt peer: advertise 2^62 bytes on stream 0.
    let peer = thread::spawn(move || {
        let streams = mpwide::connect_streams(&ep, 5, 1, Duration::from_secs(5)).unwrap();
        streams[0]
            .send_chunked(&(1u64 << 62).to_be_bytes(), 8)
            .unwrap();
        let mut sink = [0u8; 8];
        let _ = streams[0].recv_exact(&mut sink);
    });
    let sa = a.accept_path(&listener, manual(1)).unwrap();
    let err = a.dsend_recv(sa, b"hi").unwrap_err();
    assert!(matches!(err, MpwError::Oversize { advertised, .. } if advertised == 1 << 62));
    assert!(matches!(a.send(sa, b"x"), Err(MpwError::PathFailed(_))));
    peer.join().unwrap();
}

#[test]
fn barrier_both_sides_return() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    thread::scope(|s| {
        s.spawn(|| b.barrier(cb).unwrap());
        a.barrier(sa).unwrap();
    });
}

#[test]
fn barrier_waits_for_late_peer() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    let delay = Duration::from_millis(150);
    let t0 = Instant::now();
    let b_entered = thread::scope(|s| {
        let h = s.spawn(|| {
            thread::sleep(delay);
            let entered = Instant::now();
            b.barrier(cb).unwrap();
            entered
        });
        a.barrier(sa).unwrap();
        let a_returned = Instant::now();
        let b_entered = h.join().unwrap();
        assert!(a_returned >= b_entered);
        b_entered
    });
    assert!(b_entered - t0 >= delay);
}

#[test]
fn barrier_fails_when_peer_leaves() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    b.destroy_path(cb).unwrap();
    assert!(a.barrier(sa).is_err());
}

#[test]
fn cycle_around_a_three_node_ring() {
    // Node k sends to node k+1 and receives from node k-1.
    let nodes: Vec<Mpw> = (0..3).map(|_| Mpw::new()).collect();
    let mut send_ids = Vec::new();
    let mut recv_ids = vec![None; 3];
    for k in 0..3 {
        let next = (k + 1) % 3;
        let (srv, cli) = connect_pair(&nodes[next], &nodes[k], manual(2));
        send_ids.push(cli);
        recv_ids[next] = Some(srv);
    }
    let tokens: Vec<Vec<u8>> = (0..3).map(|k| pattern(1024, k as u64 + 10)).collect();
    let results: Vec<Vec<u8>> = thread::scope(|s| {
        let hs: Vec<_> = (0..3)
            .map(|k| {
                let (node, tokens, send_ids, recv_ids) = (&nodes[k], &tokens, &send_ids, &recv_ids);
                s.spawn(move || {
                    node.cycle(recv_ids[k].unwrap(), send_ids[k], &tokens[k], 1024)
                        .unwrap()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for k in 0..3 {
        assert_eq!(results[k], tokens[(k + 2) % 3]);
    }

    // The same ring with dynamic sizes.
    let tokens: Vec<Vec<u8>> = [0usize, 7, 300_000]
        .iter()
        .enumerate()
        .map(|(k, &n)| pattern(n, k as u64))
        .collect();
    let results: Vec<Vec<u8>> = thread::scope(|s| {
        let hs: Vec<_> = (0..3)
            .map(|k| {
                let (node, tokens, send_ids, recv_ids) = (&nodes[k], &tokens, &send_ids, &recv_ids);
                s.spawn(move || {
                    node.dcycle(recv_ids[k].unwrap(), send_ids[k], &tokens[k])
                        .unwrap()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for k in 0..3 {
        assert_eq!(results[k], tokens[(k + 2) % 3]);
    }
}

#[test]
fn cycle_preconditions_and_pure_forward() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    let (sa2, cb2) = connect_pair(&a, &b, manual(1));
    assert!(matches!(
        a.cycle(sa, sa, b"x", 1),
        Err(MpwError::Precondition(_))
    ));
    assert!(matches!(
        a.dcycle(sa, sa, b"x"),
        Err(MpwError::Precondition(_))
    ));
    // expected_in = 0: a pure send on the other path.
    let got = thread::scope(|s| {
        let h = s.spawn(|| b.recv(cb2, 3).unwrap());
        assert!(a.cycle(sa, sa2, b"abc", 0).unwrap().is_empty());
        h.join().unwrap()
    });
    assert_eq!(got, b"abc");
    let _ = cb;
}

#[test]
fn nonblocking_matches_blocking() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(4));
    let (x, y) = (pattern(3 * MIB + 17, 1), pattern(MIB - 3, 2));
    let h = a.isend_recv(sa, &x, y.len()).unwrap();
    let got_b = b.send_recv(cb, &y, x.len()).unwrap();
    let got_a = a.wait(h).unwrap();
    assert_eq!(got_a, y);
    assert_eq!(got_b, x);
    assert!(matches!(a.wait(h), Err(MpwError::HandleConsumed(_))));
}

#[test]
fn path_is_free_as_soon_as_wait_returns() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    let result = thread::scope(|s| {
        s.spawn(|| {
            for _ in 0..1000 {
                if b.send_recv(cb, b"b", 1).is_err() {
                    break;
                }
            }
        });
        let outcome = (0..500).try_for_each(|_| {
            let h = a.isend_recv(sa, b"a", 1)?;
            assert_eq!(a.wait(h)?, b"b");
            assert_eq!(a.send_recv(sa, b"a", 1)?, b"b");
            Ok::<_, MpwError>(())
        });
        // Unblocks the peer if this side stopped early.
        a.destroy_path(sa).unwrap();
        outcome
    });
    result.unwrap();
}

#[test]
fn nonblocking_busy_and_closed_paths() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    let h = a.isend_recv(sa, b"ping", 4).unwrap();
    assert!(!a.has_finished(h).unwrap());
    assert!(matches!(a.isend_recv(sa, b"x", 0), Err(MpwError::Busy(_))));
    assert!(matches!(a.send(sa, b"x"), Err(MpwError::Busy(_))));
    assert_eq!(b.send_recv(cb, b"pong", 4).unwrap(), b"ping");
    while !a.has_finished(h).unwrap() {
        thread::sleep(Duration::from_millis(1));
    }
    assert!(a.has_finished(h).unwrap());
    assert_eq!(a.wait(h).unwrap(), b"pong");

    a.destroy_path(sa).unwrap();
    assert!(matches!(
        a.isend_recv(sa, b"x", 0),
        Err(MpwError::NoSuchPath(_))
    ));
}

#[test]
fn destroy_fails_in_flight_transfer() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, _cb) = connect_pair(&a, &b, manual(2));
    let h = a.isend_recv(sa, &[], 1000).unwrap();
    thread::sleep(Duration::from_millis(50));
    assert!(!a.has_finished(h).unwrap());
    a.destroy_path(sa).unwrap();
    let err = a.wait(h).unwrap_err();
    assert!(matches!(err, MpwError::TransferFailed { .. }));
}

#[test]
fn handle_completion_is_monotone() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    let h = a.isend_recv(sa, &pattern(MIB, 1), 0).unwrap();
    let mut seen_true = false;
    let reader = thread::spawn({
        let b = Arc::new(b);
        move || b.recv(cb, MIB).unwrap()
    });
    for _ in 0..10_000 {
        let f = a.has_finished(h).unwrap();
        assert!(!(seen_true && !f), "has_finished went back to false");
        seen_true |= f;
        if seen_true {
            break;
        }
        thread::sleep(Duration::from_micros(100));
    }
    reader.join().unwrap();
    a.wait(h).unwrap();
}

#[test]
fn configure_chunk_size_limits_each_write() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, cb) = connect_pair(&a, &b, manual(2));
    b.configure(cb, Setting::ChunkSize(MIB)).unwrap();
    let data = pattern(8 * MIB, 3);
    thread::scope(|s| {
        s.spawn(|| b.send(cb, &data).unwrap());
        assert_eq!(a.recv(sa, data.len()).unwrap(), data);
    });
    let stats = b.stream_stats(cb).unwrap();
    assert!(stats.iter().all(|st| st.largest_write as usize <= MIB));
    assert_eq!(stats.iter().map(|st| st.write_calls).sum::<u64>(), 8);
}

#[test]
fn configure_validates_and_applies() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let (sa, _cb) = connect_pair(&a, &b, manual(2));
    assert!(matches!(
        a.configure(sa, Setting::PacingRate(Some(0))),
        Err(MpwError::OutOfRange { .. })
    ));
    assert!(a.configure(sa, Setting::ChunkSize(0)).is_err());
    a.configure(sa, Setting::Window(256 * 1024)).unwrap();
    let windows = a.windows(sa).unwrap();
    assert!(windows
        .iter()
        .all(|w| w.as_ref().unwrap().requested == 256 * 1024));
    a.configure(sa, Setting::PacingRate(Some(MIB as u64)))
        .unwrap();
    a.configure(sa, Setting::AutoTune(false)).unwrap();
    let cfg = a.config(sa).unwrap();
    assert_eq!(cfg.pacing_rate, Some(MIB as u64));
    assert_eq!(cfg.window, Some(256 * 1024));
    let ghost = {
        let ids = a.path_ids();
        a.destroy_path(ids[0]).unwrap();
        ids[0]
    };
    assert!(matches!(
        a.configure(ghost, Setting::ChunkSize(1)),
        Err(MpwError::NoSuchPath(_))
    ));
}

#[test]
fn finalize_closes_everything_and_is_idempotent() {
    let (a, b) = (Mpw::new(), Mpw::new());
    let ids: Vec<_> = (0..3).map(|_| connect_pair(&a, &b, manual(1)).0).collect();
    assert_eq!(a.path_ids(), ids);
    a.finalize();
    a.finalize();
    assert!(a.path_ids().is_empty());
    assert!(matches!(a.send(ids[0], b"x"), Err(MpwError::NoSuchPath(_))));
    // Reusable afterwards.
    let (sa, cb) = connect_pair(&a, &b, manual(1));
    thread::scope(|s| {
        s.spawn(|| b.send(cb, b"again").unwrap());
        assert_eq!(a.recv(sa, 5).unwrap(), b"again");
    });
}
