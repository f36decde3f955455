#![allow(dead_code)]

use std::thread;

use mpwide::{Endpoint, Mpw, PathConfig, PathId, Role, StreamListener};
use sha2::{Digest, Sha256};

pub fn loopback_listener() -> (StreamListener, Endpoint) {
    let l = StreamListener::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let ep = Endpoint::from(l.local_addr().unwrap());
    (l, ep)
}

pub fn manual(streams: usize) -> PathConfig {
    PathConfig {
        stream_count: streams,
        autotune: false,
        ..PathConfig::default()
    }
}

/// Opens one path between two contexts over loopback: (server id, client id).
pub fn connect_pair(server: &Mpw, client: &Mpw, config: PathConfig) -> (PathId, PathId) {
    let (listener, ep) = loopback_listener();
    let streams = config.stream_count;
    thread::scope(|s| {
        let cfg = config.clone();
        let c = s.spawn(move || client.create_path(&ep, streams, Role::Client, cfg));
        let sid = server.accept_path(&listener, config).unwrap();
        (sid, c.join().unwrap().unwrap())
    })
}

pub fn pattern(len: usize, seed: u64) -> Vec<u8> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 24) as u8
        })
        .collect()
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}
