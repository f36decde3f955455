//! Shared fixtures for the criterion benchmarks.

use std::thread;

use mpwide::{Endpoint, Mpw, PathConfig, PathId, Role, StreamListener};

/// Two contexts joined by one loopback path of `streams` streams.
pub struct Pair {
    pub server: Mpw,
    pub server_path: PathId,
    pub client: Mpw,
    pub client_path: PathId,
}

impl Pair {
    pub fn open(streams: usize) -> mpwide::Result<Pair> {
        let config = PathConfig {
            autotune: false,
            ..PathConfig::with_streams(streams)
        };
        let listener = StreamListener::bind("127.0.0.1:0".parse().unwrap())?;
        let ep = Endpoint::from(listener.local_addr()?);
        let (server, client) = (Mpw::new(), Mpw::new());
        let (server_path, client_path) = thread::scope(|s| {
            let cfg = config.clone();
            let c = s.spawn(|| client.create_path(&ep, streams, Role::Client, cfg));
            let sp = server.accept_path(&listener, config)?;
            Ok::<_, mpwide::MpwError>((sp, c.join().unwrap()?))
        })?;
        Ok(Pair {
            server,
            server_path,
            client,
            client_path,
        })
    }

    /// Client sends `data`, server receives it.
    pub fn push(&self, data: &[u8]) -> mpwide::Result<Vec<u8>> {
        thread::scope(|s| {
            let r = s.spawn(|| self.server.recv(self.server_path, data.len()));
            self.client.send(self.client_path, data)?;
            r.join().unwrap()
        })
    }

    /// One dynamic-size exchange in each direction.
    pub fn ping(&self, data: &[u8]) -> mpwide::Result<Vec<u8>> {
        thread::scope(|s| {
            let r = s.spawn(|| self.server.dsend_recv(self.server_path, data));
            let got = self.client.dsend_recv(self.client_path, data)?;
            r.join().unwrap()?;
            Ok(got)
        })
    }

    pub fn barrier(&self) -> mpwide::Result<()> {
        thread::scope(|s| {
            let r = s.spawn(|| self.server.barrier(self.server_path));
            self.client.barrier(self.client_path)?;
            r.join().unwrap()
        })
    }
}
