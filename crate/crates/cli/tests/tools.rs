use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

const MPW_CP: &str = env!("CARGO_BIN_EXE_mpw-cp");
const FORWARDER: &str = env!("CARGO_BIN_EXE_forwarder");
const DATAGATHER: &str = env!("CARGO_BIN_EXE_datagather");
const MPWTEST: &str = env!("CARGO_BIN_EXE_mpwtest");
const UNIT: &str = env!("CARGO_BIN_EXE_mpw-unit-tests");
const CONCURRENT: &str = env!("CARGO_BIN_EXE_mpw-test-concurrent");

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

/// A remote shell that ignores the host and runs the command locally,
/// re-split by `sh` the way a real remote shell would.
fn rsh_stub(dir: &Path) -> PathBuf {
    let p = dir.join("rsh");
    fs::write(&p, "#!/bin/sh\nshift\nexec sh -c \"$*\"\n").unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn mpw_cp(rsh: &Path, extra: &[&str], src: &str, dst: &str) -> Output {
    Command::new(MPW_CP)
        .args(["--rsh", rsh.to_str().unwrap(), "--remote-cmd", MPW_CP])
        .args(extra)
        .args([src, dst])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn digest(path: &Path) -> [u8; 32] {
    Sha256::digest(fs::read(path).unwrap()).into()
}

fn mode(path: &Path) -> u32 {
    fs::metadata(path).unwrap().permissions().mode() & 0o7777
}

fn random_bytes(len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rand::Rng::fill(&mut rand::rng(), &mut v[..]);
    v
}

#[test]
fn mpw_cp_push_and_pull() {
    let dir = tempfile::tempdir().unwrap();
    let rsh = rsh_stub(dir.path());
    let src = dir.path().join("data with space.bin");
    fs::write(&src, random_bytes(3 << 20)).unwrap();
    fs::set_permissions(&src, fs::Permissions::from_mode(0o751)).unwrap();
    let remote_dir = dir.path().join("remote");
    fs::create_dir(&remote_dir).unwrap();

    let out = mpw_cp(
        &rsh,
        &["-n", "4", "-c", "64K"],
        src.to_str().unwrap(),
        &format!("localhost:{}", remote_dir.display()),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pushed = remote_dir.join("data with space.bin");
    assert_eq!(digest(&pushed), digest(&src));
    assert_eq!(mode(&pushed), 0o751);

    let pulled = dir.path().join("pulled");
    let out = mpw_cp(
        &rsh,
        &[],
        &format!("localhost:{}", pushed.display()),
        pulled.to_str().unwrap(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(digest(&pulled), digest(&src));
    assert_eq!(mode(&pulled), 0o751);
}

#[test]
fn mpw_cp_empty_file_keeps_mode() {
    let dir = tempfile::tempdir().unwrap();
    let rsh = rsh_stub(dir.path());
    let src = dir.path().join("empty");
    fs::write(&src, b"").unwrap();
    fs::set_permissions(&src, fs::Permissions::from_mode(0o604)).unwrap();
    let dst = dir.path().join("copy");
    let out = mpw_cp(
        &rsh,
        &[],
        src.to_str().unwrap(),
        &format!("localhost:{}", dst.display()),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read(&dst).unwrap(), b"");
    assert_eq!(mode(&dst), 0o604);
}

#[test]
fn mpw_cp_usage_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let rsh = rsh_stub(dir.path());
    let out = mpw_cp(&rsh, &[], "a:/x", "b:/y");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly one"));
    let out = mpw_cp(&rsh, &[], "/tmp/x", "/tmp/y");
    assert!(!out.status.success());

    // Missing remote source: nonzero exit, no destination file.
    let dst = dir.path().join("never");
    let out = mpw_cp(
        &rsh,
        &[],
        "localhost:/definitely/missing",
        dst.to_str().unwrap(),
    );
    assert!(!out.status.success());
    assert!(!dst.exists());

    // Destination directory missing on the remote side: nothing left behind.
    let src = dir.path().join("f");
    fs::write(&src, b"content").unwrap();
    let bad = dir.path().join("nodir/f");
    let out = mpw_cp(
        &rsh,
        &[],
        src.to_str().unwrap(),
        &format!("localhost:{}", bad.display()),
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("nodir").exists());

    // A remote shell that cannot start the peer.
    let out = Command::new(MPW_CP)
        .args(["--rsh", "false", src.to_str().unwrap(), "localhost:/tmp/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not start"));
}

struct Guard(Child);

impl Drop for Guard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn signal(child: &Child, sig: &str) {
    Command::new("kill")
        .args([sig, &child.id().to_string()])
        .status()
        .unwrap();
}

fn wait_exit(child: &mut Child, limit: Duration) -> Option<std::process::ExitStatus> {
    let t0 = Instant::now();
    while t0.elapsed() < limit {
        if let Some(st) = child.try_wait().unwrap() {
            return Some(st);
        }
        thread::sleep(Duration::from_millis(20));
    }
    None
}

#[test]
fn forwarder_relays_and_exits_cleanly_on_signal() {
    let dir = tempfile::tempdir().unwrap();
    let (listen, target) = (free_port(), free_port());
    let config = dir.path().join("rules");
    fs::write(
        &config,
        format!("# test rule\n127.0.0.1:{listen} 127.0.0.1:{target} 2\n"),
    )
    .unwrap();
    let mut fwd = Guard(
        Command::new(FORWARDER)
            .arg(&config)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let mut line = String::new();
    BufReader::new(fwd.0.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    assert!(line.starts_with("listening"), "{line:?}");

    let (a, b) = (mpwide::Mpw::new(), mpwide::Mpw::new());
    let cfg = mpwide::PathConfig {
        autotune: false,
        ..mpwide::PathConfig::with_streams(2)
    };
    let tep = mpwide::Endpoint::new("127.0.0.1", target).unwrap();
    let fep = mpwide::Endpoint::new("127.0.0.1", listen).unwrap();
    let payload = random_bytes(1 << 20);
    thread::scope(|s| {
        let srv = s.spawn(|| {
            let p = b
                .create_path(&tep, 2, mpwide::Role::Server, cfg.clone())
                .unwrap();
            b.dsend_recv(p, b"pong").unwrap()
        });
        let p = a
            .create_path(&fep, 2, mpwide::Role::Client, cfg.clone())
            .unwrap();
        assert_eq!(a.dsend_recv(p, &payload).unwrap(), b"pong");
        assert_eq!(srv.join().unwrap(), payload);
    });

    signal(&fwd.0, "-TERM");
    let st = wait_exit(&mut fwd.0, Duration::from_secs(5)).expect("forwarder did not stop");
    assert!(st.success(), "{st}");
}

#[test]
fn forwarder_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("rules");
    fs::write(&config, "127.0.0.1:1 nonsense\n").unwrap();
    let out = Command::new(FORWARDER).arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = Command::new(FORWARDER)
        .arg(dir.path().join("missing"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

fn wait_for(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let t0 = Instant::now();
    while t0.elapsed() < limit {
        if cond() {
            return true;
        }
        thread::sleep(Duration::from_millis(20));
    }
    cond()
}

#[test]
fn datagather_programs_sync_one_way() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("src"), dir.path().join("dst"));
    fs::create_dir(&src).unwrap();
    fs::write(src.join("early"), b"before start").unwrap();
    let port = free_port();
    let _sink = Guard(
        Command::new(DATAGATHER)
            .args([
                "--dest",
                dst.to_str().unwrap(),
                "--listen",
                &port.to_string(),
            ])
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let mut source = Guard(
        Command::new(DATAGATHER)
            .args(["--source", src.to_str().unwrap()])
            .args([
                "--connect",
                &format!("127.0.0.1:{port}"),
                "--interval",
                "0.2",
            ])
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let limit = Duration::from_secs(10);
    assert!(wait_for(limit, || fs::read(dst.join("early"))
        .is_ok_and(|d| d == b"before start")));
    fs::create_dir(src.join("sub")).unwrap();
    fs::write(src.join("sub/late"), b"written later").unwrap();
    assert!(wait_for(limit, || dst.join("sub/late").exists()));
    fs::remove_file(src.join("early")).unwrap();
    thread::sleep(Duration::from_millis(600));
    assert!(dst.join("early").exists());

    signal(&source.0, "-INT");
    let st = wait_exit(&mut source.0, Duration::from_secs(5)).expect("source did not stop");
    assert!(st.success());
}

#[test]
fn datagather_requires_a_side_and_a_link() {
    let out = Command::new(DATAGATHER)
        .args(["--listen", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(DATAGATHER)
        .args(["--source", "/tmp"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn mpwtest_prints_tsv_on_both_ends() {
    let port = free_port();
    let common = ["--sizes", "64K,1M", "--streams", "2", "--reps", "3"];
    let server = Command::new(MPWTEST)
        .args(["server", &port.to_string()])
        .args(common)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let client = Command::new(MPWTEST)
        .args(["client", &format!("127.0.0.1:{port}")])
        .args(common)
        .output()
        .unwrap();
    let server = server.wait_with_output().unwrap();
    for out in [&client, &server] {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout.clone()).unwrap();
        assert!(text.starts_with("# size_bytes"));
        let rows = mpwide::harness::parse_tsv(&text).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows
            .iter()
            .all(|r| r.repetitions == 3 && r.stream_count == 2));
    }
}

#[test]
fn mpwtest_usage_errors() {
    let out = Command::new(MPWTEST)
        .args(["client", "127.0.0.1:1", "--sizes", ""])
        .output()
        .unwrap();
    assert!(!out.status.success());
    // Nothing listens on a freshly released port.
    let port = free_port().to_string();
    let out = Command::new(MPWTEST)
        .args(["client", &format!("127.0.0.1:{port}"), "--sizes", "1K"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn test_programs_run_without_arguments() {
    for bin in [UNIT, CONCURRENT] {
        let out = Command::new(bin).env("RUST_LOG", "off").output().unwrap();
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{bin}: {text}");
        assert!(text.contains("0 failed"), "{text}");
        assert!(!text.contains("FAIL"), "{text}");
    }
    assert!(!Command::new(UNIT).arg("extra").status().unwrap().success());
}
