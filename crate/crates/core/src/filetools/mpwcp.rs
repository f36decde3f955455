//! Multi-stream file copy with the far end started over a remote shell.
//!
//! The local side runs `<rsh> <host> <remote command> --serve send|recv ...`.
//! The remote peer binds an ephemeral port, prints `MPWCP-PORT <port>` on
//! stdout and waits for the path. The file then travels as one
//! [`FileFrame`] in a dynamic exchange, and the receiver answers with a
//! second exchange carrying an error message, or nothing on success.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use log::{debug, info};

use super::frame::FileFrame;
use crate::error::{MpwError, Result};
use crate::path::{Mpw, PathConfig, PathId, Role, DEFAULT_CHUNK_SIZE};
use crate::stream::{Endpoint, StreamListener};

pub const PORT_ANNOUNCE: &str = "MPWCP-PORT";
pub const DEFAULT_STREAMS: usize = 4;

/// A local path, or `host:path` on a remote machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileSpec {
    Local(PathBuf),
    Remote { host: String, path: String },
}

impl FileSpec {
    pub fn is_remote(&self) -> bool {
        matches!(self, FileSpec::Remote { .. })
    }
}

impl FromStr for FileSpec {
    type Err = MpwError;

    /// A colon before any slash marks a remote spec, as with scp.
    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(MpwError::Precondition("empty file spec".into()));
        }
        match s.split_once(':') {
            Some((host, path)) if !host.is_empty() && !host.contains('/') => {
                if path.is_empty() {
                    return Err(MpwError::Precondition(format!(
                        "{s:?} names no remote file"
                    )));
                }
                Ok(FileSpec::Remote {
                    host: host.to_owned(),
                    path: path.to_owned(),
                })
            }
            _ => Ok(FileSpec::Local(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for FileSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileSpec::Local(p) => write!(f, "{}", p.display()),
            FileSpec::Remote { host, path } => write!(f, "{host}:{path}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CopyOptions {
    pub streams: usize,
    pub chunk_size: usize,
    /// Remote shell program and its leading arguments, e.g. `["ssh", "-p", "22"]`.
    pub rsh: Vec<String>,
    /// Command that starts mpw-cp on the remote host.
    pub remote_command: Vec<String>,
    /// How long the remote peer waits for the local side to connect.
    pub accept_timeout: Duration,
}

impl Default for CopyOptions {
    fn default() -> Self {
        CopyOptions {
            streams: DEFAULT_STREAMS,
            chunk_size: DEFAULT_CHUNK_SIZE,
            rsh: vec!["ssh".into()],
            remote_command: vec!["mpw-cp".into()],
            accept_timeout: Duration::from_secs(60),
        }
    }
}

impl CopyOptions {
    fn path_config(&self) -> PathConfig {
        PathConfig {
            chunk_size: self.chunk_size,
            autotune: false,
            accept_timeout: Some(self.accept_timeout),
            ..PathConfig::with_streams(self.streams)
        }
    }
}

/// Which half of a copy the remote peer plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeMode {
    Send,
    Recv,
}

impl ServeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ServeMode::Send => "send",
            ServeMode::Recv => "recv",
        }
    }
}

impl FromStr for ServeMode {
    type Err = MpwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "send" => Ok(ServeMode::Send),
            "recv" => Ok(ServeMode::Recv),
            other => Err(MpwError::Precondition(format!(
                "unknown serve mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyStats {
    pub bytes: u64,
    pub mode: u32,
}

/// Copies `source` to `dest`; exactly one of them must be remote.
pub fn mpwcp(source: &FileSpec, dest: &FileSpec, opts: &CopyOptions) -> Result<CopyStats> {
    opts.path_config().validate()?;
    let (host, remote_path, mode, local) = match (source, dest) {
        (FileSpec::Local(l), FileSpec::Remote { host, path }) => (host, path, ServeMode::Recv, l),
        (FileSpec::Remote { host, path }, FileSpec::Local(l)) => (host, path, ServeMode::Send, l),
        _ => {
            return Err(MpwError::Precondition(
                "exactly one of source and destination must be remote (host:path)".into(),
            ))
        }
    };
    if mode == ServeMode::Recv {
        // Fail before starting anything remote.
        fs::metadata(local)
            .map_err(|e| MpwError::Precondition(format!("cannot read {}: {e}", local.display())))?;
    }
    let (program, rsh_args) = opts
        .rsh
        .split_first()
        .ok_or_else(|| MpwError::Precondition("empty remote shell command".into()))?;
    let mut remote: Vec<String> = opts.remote_command.clone();
    remote.extend([
        "--serve".into(),
        mode.as_str().into(),
        "-n".into(),
        opts.streams.to_string(),
        "-c".into(),
        opts.chunk_size.to_string(),
        "--accept-timeout".into(),
        opts.accept_timeout.as_secs().max(1).to_string(),
        remote_path.clone(),
    ]);
    let remote_line = remote
        .iter()
        .map(|a| shell_quote(a))
        .collect::<Vec<_>>()
        .join(" ");
    debug!("spawning {program} {rsh_args:?} {host} {remote_line}");
    let mut child = Command::new(program)
        .args(rsh_args)
        .arg(host)
        .arg(&remote_line)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| MpwError::Precondition(format!("cannot run remote shell {program:?}: {e}")))?;

    let outcome = (|| {
        let mut out = BufReader::new(child.stdout.take().expect("stdout is piped"));
        let port = read_port(&mut out)?;
        let mpw = Mpw::new();
        let peer = Endpoint::new(host.clone(), port)?;
        let path = mpw.create_path(&peer, opts.streams, Role::Client, opts.path_config())?;
        let stats = match mode {
            ServeMode::Recv => send_file(&mpw, path, local),
            ServeMode::Send => recv_file(&mpw, path, local),
        };
        let _ = mpw.destroy_path(path);
        stats
    })();

    let status = match &outcome {
        Ok(_) => child.wait()?,
        Err(_) => {
            let _ = child.kill();
            child.wait()?
        }
    };
    let stats = outcome?;
    if !status.success() {
        return Err(MpwError::Protocol(format!(
            "remote peer exited with {status}"
        )));
    }
    Ok(stats)
}

fn read_port(out: &mut impl BufRead) -> Result<u16> {
    let mut line = String::new();
    loop {
        line.clear();
        if out.read_line(&mut line)? == 0 {
            return Err(MpwError::Protocol(
                "remote peer did not start (no port announcement)".into(),
            ));
        }
        if let Some(rest) = line.trim().strip_prefix(PORT_ANNOUNCE) {
            return rest
                .trim()
                .parse()
                .map_err(|_| MpwError::Protocol(format!("bad port announcement {line:?}")));
        }
    }
}

/// Remote half: binds an ephemeral port, announces it on `announce`, accepts
/// the path and plays `mode`.
pub fn serve(
    mode: ServeMode,
    file: &Path,
    opts: &CopyOptions,
    announce: &mut impl Write,
) -> Result<CopyStats> {
    let config = opts.path_config();
    config.validate()?;
    let listener = StreamListener::bind("0.0.0.0:0".parse().unwrap())?;
    let port = listener.local_addr()?.port();
    writeln!(announce, "{PORT_ANNOUNCE} {port}")?;
    announce.flush()?;
    let mpw = Mpw::new();
    let path = mpw.accept_path(&listener, config)?;
    let stats = match mode {
        ServeMode::Send => send_file(&mpw, path, file),
        ServeMode::Recv => recv_file(&mpw, path, file),
    };
    let _ = mpw.destroy_path(path);
    stats
}

fn send_file(mpw: &Mpw, path: PathId, file: &Path) -> Result<CopyStats> {
    // Any local failure is reported to the peer as a frame it cannot
    // decode, so it does not wait forever.
    let read = (|| {
        let meta = fs::metadata(file)?;
        if !meta.is_file() {
            return Err(MpwError::Precondition(format!(
                "{} is not a regular file",
                file.display()
            )));
        }
        let name = file
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| MpwError::Precondition(format!("bad file name {}", file.display())))?;
        let mode = meta.permissions().mode() & 0o7777;
        FileFrame::new(name, mode, fs::read(file)?)
    })()
    .map_err(|e| match e {
        MpwError::Io(io) => MpwError::Precondition(format!("cannot read {}: {io}", file.display())),
        other => other,
    });
    let frame = match read {
        Ok(f) => f,
        Err(e) => {
            let _ = mpw.dsend_recv(path, &[]);
            return Err(e);
        }
    };
    let stats = CopyStats {
        bytes: frame.content.len() as u64,
        mode: frame.mode,
    };
    mpw.dsend_recv(path, &frame.encode())?;
    let status = mpw.dsend_recv(path, &[])?;
    if !status.is_empty() {
        return Err(MpwError::Protocol(format!(
            "receiver failed: {}",
            String::from_utf8_lossy(&status)
        )));
    }
    info!("sent {} ({} bytes)", file.display(), stats.bytes);
    Ok(stats)
}

fn recv_file(mpw: &Mpw, path: PathId, dest: &Path) -> Result<CopyStats> {
    let raw = mpw.dsend_recv(path, &[])?;
    if raw.is_empty() {
        return Err(MpwError::Protocol(
            "sender could not read the source file".into(),
        ));
    }
    let written = FileFrame::decode(&raw).and_then(|frame| {
        drop(raw);
        let target = if dest.is_dir() {
            dest.join(super::frame::safe_relative(&frame.relative_path)?)
        } else {
            dest.to_path_buf()
        };
        write_atomically(&target, &frame.content, frame.mode)?;
        Ok(CopyStats {
            bytes: frame.content.len() as u64,
            mode: frame.mode,
        })
    });
    let status = match &written {
        Ok(_) => Vec::new(),
        Err(e) => e.to_string().into_bytes(),
    };
    mpw.dsend_recv(path, &status)?;
    written
}

/// Writes `content` next to `target` and renames it into place, so a failed
/// copy never leaves a partial file behind.
pub fn write_atomically(target: &Path, content: &[u8], mode: u32) -> Result<()> {
    let dir = target
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = target
        .file_name()
        .ok_or_else(|| MpwError::Precondition(format!("bad destination {}", target.display())))?;
    let tmp = dir.join(format!(
        ".{}.mpwcp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        fs::write(&tmp, content)?;
        fs::set_permissions(&tmp, fs::Permissions::from_mode(mode & 0o7777))?;
        fs::rename(&tmp, target)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Quotes `arg` for a POSIX shell, as remote shells re-split their command.
pub fn shell_quote(arg: &str) -> String {
    let plain = !arg.is_empty()
        && arg
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_-./:=,@%+".contains(c));
    if plain {
        arg.to_owned()
    } else {
        format!("'{}'", arg.replace('\'', r"'\''"))
    }
}
