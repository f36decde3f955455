use std::path::{Component, Path, PathBuf};

use crate::error::{MpwError, Result};

const HEADER_FIXED: usize = 2 + 4 + 8;

/// One file on the wire:
///
/// ```text
/// u16 BE  path length
/// [u8]    relative path, UTF-8, `/`-separated
/// u32 BE  permission bits
/// u64 BE  content length
/// [u8]    content
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileFrame {
    pub relative_path: String,
    pub mode: u32,
    pub content: Vec<u8>,
}

impl FileFrame {
    pub fn new(relative_path: impl Into<String>, mode: u32, content: Vec<u8>) -> Result<Self> {
        let frame = FileFrame {
            relative_path: relative_path.into(),
            mode,
            content,
        };
        safe_relative(&frame.relative_path)?;
        if frame.relative_path.len() > u16::MAX as usize {
            return Err(MpwError::BadFrame("path longer than 65535 bytes".into()));
        }
        Ok(frame)
    }

    pub fn encode(&self) -> Vec<u8> {
        let name = self.relative_path.as_bytes();
        let mut out = Vec::with_capacity(HEADER_FIXED + name.len() + self.content.len());
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&self.mode.to_be_bytes());
        out.extend_from_slice(&(self.content.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.content);
        out
    }

    /// Parses a frame; rejects truncated input, trailing bytes and paths
    /// that would escape the destination root.
    pub fn decode(raw: &[u8]) -> Result<Self> {
        let take = |at: usize, n: usize| -> Result<&[u8]> {
            raw.get(at..at + n)
                .ok_or_else(|| MpwError::BadFrame(format!("frame truncated at byte {at}")))
        };
        let name_len = u16::from_be_bytes(take(0, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(2, name_len)?)
            .map_err(|_| MpwError::BadFrame("path is not UTF-8".into()))?;
        let at = 2 + name_len;
        let mode = u32::from_be_bytes(take(at, 4)?.try_into().unwrap());
        let size = u64::from_be_bytes(take(at + 4, 8)?.try_into().unwrap());
        let body = at + HEADER_FIXED - 2;
        let remaining = (raw.len() - body) as u64;
        if size != remaining {
            return Err(MpwError::BadFrame(format!(
                "frame declares {size} content bytes, carries {remaining}"
            )));
        }
        safe_relative(name)?;
        Ok(FileFrame {
            relative_path: name.to_owned(),
            mode,
            content: raw[body..].to_vec(),
        })
    }
}

/// Converts a `/`-separated relative path to a native one, refusing empty
/// paths, absolute paths, `..` and NUL bytes.
pub fn safe_relative(path: &str) -> Result<PathBuf> {
    let bad = |why: &str| MpwError::BadFrame(format!("unsafe path {path:?}: {why}"));
    if path.is_empty() {
        return Err(bad("empty"));
    }
    if path.contains('\0') {
        return Err(bad("contains NUL"));
    }
    if path.starts_with('/') || path.starts_with('\\') {
        return Err(bad("absolute"));
    }
    let mut out = PathBuf::new();
    for part in path.split('/') {
        match part {
            "" | "." => continue,
            ".." => return Err(bad("parent component")),
            p => {
                for c in Path::new(p).components() {
                    if !matches!(c, Component::Normal(_)) {
                        return Err(bad("non-normal component"));
                    }
                }
                out.push(p);
            }
        }
    }
    if out.as_os_str().is_empty() {
        return Err(bad("no file name"));
    }
    Ok(out)
}
