use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{Duration, UNIX_EPOCH};

use log::warn;

use crate::error::{MpwError, Result};

/// What DataGather remembers about a file to notice that it changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileState {
    pub size: u64,
    /// Modification time since the Unix epoch.
    pub mtime: Duration,
}

/// Regular files under a root, keyed by `/`-separated relative path.
/// Symbolic links are skipped.
pub type Manifest = BTreeMap<String, FileState>;

pub fn scan_manifest(root: &Path) -> Result<Manifest> {
    let meta = fs::metadata(root)
        .map_err(|e| MpwError::Precondition(format!("cannot scan {}: {e}", root.display())))?;
    if !meta.is_dir() {
        return Err(MpwError::Precondition(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut out = Manifest::new();
    walk(root, "", &mut out)?;
    Ok(out)
}

fn walk(dir: &Path, prefix: &str, out: &mut Manifest) -> Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if !prefix.is_empty() => {
            warn!("skipping {}: {e}", dir.display());
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let entry = entry?;
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
            warn!("skipping non-UTF-8 name in {}", dir.display());
            continue;
        };
        let rel = if prefix.is_empty() {
            name
        } else {
            format!("{prefix}/{name}")
        };
        let meta = match fs::symlink_metadata(entry.path()) {
            Ok(m) => m,
            // Removed between listing and stat.
            Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
            Err(e) => return Err(e.into()),
        };
        if meta.is_dir() {
            walk(&entry.path(), &rel, out)?;
        } else if meta.is_file() {
            let mtime = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .unwrap_or_default();
            out.insert(
                rel,
                FileState {
                    size: meta.len(),
                    mtime,
                },
            );
        }
    }
    Ok(())
}

/// Paths in `now` that are new or differ from `before`. Paths missing from
/// `now` are ignored.
pub fn changed_paths<'a>(before: &Manifest, now: &'a Manifest) -> Vec<&'a str> {
    now.iter()
        .filter(|(p, s)| before.get(p.as_str()) != Some(s))
        .map(|(p, _)| p.as_str())
        .collect()
}
