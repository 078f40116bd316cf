//! Snapshot files and the per-task snapshot directory.
//!
//! A snapshot is a header line followed by the JSON-encoded state:
//!
//! ```text
//! crowdlabel-snapshot v1 sha256:<hex of body>
//! {"task": ...}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::RunState;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "crowdlabel-snapshot";

pub fn encode_snapshot(state: &RunState) -> Result<String> {
    let body = serde_json::to_string(state)?;
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    Ok(format!("{MAGIC} v{SCHEMA_VERSION} sha256:{digest}\n{body}\n"))
}

pub fn decode_snapshot(content: &str) -> Result<RunState> {
    let (header, rest) = content.split_once('\n').ok_or(Error::Checksum)?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(Error::Parse("not a snapshot file".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse("malformed snapshot header".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: version, expected: SCHEMA_VERSION });
    }
    let digest = parts.next().and_then(|d| d.strip_prefix("sha256:")).ok_or(Error::Checksum)?;
    let body = rest.strip_suffix('\n').unwrap_or(rest);
    if hex::encode(Sha256::digest(body.as_bytes())) != digest {
        return Err(Error::Checksum);
    }
    Ok(serde_json::from_str(body)?)
}

/// Writes `content` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("snapshot");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn persist_snapshot(state: &RunState, path: &Path) -> Result<()> {
    write_atomic(path, encode_snapshot(state)?.as_bytes())
}

pub fn load_snapshot(path: &Path) -> Result<RunState> {
    decode_snapshot(&fs::read_to_string(path)?)
}

/// One directory per task holding `snapshot-000001.json`, `snapshot-000002.json`, ...
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    dir: PathBuf,
}

impl SnapshotStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(SnapshotStore { dir })
    }

    /// `root/<task_id>`.
    pub fn for_task(root: &Path, task_id: &str) -> Result<Self> {
        if task_id.is_empty() || task_id.contains(['/', '\\']) || task_id.starts_with('.') {
            return Err(Error::InvalidTask(format!("task id {task_id:?} is not usable as a directory name")));
        }
        Self::open(root.join(task_id))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Snapshot numbers present, ascending.
    pub fn numbers(&self) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(n) = name
                .to_str()
                .and_then(|n| n.strip_prefix("snapshot-"))
                .and_then(|n| n.strip_suffix(".json"))
                .and_then(|n| n.parse().ok())
            {
                out.push(n);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn path_for(&self, n: u64) -> PathBuf {
        self.dir.join(format!("snapshot-{n:06}.json"))
    }

    /// Writes the next numbered snapshot and returns its path.
    pub fn save(&self, state: &RunState) -> Result<PathBuf> {
        let next = self.numbers()?.last().copied().unwrap_or(0) + 1;
        let path = self.path_for(next);
        persist_snapshot(state, &path)?;
        Ok(path)
    }

    pub fn latest_path(&self) -> Result<Option<PathBuf>> {
        Ok(self.numbers()?.last().map(|&n| self.path_for(n)))
    }

    pub fn load_latest(&self) -> Result<RunState> {
        let path = self.latest_path()?.ok_or(Error::Empty("snapshot directory"))?;
        load_snapshot(&path)
    }
}
