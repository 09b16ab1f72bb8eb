use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes a command's artifacts into the output directory.
pub struct Outputs {
    dir: PathBuf,
    timestamp: bool,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
    #[serde(flatten)]
    body: &'a T,
}

impl Outputs {
    pub fn new(dir: &Path, timestamp: bool) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            timestamp,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `body` as pretty JSON under a small header naming the tool and
    /// command.
    pub fn json<T: Serialize>(&self, name: &str, command: &str, body: &T) -> anyhow::Result<PathBuf> {
        let timestamp_unix = self
            .timestamp
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        let envelope = Envelope {
            tool: "drdetect",
            version: env!("CARGO_PKG_VERSION"),
            command,
            timestamp_unix,
            body,
        };
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Writes serializable rows as CSV with a header line.
    pub fn csv<R: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = R>) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
