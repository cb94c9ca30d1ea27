use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use dxassist_core::prompting::ChatMessage;
use serde::{Deserialize, Serialize};

use crate::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Call the network and append every exchange.
    Record,
    /// Serve recorded exchanges only; never touch the network.
    Replay,
    /// Call the network, record nothing.
    Passthrough,
}

impl FromStr for CassetteMode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "record" => Ok(CassetteMode::Record),
            "replay" => Ok(CassetteMode::Replay),
            "passthrough" => Ok(CassetteMode::Passthrough),
            other => Err(GatewayError::Precondition(format!(
                "unknown cassette mode {other:?} (expected record, replay or passthrough)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    #[default]
    Chat,
    Embedding,
}

impl EntryKind {
    fn is_chat(&self) -> bool {
        *self == EntryKind::Chat
    }
}

/// One line of a cassette file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "EntryKind::is_chat")]
    pub kind: EntryKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<Vec<f64>>,
}

/// JSON-lines store of exchanges keyed by fingerprint. Appends go through a
/// single lock so concurrent workers never interleave lines.
#[derive(Debug)]
pub struct Cassette {
    mode: CassetteMode,
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CassetteEntry>>,
    writer: Mutex<Option<File>>,
}

impl Cassette {
    /// Network only, nothing recorded.
    pub fn passthrough() -> Self {
        Cassette {
            mode: CassetteMode::Passthrough,
            path: None,
            entries: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Open `path` in the given mode. Replay requires the file to exist;
    /// record creates it if needed and appends. Passthrough ignores it.
    pub fn open(path: impl AsRef<Path>, mode: CassetteMode) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        if mode == CassetteMode::Passthrough {
            return Ok(Cassette::passthrough());
        }
        let err = |message: String| GatewayError::Cassette {
            path: path.display().to_string(),
            message,
        };
        let mut entries = HashMap::new();
        match File::open(&path) {
            Ok(f) => {
                for (n, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.map_err(|e| err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CassetteEntry = serde_json::from_str(&line)
                        .map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                    // Last write wins.
                    entries.insert(entry.fingerprint.clone(), entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode == CassetteMode::Record => {}
            Err(e) => return Err(err(e.to_string())),
        }
        let writer = if mode == CassetteMode::Record {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| err(e.to_string()))?;
            Some(f)
        } else {
            None
        };
        Ok(Cassette {
            mode,
            path: Some(path),
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<CassetteEntry> {
        self.entries
            .lock()
            .expect("cassette lock")
            .get(fingerprint)
            .cloned()
    }

    /// Append an entry durably (written and synced), then index it.
    pub fn append(&self, entry: CassetteEntry) -> Result<(), GatewayError> {
        let mut writer = self.writer.lock().expect("cassette writer lock");
        if let Some(f) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.sync_data())
                .map_err(|e| GatewayError::Cassette {
                    path: self
                        .path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    message: e.to_string(),
                })?;
        }
        self.entries
            .lock()
            .expect("cassette lock")
            .insert(entry.fingerprint.clone(), entry);
        Ok(())
    }
}
