use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::Value;
use thiserror::Error;

use super::events::{TraceEvent, TRACE_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("trace store I/O error: {0}")]
    Io(String),
    #[error("{path}:{line}: trace schema version {found}, expected {expected}")]
    SchemaMismatch {
        path: String,
        line: usize,
        found: String,
        expected: u32,
    },
}

/// Destination for trace events. Must accept appends from concurrent runs.
pub trait EventSink: Send + Sync {
    fn append(&self, event: &TraceEvent) -> Result<(), StoreError>;
}

/// Append-only JSON-lines trace file.
pub struct JsonlStore {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl JsonlStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for JsonlStore {
    fn append(&self, event: &TraceEvent) -> Result<(), StoreError> {
        let line = serde_json::to_string(event).map_err(|e| StoreError::Io(e.to_string()))?;
        let mut writer = self.writer.lock().map_err(|_| StoreError::Io("trace writer poisoned".into()))?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .map_err(|e| StoreError::Io(e.to_string()))
    }
}

/// In-memory sink.
#[derive(Default)]
pub struct MemorySink {
    events: Mutex<Vec<TraceEvent>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().expect("sink poisoned").clone()
    }
}

impl EventSink for MemorySink {
    fn append(&self, event: &TraceEvent) -> Result<(), StoreError> {
        self.events.lock().map_err(|_| StoreError::Io("sink poisoned".into()))?.push(event.clone());
        Ok(())
    }
}

/// Reads a trace file. Lines that are not valid events are skipped with a
/// warning; a well-formed line with another schema version is an error.
pub fn read_events(path: &Path) -> Result<Vec<TraceEvent>, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StoreError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(err) => {
                log::warn!("{}:{}: skipping corrupt trace line: {err}", path.display(), idx + 1);
                continue;
            }
        };
        let version = value.get("v").cloned().unwrap_or(Value::Null);
        if version.as_u64() != Some(u64::from(TRACE_SCHEMA_VERSION)) {
            return Err(StoreError::SchemaMismatch {
                path: path.display().to_string(),
                line: idx + 1,
                found: version.to_string(),
                expected: TRACE_SCHEMA_VERSION,
            });
        }
        match serde_json::from_value::<TraceEvent>(value) {
            Ok(event) => events.push(event),
            Err(err) => log::warn!("{}:{}: skipping malformed trace event: {err}", path.display(), idx + 1),
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EventKind;
    use serde_json::json;

    fn event(run: &str, n: usize) -> TraceEvent {
        TraceEvent::new(format!("t{n}"), run, 1, Some("a"), EventKind::AttemptStarted, json!({"attempt": n}))
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/trace.jsonl");
        let store = JsonlStore::open(&path).unwrap();
        let e = event("r1", 1);
        store.append(&e).unwrap();
        assert_eq!(read_events(&path).unwrap(), vec![e]);
    }

    #[test]
    fn interleaved_runs_filter_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let store = JsonlStore::open(&path).unwrap();
        for n in 0..6 {
            store.append(&event(if n % 2 == 0 { "a" } else { "b" }, n)).unwrap();
        }
        let events = read_events(&path).unwrap();
        let b: Vec<_> = events.iter().filter(|e| e.run_id == "b").map(|e| e.payload["attempt"].as_u64().unwrap()).collect();
        assert_eq!(b, vec![1, 3, 5]);
    }

    #[test]
    fn corrupt_trailing_line_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let store = JsonlStore::open(&path).unwrap();
        store.append(&event("r", 1)).unwrap();
        store.append(&event("r", 2)).unwrap();
        drop(store);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"v\":1,\"timest").unwrap();
        assert_eq!(read_events(&path).unwrap().len(), 2);
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        std::fs::write(&path, "{\"v\":2,\"timestamp\":\"t\",\"run_id\":\"r\",\"iteration\":1,\"kind\":\"outcome\",\"payload\":{}}\n").unwrap();
        assert!(matches!(read_events(&path), Err(StoreError::SchemaMismatch { .. })));
    }
}
