//! Generation traces: one JSON-lines file per UTC day plus an in-memory
//! index by request id. A later line for the same id replaces the earlier.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use genedit_core::generation::GenerationTrace;

#[derive(Serialize, Deserialize)]
struct Line {
    recorded_at: DateTime<Utc>,
    trace: GenerationTrace,
}

pub struct TraceStore {
    dir: Option<PathBuf>,
    index: RwLock<HashMap<String, Arc<GenerationTrace>>>,
    append: Mutex<()>,
}

impl TraceStore {
    pub fn in_memory() -> Self {
        TraceStore { dir: None, index: RwLock::default(), append: Mutex::new(()) }
    }

    /// Loads every `*.jsonl` under `dir`, oldest file first.
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut index = HashMap::new();
        for file in files {
            for (n, line) in io::BufReader::new(fs::File::open(&file)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: Line = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", file.display(), n + 1))
                })?;
                index.insert(parsed.trace.request_id.clone(), Arc::new(parsed.trace));
            }
        }
        Ok(TraceStore { dir: Some(dir.to_path_buf()), index: RwLock::new(index), append: Mutex::new(()) })
    }

    pub fn put(&self, trace: &GenerationTrace, at: DateTime<Utc>) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            let _guard = self.append.lock().unwrap_or_else(|p| p.into_inner());
            let path = dir.join(format!("{}.jsonl", at.format("%Y-%m-%d")));
            let mut line = serde_json::to_string(&Line { recorded_at: at, trace: trace.clone() })?;
            line.push('\n');
            OpenOptions::new().create(true).append(true).open(path)?.write_all(line.as_bytes())?;
        }
        self.index
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(trace.request_id.clone(), Arc::new(trace.clone()));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<GenerationTrace>> {
        self.index.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
