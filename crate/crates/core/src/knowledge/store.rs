use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::edit::{apply_edits, Edit, EditStatus};
use super::types::{
    short_hash, AuditAction, AuditEntry, IntentIds, KnowledgeSetVersion, KnowledgeView, Records,
};
use super::KnowledgeError;
use crate::clock::Clock;

/// Readable knowledge content: a persisted version or a staged overlay.
#[derive(Debug, Clone)]
pub struct KnowledgeSnapshot {
    /// Version id, or `<base>+<edits hash>` for overlays with edits.
    pub label: String,
    pub base_id: String,
    pub edit_ids: Vec<String>,
    pub records: Arc<Records>,
}

impl KnowledgeSnapshot {
    pub fn view(&self, intents: &IntentIds) -> KnowledgeView {
        self.records.view(intents)
    }

    /// A snapshot not backed by any store.
    pub fn detached(label: &str, records: Records) -> Self {
        KnowledgeSnapshot {
            label: label.to_string(),
            base_id: label.to_string(),
            edit_ids: Vec::new(),
            records: Arc::new(records),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionSummary {
    pub version_id: String,
    pub parent_id: Option<String>,
    pub created_at: DateTime<Utc>,
    pub author: String,
    pub intents: usize,
    pub examples: usize,
    pub instructions: usize,
    pub schema: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditFilter {
    #[serde(default)]
    pub action: Option<AuditAction>,
    #[serde(default)]
    pub feedback_id: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version_id: String,
    parent_id: Option<String>,
    created_at: DateTime<Utc>,
    author: String,
    intents: Vec<String>,
    examples: Vec<String>,
    instructions: Vec<String>,
    schema: Vec<String>,
    #[serde(default)]
    sources: Vec<String>,
}

#[derive(Default)]
struct State {
    versions: BTreeMap<String, Arc<KnowledgeSetVersion>>,
    audit: Vec<AuditEntry>,
}

/// Versioned knowledge set. Mutations are serialized through one writer
/// lock; readers clone `Arc`s of immutable versions.
pub struct KnowledgeStore {
    root: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
    writer: Mutex<()>,
}

pub const ROOT_VERSION: &str = "v0000";

impl KnowledgeStore {
    /// Opens (or initializes) a store under `root`.
    pub fn open(root: &Path, clock: Arc<dyn Clock>) -> Result<Self, KnowledgeError> {
        for dir in ["records", "versions"] {
            fs::create_dir_all(root.join(dir)).map_err(|e| io(root, e))?;
        }
        let store = KnowledgeStore {
            root: Some(root.to_path_buf()),
            clock,
            state: RwLock::new(State::default()),
            writer: Mutex::new(()),
        };
        store.load()?;
        store.ensure_root()?;
        Ok(store)
    }

    /// A store that keeps everything in memory.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        let store = KnowledgeStore {
            root: None,
            clock,
            state: RwLock::new(State::default()),
            writer: Mutex::new(()),
        };
        store.ensure_root().expect("in-memory root version");
        store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn ensure_root(&self) -> Result<(), KnowledgeError> {
        if !self.read().versions.is_empty() {
            return Ok(());
        }
        let _w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let version = KnowledgeSetVersion {
            version_id: ROOT_VERSION.into(),
            parent_id: None,
            created_at: self.clock.now(),
            author: "system".into(),
            records: Records::default(),
        };
        self.persist_version(&version)?;
        self.state
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .versions
            .insert(version.version_id.clone(), Arc::new(version));
        Ok(())
    }

    /// Latest created version.
    pub fn head(&self) -> String {
        self.read().versions.keys().next_back().cloned().unwrap_or_else(|| ROOT_VERSION.into())
    }

    pub fn version(&self, id: &str) -> Result<Arc<KnowledgeSetVersion>, KnowledgeError> {
        self.read()
            .versions
            .get(id)
            .cloned()
            .ok_or_else(|| KnowledgeError::UnknownVersion(id.to_string()))
    }

    pub fn snapshot(&self, id: &str) -> Result<KnowledgeSnapshot, KnowledgeError> {
        let v = self.version(id)?;
        Ok(KnowledgeSnapshot {
            label: v.version_id.clone(),
            base_id: v.version_id.clone(),
            edit_ids: Vec::new(),
            records: Arc::new(v.records.clone()),
        })
    }

    pub fn versions(&self) -> Vec<VersionSummary> {
        self.read()
            .versions
            .values()
            .map(|v| VersionSummary {
                version_id: v.version_id.clone(),
                parent_id: v.parent_id.clone(),
                created_at: v.created_at,
                author: v.author.clone(),
                intents: v.records.intents.len(),
                examples: v.records.examples.len(),
                instructions: v.records.instructions.len(),
                schema: v.records.schema.len(),
            })
            .collect()
    }

    pub fn get_view(&self, version: &str, intents: &IntentIds) -> Result<KnowledgeView, KnowledgeError> {
        Ok(self.version(version)?.records.view(intents))
    }

    /// Applies `staged` on top of `base` without persisting anything.
    pub fn overlay(&self, base: &str, staged: &[Edit]) -> Result<KnowledgeSnapshot, KnowledgeError> {
        let base_version = self.version(base)?;
        let records = apply_edits(&base_version.records, staged)?;
        let edit_ids: Vec<String> = staged.iter().map(|e| e.id.clone()).collect();
        let label = if edit_ids.is_empty() {
            base.to_string()
        } else {
            format!("{base}+{}", &short_hash(edit_ids.join(",").as_bytes())[..12])
        };
        Ok(KnowledgeSnapshot {
            label,
            base_id: base.to_string(),
            edit_ids,
            records: Arc::new(records),
        })
    }

    /// Persists approved edits as a child of `base`.
    pub fn merge(
        &self,
        base: &str,
        staged: &[Edit],
        actor: &str,
        feedback_id: Option<&str>,
        action: AuditAction,
    ) -> Result<String, KnowledgeError> {
        if let Some(e) = staged.iter().find(|e| e.status != EditStatus::Approved) {
            return Err(KnowledgeError::NotApproved(e.id.clone()));
        }
        let base_version = self.version(base)?;
        let records = apply_edits(&base_version.records, staged)?;
        self.commit(
            base,
            records,
            actor,
            action,
            staged.iter().map(|e| e.id.clone()).collect(),
            feedback_id.map(str::to_string),
            None,
        )
    }

    /// New version whose content equals `to`; history is kept.
    pub fn revert(&self, to: &str, actor: &str) -> Result<String, KnowledgeError> {
        let target = self.version(to)?;
        let head = self.head();
        self.commit(
            &head,
            target.records.clone(),
            actor,
            AuditAction::Revert,
            Vec::new(),
            None,
            Some(format!("revert to {to}")),
        )
    }

    /// Creates a child version of `parent` holding `records` and logs one
    /// audit entry for it.
    #[allow(clippy::too_many_arguments)]
    pub fn commit(
        &self,
        parent: &str,
        mut records: Records,
        actor: &str,
        action: AuditAction,
        edit_ids: Vec<String>,
        feedback_id: Option<String>,
        note: Option<String>,
    ) -> Result<String, KnowledgeError> {
        let _w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        self.version(parent)?;
        records.sort();
        let (version_id, seq) = {
            let state = self.read();
            (format!("v{:04}", state.versions.len()), state.audit.len() as u64)
        };
        let now = self.clock.now();
        let version = KnowledgeSetVersion {
            version_id: version_id.clone(),
            parent_id: Some(parent.to_string()),
            created_at: now,
            author: actor.to_string(),
            records,
        };
        let entry = AuditEntry {
            seq,
            timestamp: now,
            actor: actor.to_string(),
            action,
            edit_ids,
            feedback_id,
            resulting_version: version_id.clone(),
            note,
        };
        self.persist_version(&version)?;
        self.append_audit(&entry)?;
        let mut state = self.state.write().unwrap_or_else(|p| p.into_inner());
        state.versions.insert(version_id.clone(), Arc::new(version));
        state.audit.push(entry);
        Ok(version_id)
    }

    /// Audit entries, newest first; equal timestamps order by sequence.
    pub fn list_audit(&self, filter: &AuditFilter) -> Vec<AuditEntry> {
        let mut entries: Vec<AuditEntry> = self
            .read()
            .audit
            .iter()
            .filter(|e| filter.action.is_none_or(|a| a == e.action))
            .filter(|e| filter.feedback_id.as_ref().is_none_or(|f| e.feedback_id.as_ref() == Some(f)))
            .cloned()
            .collect();
        entries.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then(b.seq.cmp(&a.seq)));
        if let Some(limit) = filter.limit {
            entries.truncate(limit);
        }
        entries
    }

    fn persist_version(&self, v: &KnowledgeSetVersion) -> Result<(), KnowledgeError> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let r = &v.records;
        let manifest = Manifest {
            version_id: v.version_id.clone(),
            parent_id: v.parent_id.clone(),
            created_at: v.created_at,
            author: v.author.clone(),
            intents: write_records(root, &r.intents)?,
            examples: write_records(root, &r.examples)?,
            instructions: write_records(root, &r.instructions)?,
            schema: write_records(root, &r.schema)?,
            sources: write_records(root, &r.sources)?,
        };
        let path = root.join("versions").join(format!("{}.manifest.json", v.version_id));
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, &bytes)
    }

    fn append_audit(&self, entry: &AuditEntry) -> Result<(), KnowledgeError> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let path = root.join("audit.jsonl");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io(&path, e))?;
        let mut line = serde_json::to_vec(entry).expect("audit entries serialize");
        line.push(b'\n');
        file.write_all(&line).map_err(|e| io(&path, e))
    }

    fn load(&self) -> Result<(), KnowledgeError> {
        let Some(root) = &self.root else {
            return Ok(());
        };
        let mut state = State::default();
        let dir = root.join("versions");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = fs::read(&path).map_err(|e| io(&path, e))?;
            let m: Manifest = serde_json::from_slice(&bytes)
                .map_err(|e| KnowledgeError::Corrupt(format!("{}: {e}", path.display())))?;
            let records = Records {
                intents: read_records(root, &m.intents)?,
                examples: read_records(root, &m.examples)?,
                instructions: read_records(root, &m.instructions)?,
                schema: read_records(root, &m.schema)?,
                sources: read_records(root, &m.sources)?,
            };
            state.versions.insert(
                m.version_id.clone(),
                Arc::new(KnowledgeSetVersion {
                    version_id: m.version_id,
                    parent_id: m.parent_id,
                    created_at: m.created_at,
                    author: m.author,
                    records,
                }),
            );
        }
        let audit_path = root.join("audit.jsonl");
        if audit_path.exists() {
            let text = fs::read_to_string(&audit_path).map_err(|e| io(&audit_path, e))?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let entry: AuditEntry = serde_json::from_str(line).map_err(|e| {
                    KnowledgeError::Corrupt(format!("{} line {}: {e}", audit_path.display(), n + 1))
                })?;
                state.audit.push(entry);
            }
        }
        *self.state.write().unwrap_or_else(|p| p.into_inner()) = state;
        Ok(())
    }

    /// Checks that every non-root version is named by exactly one audit
    /// entry.
    pub fn audit_is_complete(&self) -> bool {
        let state = self.read();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &state.audit {
            *counts.entry(e.resulting_version.as_str()).or_default() += 1;
        }
        let non_root: BTreeSet<&str> = state
            .versions
            .values()
            .filter(|v| v.parent_id.is_some())
            .map(|v| v.version_id.as_str())
            .collect();
        non_root.iter().all(|v| counts.get(v) == Some(&1)) && counts.len() == non_root.len()
    }
}

fn io(path: &Path, e: std::io::Error) -> KnowledgeError {
    KnowledgeError::Io(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), KnowledgeError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

fn write_records<T: Serialize>(root: &Path, items: &[T]) -> Result<Vec<String>, KnowledgeError> {
    let mut hashes = Vec::with_capacity(items.len());
    for item in items {
        let bytes = serde_json::to_vec(item).expect("records serialize");
        let hash = short_hash(&bytes);
        let path = root.join("records").join(format!("{hash}.json"));
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        hashes.push(hash);
    }
    Ok(hashes)
}

fn read_records<T: DeserializeOwned>(root: &Path, hashes: &[String]) -> Result<Vec<T>, KnowledgeError> {
    hashes
        .iter()
        .map(|h| {
            let path = root.join("records").join(format!("{h}.json"));
            let bytes = fs::read(&path).map_err(|e| io(&path, e))?;
            if short_hash(&bytes) != *h {
                return Err(KnowledgeError::Corrupt(format!("{} does not match its hash", path.display())));
            }
            serde_json::from_slice(&bytes)
                .map_err(|e| KnowledgeError::Corrupt(format!("{}: {e}", path.display())))
        })
        .collect()
}
