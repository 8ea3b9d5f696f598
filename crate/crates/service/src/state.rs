use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use genedit_core::clock::{Clock, SystemClock};
use genedit_core::editflow::{load_golden, EditFlow, FlowError, GoldenCase, GoldenError};
use genedit_core::exec::{ExecError, SqliteExecutor};
use genedit_core::generation::GenerationConfig;
use genedit_core::knowledge::{KnowledgeError, KnowledgeStore};
use genedit_core::provider::{ChatProvider, HttpProvider, ProviderError, ScriptedProvider};

use crate::config::{ConfigError, ProviderSettings, ServiceConfig};
use crate::idempotency::IdempotencyCache;
use crate::traces::TraceStore;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("knowledge store: {0}")]
    Knowledge(#[from] KnowledgeError),
    #[error("feedback sessions: {0}")]
    Sessions(#[from] FlowError),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("database `{db_id}`: {source}")]
    Database { db_id: String, source: ExecError },
    #[error("golden cases: {0}")]
    Golden(#[from] GoldenError),
    #[error("trace store: {0}")]
    Traces(#[from] std::io::Error),
}

pub struct AppState {
    pub store: Arc<KnowledgeStore>,
    pub flow: Arc<EditFlow>,
    pub traces: Arc<TraceStore>,
    pub provider: Arc<dyn ChatProvider>,
    pub executor: Arc<SqliteExecutor>,
    pub golden: Arc<Vec<GoldenCase>>,
    pub generation: GenerationConfig,
    pub default_db: String,
    pub debug_prompts: bool,
    pub workers: usize,
    pub idempotency: Arc<IdempotencyCache>,
    /// Static key every request except health must carry.
    pub api_key: Option<String>,
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

pub type Shared = Arc<AppState>;

pub const API_KEY_ENV: &str = "GENEDIT_API_KEY";

pub fn build_provider(settings: &ProviderSettings) -> Result<Arc<dyn ChatProvider>, StartupError> {
    Ok(match settings {
        ProviderSettings::Scripted { script } => Arc::new(ScriptedProvider::from_file(script)?),
        http => {
            let config = http.http_config().expect("http settings")?;
            Arc::new(HttpProvider::new(config)?)
        }
    })
}

pub fn build_executor(config: &ServiceConfig) -> Result<SqliteExecutor, StartupError> {
    let mut exec = SqliteExecutor::new();
    for (db_id, spec) in &config.databases {
        exec.add_spec(db_id, spec).map_err(|source| StartupError::Database { db_id: db_id.clone(), source })?;
    }
    Ok(exec)
}

impl AppState {
    /// Wires every component from a validated config.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, StartupError> {
        config.validate()?;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let store = Arc::new(KnowledgeStore::open(&config.knowledge_dir, clock)?);
        let flow = Arc::new(EditFlow::open(store.clone(), &config.sessions_file())?);
        let executor = build_executor(config)?;
        let golden = load_golden(&config.golden_file, &executor)?;
        Ok(AppState::new(
            store,
            flow,
            TraceStore::open(&config.trace_dir())?,
            build_provider(&config.provider)?,
            executor,
            golden,
            config.generation(),
            config.default_db().to_string(),
        )
        .with_debug_prompts(config.debug_prompts)
        .with_workers(config.workers)
        .with_api_key(std::env::var(API_KEY_ENV).ok()))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: Arc<KnowledgeStore>,
        flow: Arc<EditFlow>,
        traces: TraceStore,
        provider: Arc<dyn ChatProvider>,
        executor: SqliteExecutor,
        golden: Vec<GoldenCase>,
        generation: GenerationConfig,
        default_db: String,
    ) -> Self {
        AppState {
            store,
            flow,
            traces: Arc::new(traces),
            provider,
            executor: Arc::new(executor),
            golden: Arc::new(golden),
            generation,
            default_db,
            debug_prompts: false,
            workers: 4,
            idempotency: Arc::default(),
            api_key: None,
            session_locks: Mutex::default(),
        }
    }

    pub fn with_debug_prompts(mut self, on: bool) -> Self {
        self.debug_prompts = on;
        self
    }

    /// An empty key leaves the API open.
    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Serializes lifecycle calls on one session.
    pub fn session_lock(&self, session_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.session_locks
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(session_id.to_string())
            .or_default()
            .clone()
    }
}
