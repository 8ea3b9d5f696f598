//! Service configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use genedit_core::generation::GenerationConfig;
use genedit_core::provider::HttpProviderConfig;
use genedit_core::retrieval::RetrievalConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("`{key}` points to {path}, which does not exist")]
    MissingPath { key: String, path: String },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hashing,
    Provider,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSettings {
    #[serde(default)]
    pub kind: EmbedderKind,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderSettings {
    /// Replies come from a JSON script.
    Scripted { script: PathBuf },
    /// Chat-completion endpoint. Missing values fall back to the
    /// `GENEDIT_PROVIDER_URL` / `GENEDIT_MODEL` variables; the key is only
    /// ever read from `GENEDIT_PROVIDER_KEY`.
    Http {
        #[serde(default)]
        base_url: Option<String>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default = "default_concurrency")]
        max_concurrency: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

impl ProviderSettings {
    pub fn http_config(&self) -> Option<Result<HttpProviderConfig, ConfigError>> {
        let ProviderSettings::Http { base_url, model, max_concurrency, timeout_secs } = self else {
            return None;
        };
        let env = HttpProviderConfig::from_env();
        let base_url = match base_url.clone().or_else(|| env.as_ref().map(|e| e.base_url.clone())) {
            Some(u) => u,
            None => {
                return Some(Err(ConfigError::Invalid {
                    key: "provider.base_url".into(),
                    message: "not set and GENEDIT_PROVIDER_URL is empty".into(),
                }))
            }
        };
        Some(Ok(HttpProviderConfig {
            base_url,
            model: model
                .clone()
                .or_else(|| std::env::var("GENEDIT_MODEL").ok())
                .unwrap_or_else(|| "gpt-4o".into()),
            api_key: std::env::var("GENEDIT_PROVIDER_KEY").ok(),
            max_concurrency: *max_concurrency,
            timeout_secs: *timeout_secs,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub knowledge_dir: PathBuf,
    pub golden_file: PathBuf,
    /// Generation traces; defaults to `<knowledge_dir>/traces`.
    #[serde(default)]
    pub trace_dir: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub provider: ProviderSettings,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub embedder: EmbedderSettings,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_true")]
    pub summarize: bool,
    /// db id to `fixture:<name>` or a SQLite file path.
    pub databases: BTreeMap<String, String>,
    /// Database used when a request names none; the first one by default.
    #[serde(default)]
    pub default_db: Option<String>,
    /// Allows `?debug=1` to return raw prompts.
    #[serde(default)]
    pub debug_prompts: bool,
    /// Parallel golden cases per regression run.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_k() -> u32 {
    2
}

fn default_candidates() -> usize {
    1
}

fn default_temperature() -> f64 {
    0.7
}

fn default_true() -> bool {
    true
}

fn default_workers() -> usize {
    4
}

fn require(key: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath { key: key.into(), path: path.display().to_string() })
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let config = Self::parse(&text, base)
            .map_err(|e| match e {
                ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.display().to_string(), message },
                other => other,
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Parses without touching the filesystem; paths are joined to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: ServiceConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: String::new(), message: e.to_string() })?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.knowledge_dir);
        resolve(&mut config.golden_file);
        if let Some(t) = config.trace_dir.as_mut() {
            resolve(t);
        }
        if let ProviderSettings::Scripted { script } = &mut config.provider {
            resolve(script);
        }
        for spec in config.databases.values_mut() {
            if !spec.starts_with("fixture:") && Path::new(spec.as_str()).is_relative() {
                *spec = base.join(spec.as_str()).display().to_string();
            }
        }
        Ok(config)
    }

    /// Every referenced path must exist and the settings must be usable.
    pub fn validate(&self) -> Result<(), ConfigError> {
        require("knowledge_dir", &self.knowledge_dir)?;
        require("golden_file", &self.golden_file)?;
        if let Some(t) = &self.trace_dir {
            require("trace_dir", t)?;
        }
        if let ProviderSettings::Scripted { script } = &self.provider {
            require("provider.script", script)?;
        }
        for (db, spec) in &self.databases {
            if !spec.starts_with("fixture:") {
                require(&format!("databases.{db}"), Path::new(spec))?;
            }
        }
        if self.embedder.kind == EmbedderKind::Provider {
            return Err(ConfigError::Invalid {
                key: "embedder.kind".into(),
                message: "only the hashing embedder is available in this build".into(),
            });
        }
        if self.databases.is_empty() {
            return Err(ConfigError::Invalid { key: "databases".into(), message: "at least one database is required".into() });
        }
        if let Some(db) = &self.default_db {
            if !self.databases.contains_key(db) {
                return Err(ConfigError::Invalid { key: "default_db".into(), message: format!("no database `{db}`") });
            }
        }
        if let Some(Err(e)) = self.provider.http_config() {
            return Err(e);
        }
        Ok(())
    }

    pub fn default_db(&self) -> &str {
        self.default_db
            .as_deref()
            .or_else(|| self.databases.keys().next().map(String::as_str))
            .unwrap_or_default()
    }

    pub fn trace_dir(&self) -> PathBuf {
        self.trace_dir.clone().unwrap_or_else(|| self.knowledge_dir.join("traces"))
    }

    pub fn sessions_file(&self) -> PathBuf {
        self.knowledge_dir.join("sessions.json")
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            k: self.k,
            n_candidates: self.n_candidates.max(1),
            temperature: self.temperature,
            retrieval: self.retrieval.clone(),
            summarize: self.summarize,
            ..GenerationConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
knowledge_dir = "kb"
golden_file = "golden.json"
databases = { sports = "fixture:sports", shop = "dbs/shop.sqlite" }

[provider]
kind = "scripted"
script = "script.json"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let c = ServiceConfig::parse(MINIMAL, Path::new("/etc/genedit")).unwrap();
        assert_eq!(c.knowledge_dir, PathBuf::from("/etc/genedit/kb"));
        assert_eq!(c.provider, ProviderSettings::Scripted { script: "/etc/genedit/script.json".into() });
        assert_eq!(c.databases["shop"], "/etc/genedit/dbs/shop.sqlite");
        assert_eq!(c.databases["sports"], "fixture:sports");
        assert_eq!(c.retrieval, RetrievalConfig::default());
        assert_eq!((c.k, c.n_candidates), (2, 1));
        assert_eq!(c.default_db(), "shop");
        assert_eq!(c.trace_dir(), PathBuf::from("/etc/genedit/kb/traces"));
        assert!(!c.debug_prompts);
    }

    #[test]
    fn retrieval_keys_override_defaults() {
        let text = format!("{MINIMAL}\n[retrieval]\ntheta = 0.5\nn_examples = 3\n\n[embedder]\nkind = \"hashing\"\n");
        let c = ServiceConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.retrieval.theta, 0.5);
        assert_eq!(c.retrieval.n_examples, 3);
        assert_eq!(c.retrieval.pool_m, 50);
    }

    #[test]
    fn missing_paths_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let c = ServiceConfig::parse(MINIMAL, dir.path()).unwrap();
        match c.validate() {
            Err(ConfigError::MissingPath { key, .. }) => assert_eq!(key, "knowledge_dir"),
            other => panic!("{other:?}"),
        }
        std::fs::create_dir(dir.path().join("kb")).unwrap();
        std::fs::write(dir.path().join("golden.json"), "[]").unwrap();
        std::fs::write(dir.path().join("script.json"), "{}").unwrap();
        match c.validate() {
            Err(ConfigError::MissingPath { key, .. }) => assert_eq!(key, "databases.shop"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn provider_embedder_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["golden.json", "script.json"] {
            std::fs::write(dir.path().join(f), "[]").unwrap();
        }
        std::fs::create_dir(dir.path().join("kb")).unwrap();
        let text = MINIMAL.replace("shop = \"dbs/shop.sqlite\"", "retail = \"fixture:retail\"") + "\n[embedder]\nkind = \"provider\"\n";
        let c = ServiceConfig::parse(&text, dir.path()).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { ref key, .. }) if key == "embedder.kind"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ServiceConfig::parse(&format!("{MINIMAL}\nlisten_port = 3\n"), Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }
}
