//! Service configuration (TOML) and the offline fixture bundle.
//!
//! Secrets never live in the file: the search key, search engine id, model
//! key and API token are read from the environment variables it names.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sepa_retrieval::search::GoogleCseProvider;
use sepa_retrieval::{
    CacheConfig, ExtractiveLlm, FixtureFetcher, FixtureSearchProvider, HttpFetcher, LlmClient, OpenAiCompatibleClient,
    RetrievalError, SearchProvider, Whitelist,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub database: PathBuf,
    pub listen: String,
    pub workers: usize,
    /// One trusted domain per line.
    pub whitelist: PathBuf,
    pub search: SearchConfig,
    pub llm: LlmConfig,
    pub thresholds: Thresholds,
    /// When set, requests must carry `Authorization: Bearer <value of this variable>`.
    pub api_token_env: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            database: PathBuf::from("sepa.db"),
            listen: "127.0.0.1:8080".into(),
            workers: 2,
            whitelist: PathBuf::from("fixtures/offline/whitelist.txt"),
            search: SearchConfig::default(),
            llm: LlmConfig::default(),
            thresholds: Thresholds::default(),
            api_token_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchConfig {
    /// Canned results and pages from a fixture bundle.
    Fixture { dir: PathBuf },
    Google {
        #[serde(default = "default_search_key_env")]
        api_key_env: String,
        #[serde(default = "default_engine_env")]
        engine_id_env: String,
        #[serde(default)]
        video_engine_id_env: Option<String>,
    },
}

fn default_search_key_env() -> String {
    "SEPA_SEARCH_API_KEY".into()
}

fn default_engine_env() -> String {
    "SEPA_SEARCH_ENGINE_ID".into()
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig::Fixture { dir: PathBuf::from("fixtures/offline") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmConfig {
    /// Quotes the top sources; needs no model.
    Extractive,
    OpenaiCompatible {
        base_url: String,
        model: String,
        #[serde(default = "default_llm_key_env")]
        api_key_env: String,
        /// The endpoint is contracted not to retain prompts.
        #[serde(default)]
        no_retention: bool,
    },
}

fn default_llm_key_env() -> String {
    "SEPA_LLM_API_KEY".into()
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig::Extractive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub semantic_similarity: f64,
    pub memory_ttl_hours: i64,
    pub disk_ttl_hours: i64,
    pub semantic_ttl_hours: i64,
    pub fetch_timeout_ms: u64,
    pub llm_timeout_ms: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let c = CacheConfig::default();
        Self {
            semantic_similarity: c.semantic_threshold,
            memory_ttl_hours: c.memory_ttl_hours,
            disk_ttl_hours: c.disk_ttl_hours,
            semantic_ttl_hours: c.semantic_ttl_hours,
            fetch_timeout_ms: 10_000,
            llm_timeout_ms: 60_000,
        }
    }
}

impl Thresholds {
    pub fn cache(&self) -> CacheConfig {
        CacheConfig {
            memory_ttl_hours: self.memory_ttl_hours,
            disk_ttl_hours: self.disk_ttl_hours,
            semantic_ttl_hours: self.semantic_ttl_hours,
            semantic_threshold: self.semantic_similarity,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl ServiceConfig {
    /// Relative paths in the file are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut c: ServiceConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut c.database);
        rebase(&mut c.whitelist);
        if let SearchConfig::Fixture { dir } = &mut c.search {
            rebase(dir);
        }
        Ok(c)
    }

    pub fn api_token(&self) -> Result<Option<String>, ConfigError> {
        self.api_token_env.as_ref().map(|v| env(v)).transpose()
    }
}

fn env(name: &str) -> Result<String, ConfigError> {
    std::env::var(name).map_err(|_| ConfigError::MissingEnv(name.to_string()))
}

/// Search provider and page fetcher built from the configuration.
pub struct WebStack {
    pub provider: Arc<dyn SearchProvider>,
    pub fetcher: Arc<dyn sepa_retrieval::Fetcher>,
}

pub fn build_web(search: &SearchConfig, thresholds: &Thresholds) -> Result<WebStack, ConfigError> {
    match search {
        SearchConfig::Fixture { dir } => {
            let bundle = FixtureBundle::load(dir)?;
            Ok(WebStack { provider: Arc::new(bundle.provider), fetcher: Arc::new(bundle.fetcher) })
        }
        SearchConfig::Google { api_key_env, engine_id_env, video_engine_id_env } => {
            let mut p = GoogleCseProvider::new(env(api_key_env)?, env(engine_id_env)?);
            if let Some(v) = video_engine_id_env {
                p = p.with_video_engine(env(v)?);
            }
            let fetcher = HttpFetcher::new(std::time::Duration::from_millis(thresholds.fetch_timeout_ms));
            Ok(WebStack { provider: Arc::new(p), fetcher: Arc::new(fetcher) })
        }
    }
}

pub fn build_llm(llm: &LlmConfig) -> Arc<dyn LlmClient> {
    match llm {
        LlmConfig::Extractive => Arc::new(ExtractiveLlm::default()),
        LlmConfig::OpenaiCompatible { base_url, model, api_key_env, no_retention } => {
            Arc::new(OpenAiCompatibleClient::new(base_url, model, api_key_env, *no_retention))
        }
    }
}

/// Offline search data:
///
/// ```text
/// <dir>/whitelist.txt      trusted domains
/// <dir>/search/*.json      {query, mode, results}
/// <dir>/pages/index.json   {url: file name}
/// <dir>/pages/*.html
/// ```
pub struct FixtureBundle {
    pub provider: FixtureSearchProvider,
    pub fetcher: FixtureFetcher,
    pub whitelist: Option<Whitelist>,
}

impl FixtureBundle {
    pub fn load(dir: &Path) -> Result<Self, ConfigError> {
        let search_dir = dir.join("search");
        let provider =
            if search_dir.is_dir() { FixtureSearchProvider::from_dir(&search_dir)? } else { FixtureSearchProvider::new() };
        let mut fetcher = FixtureFetcher::new();
        let index_path = dir.join("pages").join("index.json");
        if index_path.is_file() {
            let read = |p: &Path| std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source });
            let index: BTreeMap<String, String> = serde_json::from_str(&read(&index_path)?)
                .map_err(|e| ConfigError::Parse { path: index_path.clone(), message: e.to_string() })?;
            for (url, file) in index {
                fetcher.insert(&url, &read(&dir.join("pages").join(file))?);
            }
        }
        let wl_path = dir.join("whitelist.txt");
        let whitelist = if wl_path.is_file() { Some(Whitelist::load(&wl_path)?) } else { None };
        Ok(Self { provider, fetcher, whitelist })
    }
}
