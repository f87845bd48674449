//! Wiring between storage, models, the agent and the job workers. The HTTP
//! layer and the CLI both drive this.

use std::sync::Arc;

use chrono::{NaiveDate, Utc};
use parking_lot::RwLock;

use sepa_core::featurization::DailyFeatureRow;
use sepa_core::ingestion::UserProfile;
use sepa_core::modeling::{predict_daily, ModelError, ModelRegistry, PredictionSet};
use sepa_core::UserId;
use sepa_retrieval::{
    CoachingPipeline, ResponseCache, Retriever, RetrieverConfig, SynthesisConfig, WhitelistHandle,
};

use crate::agent::{Agent, LlmRouter, Sessions, ToolRegistry, TurnOutcome, UserDataSource};
use crate::config::{build_llm, build_web, ConfigError, LlmConfig, ServiceConfig};
use crate::jobs::{Job, JobContext, WorkerConfig, WorkerPool};
use crate::latency::{latency_report, LatencyError, LatencyReport};
use crate::storage::{SqliteCacheStore, Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("no feature data for {user} on {date}")]
    NoFeatures { user: UserId, date: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(m) => AppError::Conflict(m),
            other => AppError::Store(other),
        }
    }
}

/// Tier-gated predictions for a stored user-day; the latest day when `date`
/// is `None`.
pub fn predictions_for(
    store: &Store,
    registry: &ModelRegistry,
    user: &UserId,
    date: Option<NaiveDate>,
) -> Result<PredictionSet, AppError> {
    if store.user(user)?.is_none() {
        return Err(AppError::UnknownUser(user.clone()));
    }
    let date = match date {
        Some(d) => d,
        None => store
            .latest_date(user)?
            .ok_or_else(|| AppError::NoFeatures { user: user.clone(), date: "any day".into() })?,
    };
    let row = store
        .feature_row(user, date)?
        .ok_or_else(|| AppError::NoFeatures { user: user.clone(), date: date.to_string() })?;
    let labeled = store.labeled_days(user)?;
    Ok(predict_daily(registry, user, date, Some(&row), labeled, Utc::now())?)
}

/// The agent's view of stored data.
pub struct StoreData {
    pub store: Arc<Store>,
    pub registry: Arc<RwLock<ModelRegistry>>,
}

impl UserDataSource for StoreData {
    fn profile(&self, user: &UserId) -> Result<Option<UserProfile>, String> {
        self.store.user(user).map_err(|e| e.to_string())
    }

    fn latest_row(&self, user: &UserId) -> Result<Option<DailyFeatureRow>, String> {
        let Some(date) = self.store.latest_date(user).map_err(|e| e.to_string())? else { return Ok(None) };
        self.store.feature_row(user, date).map_err(|e| e.to_string())
    }

    fn labeled_days(&self, user: &UserId) -> Result<usize, String> {
        self.store.labeled_days(user).map_err(|e| e.to_string())
    }

    fn predictions(&self, user: &UserId) -> Result<Option<PredictionSet>, String> {
        let registry = self.registry.read().clone();
        match predictions_for(&self.store, &registry, user, None) {
            Ok(set) => Ok(Some(set)),
            Err(AppError::NoFeatures { .. }) => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    }
}

const ZIP_MAGIC: &[u8] = b"PK\x03\x04";

pub struct App {
    pub store: Arc<Store>,
    pub registry: Arc<RwLock<ModelRegistry>>,
    pub agent: Arc<Agent>,
    pub sessions: Arc<Sessions>,
    pub jobs: JobContext,
    pub api_token: Option<String>,
}

impl App {
    /// Builds the app around an existing pipeline. The agent reads from
    /// `store` and the registry loaded from it.
    pub fn new(store: Arc<Store>, pipeline: CoachingPipeline) -> Result<Self, AppError> {
        let registry = Arc::new(RwLock::new(store.load_registry()?));
        let data = Arc::new(StoreData { store: store.clone(), registry: registry.clone() });
        let agent = Agent::new(Arc::new(pipeline), data);
        Ok(Self::assemble(store, registry, agent))
    }

    /// Builds the app, with a custom agent setup applied to the default one.
    pub fn with_agent(
        store: Arc<Store>,
        pipeline: CoachingPipeline,
        customize: impl FnOnce(Agent) -> Agent,
    ) -> Result<Self, AppError> {
        let registry = Arc::new(RwLock::new(store.load_registry()?));
        let data = Arc::new(StoreData { store: store.clone(), registry: registry.clone() });
        let agent = customize(Agent::new(Arc::new(pipeline), data));
        Ok(Self::assemble(store, registry, agent))
    }

    fn assemble(store: Arc<Store>, registry: Arc<RwLock<ModelRegistry>>, agent: Agent) -> Self {
        let jobs = JobContext::new(store.clone(), registry.clone());
        Self { store, registry, agent: Arc::new(agent), sessions: Arc::new(Sessions::default()), jobs, api_token: None }
    }

    pub fn from_config(config: &ServiceConfig, offline: bool) -> Result<Self, AppError> {
        let store = Arc::new(Store::open(&config.database)?);
        let mut config = config.clone();
        if offline {
            config.llm = LlmConfig::Extractive;
            if !matches!(config.search, crate::config::SearchConfig::Fixture { .. }) {
                config.search = crate::config::SearchConfig::default();
            }
        }
        let web = build_web(&config.search, &config.thresholds)?;
        let whitelist = WhitelistHandle::from_file(&config.whitelist).map_err(ConfigError::from)?;
        let mut rconf = RetrieverConfig::default();
        rconf.fetch.timeout_ms = config.thresholds.fetch_timeout_ms;
        let llm = build_llm(&config.llm);
        let pipeline = CoachingPipeline {
            retriever: Retriever::new(web.provider, web.fetcher, whitelist).with_config(rconf),
            llm: llm.clone(),
            cache: ResponseCache::new(config.thresholds.cache()).with_disk(Box::new(SqliteCacheStore(store.clone()))),
            synthesis: SynthesisConfig { timeout_ms: config.thresholds.llm_timeout_ms, ..SynthesisConfig::default() },
        };
        let live = matches!(config.llm, LlmConfig::OpenaiCompatible { .. });
        let mut app = Self::with_agent(store, pipeline, |agent| {
            if live {
                let router = LlmRouter { llm: llm.clone(), tools: ToolRegistry::standard() };
                agent.with_responder(llm.clone()).with_router(Arc::new(router))
            } else {
                agent
            }
        })?;
        app.api_token = config.api_token()?;
        Ok(app)
    }

    pub fn spawn_workers(&self, config: WorkerConfig) -> WorkerPool {
        WorkerPool::spawn(self.jobs.clone(), config)
    }

    fn require_user(&self, user: &UserId) -> Result<UserProfile, AppError> {
        self.store.user(user)?.ok_or_else(|| AppError::UnknownUser(user.clone()))
    }

    pub fn register_user(&self, profile: &UserProfile) -> Result<(), AppError> {
        profile.validate().map_err(|e| AppError::Invalid(e.to_string()))?;
        Ok(self.store.put_user(profile)?)
    }

    /// Queues an archive for processing.
    pub fn upload(&self, user: &UserId, bytes: Vec<u8>) -> Result<Job, AppError> {
        self.require_user(user)?;
        if !bytes.starts_with(ZIP_MAGIC) {
            return Err(AppError::Invalid("body is not a ZIP archive".into()));
        }
        let job = self.store.enqueue_upload(user, bytes, Utc::now())?;
        self.jobs.wake.notify_one();
        Ok(job)
    }

    pub fn job(&self, id: &str) -> Result<Job, AppError> {
        self.store.job(id)?.ok_or_else(|| AppError::UnknownJob(id.to_string()))
    }

    pub fn predictions(&self, user: &UserId, date: Option<NaiveDate>) -> Result<PredictionSet, AppError> {
        let registry = self.registry.read().clone();
        predictions_for(&self.store, &registry, user, date)
    }

    /// Runs one turn for a known user and records its timing.
    pub async fn chat(&self, user: &UserId, message: &str) -> Result<TurnOutcome, AppError> {
        self.require_user(user)?;
        let outcome = self.sessions.run_turn(&self.agent, user, message).await;
        self.store.record_timing(user, &outcome.timing, Utc::now())?;
        Ok(outcome)
    }

    pub fn latency(&self, last: Option<usize>) -> Result<LatencyReport, AppError> {
        Ok(latency_report(&self.store.timings(last)?)?)
    }
}
