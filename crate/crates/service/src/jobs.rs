//! Background jobs: archive processing and model training, run by a small
//! pool of workers over the lease queue in [`Store`].

use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;
use tokio::task::JoinHandle;

use sepa_core::featurization::{aggregate_daily, DailyFeatureRow, FeatureMatrix, FeatureSelector};
use sepa_core::ingestion::{load_upload, purge_upload, RawStore, UploadId};
use sepa_core::modeling::{
    gbt_train, phm_train, GbtParams, ModelKind, ModelMeta, ModelRegistry, ModelTier, TrainConfig, TrainedModel,
};
use sepa_core::{Task, UserId};

use crate::storage::{FeatureCommit, Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    ProcessUpload,
    TrainModel,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::ProcessUpload => "process_upload",
            JobKind::TrainModel => "train_model",
        }
    }
}

impl FromStr for JobKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "process_upload" => Ok(JobKind::ProcessUpload),
            "train_model" => Ok(JobKind::TrainModel),
            other => Err(format!("unknown job kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Processing,
    Done,
    Failed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Queued => "queued",
            JobStatus::Processing => "processing",
            JobStatus::Done => "done",
            JobStatus::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    /// Forward moves only. A processing job may be leased again after its
    /// lease runs out, which keeps it in `processing`.
    pub fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Processing)
                | (JobStatus::Processing, JobStatus::Processing)
                | (JobStatus::Processing, JobStatus::Done)
                | (JobStatus::Processing, JobStatus::Failed)
        )
    }
}

impl FromStr for JobStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "queued" => Ok(JobStatus::Queued),
            "processing" => Ok(JobStatus::Processing),
            "done" => Ok(JobStatus::Done),
            "failed" => Ok(JobStatus::Failed),
            other => Err(format!("unknown job status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub user_id: Option<UserId>,
    pub upload_id: Option<UploadId>,
    pub payload: serde_json::Value,
    /// Progress or outcome, human readable.
    pub note: String,
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lease_owner: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub task: Task,
    pub tier: ModelTier,
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Failed(String),
}

/// Shared handles a worker needs.
#[derive(Clone)]
pub struct JobContext {
    pub store: Arc<Store>,
    pub registry: Arc<RwLock<ModelRegistry>>,
    pub wake: Arc<Notify>,
}

impl JobContext {
    pub fn new(store: Arc<Store>, registry: Arc<RwLock<ModelRegistry>>) -> Self {
        Self { store, registry, wake: Arc::new(Notify::new()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    pub workers: usize,
    pub poll_ms: u64,
    pub lease_secs: i64,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self { workers: 2, poll_ms: 250, lease_secs: 600 }
    }
}

/// Fits the selector and the tier's model on every stored labeled row.
/// The generalized tier is a gradient-boosted ensemble; the personalized tier
/// is the person-embedding network.
pub fn train_model(rows: &[DailyFeatureRow], request: TrainRequest, now: DateTime<Utc>) -> Result<TrainedModel, String> {
    let m = FeatureMatrix::from_rows(rows).map_err(|e| e.to_string())?;
    let selector = FeatureSelector::default().fit(&m, request.task).map_err(|e| e.to_string())?;
    let data = sepa_core::modeling::Dataset::from_matrix(&selector.project(&m).map_err(|e| e.to_string())?, request.task);
    let model = match request.tier {
        ModelTier::GeneralizedColdStart => ModelKind::Gbt(gbt_train(&data, &GbtParams::default()).map_err(|e| e.to_string())?),
        ModelTier::Personalized => {
            ModelKind::Phm(phm_train(&data, &TrainConfig::for_task(request.task)).map_err(|e| e.to_string())?)
        }
    };
    let meta = ModelMeta {
        task: request.task,
        tier: request.tier,
        version: 0,
        trained_at: now,
        feature_names: selector.kept_features.clone(),
        selector: Some(selector),
    };
    Ok(TrainedModel::new(meta, model))
}

fn process_upload(ctx: &JobContext, job: &Job, worker: &str) -> Result<String, JobError> {
    let store = ctx.store.as_ref();
    let upload_id = job.upload_id.clone().ok_or_else(|| JobError::Failed("job has no upload".into()))?;
    let user = job.user_id.clone().ok_or_else(|| JobError::Failed("job has no user".into()))?;
    let meta = store
        .meta(&upload_id)
        .map_err(|e| JobError::Failed(e.to_string()))?
        .ok_or_else(|| JobError::Failed(format!("unknown upload {upload_id}")))?;

    let mut summary = String::from("features already committed");
    if !meta.committed {
        store.set_note(&job.id, worker, "parsing archive", Utc::now())?;
        let parsed = load_upload(store, &upload_id).map_err(|e| JobError::Failed(e.to_string()))?;
        let profile = match parsed.profile.clone() {
            Some(p) => p,
            None => store.user(&user)?.ok_or_else(|| JobError::Failed(format!("no profile for {user}")))?,
        };
        if profile.user_id != user {
            return Err(JobError::Failed(format!("archive profile belongs to {}", profile.user_id)));
        }
        store.set_note(&job.id, worker, "computing daily features", Utc::now())?;
        let rows = aggregate_daily(&parsed.records, &parsed.reports, &profile);
        let labeled = rows.iter().filter(|r| r.labels.is_some()).count();
        let commit = FeatureCommit { job_id: &job.id, worker, upload: &meta, rows: &rows, profile: parsed.profile.as_ref() };
        store.commit_features(&commit, Utc::now())?;
        summary = format!("{} days ({labeled} labeled), {} lines rejected", rows.len(), parsed.reject_count());
    }
    purge_upload(store, &upload_id).map_err(|e| JobError::Failed(e.to_string()))?;
    Ok(format!("{summary}; raw archive purged"))
}

fn run_training(ctx: &JobContext, job: &Job, worker: &str) -> Result<String, JobError> {
    let request: TrainRequest =
        serde_json::from_value(job.payload.clone()).map_err(|e| JobError::Failed(format!("bad payload: {e}")))?;
    ctx.store.set_note(&job.id, worker, "training", Utc::now())?;
    let rows = ctx.store.all_rows()?;
    let model = train_model(&rows, request, Utc::now()).map_err(JobError::Failed)?;
    let version = ctx.store.save_model(&model)?;
    *ctx.registry.write() = ctx.store.load_registry()?;
    Ok(format!("trained {} {} v{version} on {} rows", request.tier, request.task, rows.len()))
}

/// Runs one leased job to completion and records the outcome.
pub fn run_job(ctx: &JobContext, job: &Job, worker: &str) -> Result<Job, StoreError> {
    let outcome = match job.kind {
        JobKind::ProcessUpload => process_upload(ctx, job, worker),
        JobKind::TrainModel => run_training(ctx, job, worker),
    };
    match outcome {
        Ok(note) => ctx.store.finish(&job.id, worker, JobStatus::Done, &note, Utc::now()),
        Err(JobError::Store(e)) => Err(e),
        Err(JobError::Failed(note)) => {
            log::warn!("job {} failed: {note}", job.id);
            ctx.store.finish(&job.id, worker, JobStatus::Failed, &note, Utc::now())
        }
    }
}

/// Leases and runs jobs until the queue is empty.
pub fn drain(ctx: &JobContext, worker: &str, lease: chrono::Duration) -> Result<Vec<Job>, StoreError> {
    let mut done = Vec::new();
    while let Some(job) = ctx.store.lease(worker, Utc::now(), lease)? {
        done.push(run_job(ctx, &job, worker)?);
    }
    Ok(done)
}

pub struct WorkerPool {
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    /// Starts `config.workers` workers. Job bodies run on the blocking pool
    /// so request handlers keep their threads.
    pub fn spawn(ctx: JobContext, config: WorkerConfig) -> Self {
        let handles = (0..config.workers.max(1))
            .map(|i| {
                let ctx = ctx.clone();
                let name = format!("worker-{i}-{}", std::process::id());
                tokio::spawn(async move { worker_loop(ctx, name, config).await })
            })
            .collect();
        Self { handles }
    }

    pub fn shutdown(self) {
        for h in self.handles {
            h.abort();
        }
    }
}

async fn worker_loop(ctx: JobContext, name: String, config: WorkerConfig) {
    let lease = chrono::Duration::seconds(config.lease_secs);
    loop {
        let leased = {
            let (store, name) = (ctx.store.clone(), name.clone());
            tokio::task::spawn_blocking(move || store.lease(&name, Utc::now(), lease)).await
        };
        match leased {
            Ok(Ok(Some(job))) => {
                let (c, n) = (ctx.clone(), name.clone());
                match tokio::task::spawn_blocking(move || run_job(&c, &job, &n)).await {
                    Ok(Ok(job)) => log::info!("{name}: job {} {}: {}", job.id, job.status.as_str(), job.note),
                    Ok(Err(e)) => log::error!("{name}: {e}"),
                    Err(e) => log::error!("{name}: job panicked: {e}"),
                }
                // Another waiting job may have been signalled while busy.
                ctx.wake.notify_one();
            }
            Ok(Ok(None)) => {
                tokio::select! {
                    _ = ctx.wake.notified() => {}
                    _ = tokio::time::sleep(Duration::from_millis(config.poll_ms)) => {}
                }
            }
            Ok(Err(e)) => {
                log::error!("{name}: lease failed: {e}");
                tokio::time::sleep(Duration::from_millis(config.poll_ms)).await;
            }
            Err(e) => log::error!("{name}: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_only_move_forward() {
        use JobStatus::*;
        let all = [Queued, Processing, Done, Failed];
        for a in all {
            for b in all {
                let ok = a.can_become(b);
                if ok {
                    assert!(b >= a, "{a:?} -> {b:?}");
                }
                if a.is_terminal() {
                    assert!(!ok);
                }
            }
        }
        assert!(Queued.can_become(Processing));
        assert!(!Queued.can_become(Done));
        assert!(!Done.can_become(Queued));
    }

    #[test]
    fn names_round_trip() {
        for k in [JobKind::ProcessUpload, JobKind::TrainModel] {
            assert_eq!(k.as_str().parse::<JobKind>().unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.as_str());
        }
        for s in [JobStatus::Queued, JobStatus::Processing, JobStatus::Done, JobStatus::Failed] {
            assert_eq!(s.as_str().parse::<JobStatus>().unwrap(), s);
            assert_eq!(serde_json::to_value(s).unwrap(), s.as_str());
        }
    }
}
