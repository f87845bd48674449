//! Embedded SQLite persistence: users, raw uploads, feature rows, models,
//! jobs, turn timings and the response cache's disk layer.

use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use parking_lot::Mutex;
use rusqlite::{params, Connection, OptionalExtension, Transaction};

use sepa_core::featurization::DailyFeatureRow;
use sepa_core::ingestion::{IngestError, RawStore, UploadId, UploadMeta, UserProfile};
use sepa_core::modeling::{ModelRegistry, TrainedModel};
use sepa_core::UserId;
use sepa_retrieval::cache::DiskStore;

use crate::jobs::{Job, JobKind, JobStatus};
use crate::latency::TurnTiming;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("job {0} is no longer leased by this worker")]
    LeaseLost(String),
    #[error("job {id}: cannot move from {from:?} to {to:?}")]
    InvalidTransition { id: String, from: JobStatus, to: JobStatus },
    #[error("stored value is corrupt: {0}")]
    Corrupt(String),
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS users (
    user_id TEXT PRIMARY KEY,
    profile TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS uploads (
    id TEXT PRIMARY KEY,
    user_id TEXT NOT NULL,
    sha256 TEXT NOT NULL,
    received_at TEXT NOT NULL,
    committed INTEGER NOT NULL DEFAULT 0,
    purged_at TEXT,
    bytes BLOB
);
CREATE TABLE IF NOT EXISTS feature_rows (
    user_id TEXT NOT NULL,
    date TEXT NOT NULL,
    upload_sha TEXT NOT NULL,
    committed_at TEXT NOT NULL,
    labeled INTEGER NOT NULL,
    row TEXT NOT NULL,
    PRIMARY KEY (user_id, date, upload_sha)
);
CREATE TABLE IF NOT EXISTS models (
    tier TEXT NOT NULL,
    task TEXT NOT NULL,
    version INTEGER NOT NULL,
    snapshot TEXT NOT NULL,
    PRIMARY KEY (tier, task, version)
);
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    seq INTEGER NOT NULL,
    kind TEXT NOT NULL,
    user_id TEXT,
    upload_id TEXT,
    payload TEXT NOT NULL,
    status TEXT NOT NULL,
    note TEXT NOT NULL,
    attempts INTEGER NOT NULL DEFAULT 0,
    lease_owner TEXT,
    lease_expires TEXT,
    created_at TEXT NOT NULL,
    updated_at TEXT NOT NULL,
    started_at TEXT,
    finished_at TEXT
);
CREATE TABLE IF NOT EXISTS timings (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    turn_id TEXT NOT NULL,
    user_id TEXT NOT NULL,
    used_web INTEGER NOT NULL,
    elapsed_ms REAL NOT NULL,
    cache_provenance TEXT NOT NULL,
    recorded_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS cache (
    key TEXT PRIMARY KEY,
    bytes BLOB NOT NULL
);
";

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc)).map_err(|e| StoreError::Corrupt(format!("{s}: {e}")))
}

fn parse_opt_ts(s: Option<String>) -> Result<Option<DateTime<Utc>>, StoreError> {
    s.as_deref().map(parse_ts).transpose()
}

fn day(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// A feature commit for one processed upload.
#[derive(Debug, Clone)]
pub struct FeatureCommit<'a> {
    pub job_id: &'a str,
    pub worker: &'a str,
    pub upload: &'a UploadMeta,
    pub rows: &'a [DailyFeatureRow],
    pub profile: Option<&'a UserProfile>,
}

/// All persistence behind one connection; writes are serialized by the lock.
pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    // Users

    pub fn put_user(&self, profile: &UserProfile) -> Result<(), StoreError> {
        let json = serde_json::to_string(profile)?;
        self.conn.lock().execute(
            "INSERT INTO users (user_id, profile) VALUES (?1, ?2)
             ON CONFLICT(user_id) DO UPDATE SET profile = excluded.profile",
            params![profile.user_id.as_str(), json],
        )?;
        Ok(())
    }

    pub fn user(&self, id: &UserId) -> Result<Option<UserProfile>, StoreError> {
        let json: Option<String> = self
            .conn
            .lock()
            .query_row("SELECT profile FROM users WHERE user_id = ?1", params![id.as_str()], |r| r.get(0))
            .optional()?;
        Ok(json.map(|j| serde_json::from_str(&j)).transpose()?)
    }

    pub fn users(&self) -> Result<Vec<UserId>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare("SELECT user_id FROM users ORDER BY user_id")?;
        let ids = stmt.query_map([], |r| r.get::<_, String>(0))?.collect::<Result<Vec<_>, _>>()?;
        Ok(ids.into_iter().map(UserId::new).collect())
    }

    // Uploads and jobs

    /// Stores the archive and queues its processing job in one transaction.
    /// Fails with `Conflict` while another upload job of the user is active.
    pub fn enqueue_upload(&self, user: &UserId, bytes: Vec<u8>, now: DateTime<Utc>) -> Result<Job, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let active: Option<String> = tx
            .query_row(
                "SELECT id FROM jobs WHERE kind = ?1 AND user_id = ?2 AND status IN ('queued', 'processing') LIMIT 1",
                params![JobKind::ProcessUpload.as_str(), user.as_str()],
                |r| r.get(0),
            )
            .optional()?;
        if let Some(id) = active {
            return Err(StoreError::Conflict(format!("upload job {id} is still active for {user}")));
        }
        let meta = insert_upload(&tx, user, bytes, now)?;
        let job = insert_job(&tx, JobKind::ProcessUpload, Some(user), Some(&meta.id), serde_json::Value::Null, now)?;
        tx.commit()?;
        Ok(job)
    }

    pub fn enqueue(
        &self,
        kind: JobKind,
        user: Option<&UserId>,
        payload: serde_json::Value,
        now: DateTime<Utc>,
    ) -> Result<Job, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let job = insert_job(&tx, kind, user, None, payload, now)?;
        tx.commit()?;
        Ok(job)
    }

    pub fn job(&self, id: &str) -> Result<Option<Job>, StoreError> {
        let conn = self.conn.lock();
        read_job(&conn, id)
    }

    pub fn jobs_for(&self, user: &UserId) -> Result<Vec<Job>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare("SELECT id FROM jobs WHERE user_id = ?1 ORDER BY seq")?;
        let ids = stmt.query_map(params![user.as_str()], |r| r.get::<_, String>(0))?.collect::<Result<Vec<_>, _>>()?;
        ids.iter().map(|id| read_job(&conn, id).map(|j| j.expect("listed job exists"))).collect()
    }

    /// Takes the oldest queued job, or a processing job whose lease ran out.
    pub fn lease(&self, worker: &str, now: DateTime<Utc>, lease: chrono::Duration) -> Result<Option<Job>, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let id: Option<String> = tx
            .query_row(
                "SELECT id FROM jobs
                 WHERE status = 'queued' OR (status = 'processing' AND lease_expires < ?1)
                 ORDER BY seq LIMIT 1",
                params![ts(now)],
                |r| r.get(0),
            )
            .optional()?;
        let Some(id) = id else { return Ok(None) };
        tx.execute(
            "UPDATE jobs SET status = 'processing', lease_owner = ?2, lease_expires = ?3, attempts = attempts + 1,
                 started_at = COALESCE(started_at, ?4), updated_at = ?4, note = ?5
             WHERE id = ?1",
            params![id, worker, ts(now + lease), ts(now), format!("leased by {worker}")],
        )?;
        let job = read_job(&tx, &id)?;
        tx.commit()?;
        Ok(job)
    }

    pub fn set_note(&self, job_id: &str, worker: &str, note: &str, now: DateTime<Utc>) -> Result<(), StoreError> {
        let conn = self.conn.lock();
        check_lease(&conn, job_id, worker)?;
        conn.execute("UPDATE jobs SET note = ?2, updated_at = ?3 WHERE id = ?1", params![job_id, note, ts(now)])?;
        Ok(())
    }

    /// Commits a processed upload's rows and marks the upload committed, all
    /// or nothing. Rows are keyed by user, date and archive hash, so a
    /// replayed job rewrites the same rows.
    pub fn commit_features(&self, commit: &FeatureCommit<'_>, now: DateTime<Utc>) -> Result<usize, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        check_lease(&tx, commit.job_id, commit.worker)?;
        if let Some(p) = commit.profile {
            tx.execute(
                "INSERT INTO users (user_id, profile) VALUES (?1, ?2)
                 ON CONFLICT(user_id) DO UPDATE SET profile = excluded.profile",
                params![p.user_id.as_str(), serde_json::to_string(p)?],
            )?;
        }
        for row in commit.rows {
            tx.execute(
                "INSERT INTO feature_rows (user_id, date, upload_sha, committed_at, labeled, row)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)
                 ON CONFLICT(user_id, date, upload_sha) DO UPDATE SET
                     committed_at = excluded.committed_at, labeled = excluded.labeled, row = excluded.row",
                params![
                    row.user_id.as_str(),
                    day(row.date),
                    commit.upload.sha256,
                    ts(now),
                    row.labels.is_some(),
                    serde_json::to_string(row)?
                ],
            )?;
        }
        tx.execute("UPDATE uploads SET committed = 1 WHERE id = ?1", params![commit.upload.id.0])?;
        tx.commit()?;
        Ok(commit.rows.len())
    }

    /// Moves a leased job to `done` or `failed`.
    pub fn finish(
        &self,
        job_id: &str,
        worker: &str,
        status: JobStatus,
        note: &str,
        now: DateTime<Utc>,
    ) -> Result<Job, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let job = check_lease(&tx, job_id, worker)?;
        if !job.status.can_become(status) || status == JobStatus::Processing {
            return Err(StoreError::InvalidTransition { id: job_id.to_string(), from: job.status, to: status });
        }
        tx.execute(
            "UPDATE jobs SET status = ?2, note = ?3, updated_at = ?4, finished_at = ?4, lease_owner = NULL,
                 lease_expires = NULL
             WHERE id = ?1",
            params![job_id, status.as_str(), note, ts(now)],
        )?;
        let job = read_job(&tx, job_id)?.expect("job exists");
        tx.commit()?;
        Ok(job)
    }

    // Feature rows

    /// The most recently committed row for the user-day.
    pub fn feature_row(&self, user: &UserId, date: NaiveDate) -> Result<Option<DailyFeatureRow>, StoreError> {
        let json: Option<String> = self
            .conn
            .lock()
            .query_row(
                "SELECT row FROM feature_rows WHERE user_id = ?1 AND date = ?2
                 ORDER BY committed_at DESC, rowid DESC LIMIT 1",
                params![user.as_str(), day(date)],
                |r| r.get(0),
            )
            .optional()?;
        Ok(json.map(|j| serde_json::from_str(&j)).transpose()?)
    }

    pub fn latest_date(&self, user: &UserId) -> Result<Option<NaiveDate>, StoreError> {
        let s: Option<String> = self.conn.lock().query_row(
            "SELECT MAX(date) FROM feature_rows WHERE user_id = ?1",
            params![user.as_str()],
            |r| r.get(0),
        )?;
        s.map(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d").map_err(|e| StoreError::Corrupt(e.to_string())))
            .transpose()
    }

    /// Distinct days carrying a self-report, over all committed uploads.
    pub fn labeled_days(&self, user: &UserId) -> Result<usize, StoreError> {
        let n: i64 = self.conn.lock().query_row(
            "SELECT COUNT(DISTINCT date) FROM feature_rows WHERE user_id = ?1 AND labeled = 1",
            params![user.as_str()],
            |r| r.get(0),
        )?;
        Ok(n as usize)
    }

    /// One row per user-day, the latest commit winning; ordered by user and date.
    pub fn all_rows(&self) -> Result<Vec<DailyFeatureRow>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(
            "SELECT f.row FROM feature_rows f
             WHERE f.rowid = (SELECT g.rowid FROM feature_rows g WHERE g.user_id = f.user_id AND g.date = f.date
                              ORDER BY g.committed_at DESC, g.rowid DESC LIMIT 1)
             ORDER BY f.user_id, f.date",
        )?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?.collect::<Result<Vec<_>, _>>()?;
        rows.iter().map(|j| serde_json::from_str(j).map_err(StoreError::from)).collect()
    }

    pub fn feature_row_count(&self) -> Result<usize, StoreError> {
        let n: i64 = self.conn.lock().query_row("SELECT COUNT(*) FROM feature_rows", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    // Models

    /// Stores a snapshot one version above the latest for its tier and task.
    pub fn save_model(&self, model: &TrainedModel) -> Result<u32, StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let (tier, task) = (model.meta.tier.as_str(), model.meta.task.as_str());
        let latest: Option<i64> = tx.query_row(
            "SELECT MAX(version) FROM models WHERE tier = ?1 AND task = ?2",
            params![tier, task],
            |r| r.get(0),
        )?;
        let version = latest.map_or(1, |v| v as u32 + 1);
        let mut m = model.clone();
        m.meta.version = version;
        let json = m.to_json().map_err(|e| StoreError::Corrupt(e.to_string()))?;
        tx.execute(
            "INSERT INTO models (tier, task, version, snapshot) VALUES (?1, ?2, ?3, ?4)",
            params![tier, task, version, json],
        )?;
        tx.commit()?;
        Ok(version)
    }

    /// Latest snapshot of every tier and task.
    pub fn load_registry(&self) -> Result<ModelRegistry, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(
            "SELECT m.snapshot FROM models m
             WHERE m.version = (SELECT MAX(version) FROM models n WHERE n.tier = m.tier AND n.task = m.task)",
        )?;
        let snaps = stmt.query_map([], |r| r.get::<_, String>(0))?.collect::<Result<Vec<_>, _>>()?;
        let mut registry = ModelRegistry::default();
        for s in snaps {
            registry.insert(TrainedModel::from_json(&s).map_err(|e| StoreError::Corrupt(e.to_string()))?);
        }
        Ok(registry)
    }

    // Timings

    pub fn record_timing(&self, user: &UserId, t: &TurnTiming, now: DateTime<Utc>) -> Result<(), StoreError> {
        self.conn.lock().execute(
            "INSERT INTO timings (turn_id, user_id, used_web, elapsed_ms, cache_provenance, recorded_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                t.turn_id,
                user.as_str(),
                t.used_web,
                t.elapsed_ms,
                serde_json::to_value(t.cache_provenance)?.as_str().unwrap_or("none"),
                ts(now)
            ],
        )?;
        Ok(())
    }

    /// Recorded timings in recording order; `last` keeps only the most recent.
    pub fn timings(&self, last: Option<usize>) -> Result<Vec<TurnTiming>, StoreError> {
        let conn = self.conn.lock();
        let limit = last.map_or(-1, |n| n as i64);
        let mut stmt = conn.prepare(
            "SELECT turn_id, used_web, elapsed_ms, cache_provenance FROM
                 (SELECT * FROM timings ORDER BY seq DESC LIMIT ?1)
             ORDER BY seq",
        )?;
        let rows = stmt
            .query_map(params![limit], |r| {
                Ok((r.get::<_, String>(0)?, r.get::<_, bool>(1)?, r.get::<_, f64>(2)?, r.get::<_, String>(3)?))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter()
            .map(|(turn_id, used_web, elapsed_ms, prov)| {
                Ok(TurnTiming {
                    turn_id,
                    used_web,
                    elapsed_ms,
                    cache_provenance: serde_json::from_value(serde_json::Value::String(prov))?,
                })
            })
            .collect()
    }
}

fn insert_upload(tx: &Transaction<'_>, user: &UserId, bytes: Vec<u8>, now: DateTime<Utc>) -> Result<UploadMeta, StoreError> {
    let meta = UploadMeta {
        id: UploadId(format!("up-{}", uuid::Uuid::new_v4().simple())),
        user_id: user.clone(),
        sha256: sepa_core::ingestion::sha256_hex(&bytes),
        received_at: now,
        committed: false,
        purged_at: None,
    };
    tx.execute(
        "INSERT INTO uploads (id, user_id, sha256, received_at, committed, bytes) VALUES (?1, ?2, ?3, ?4, 0, ?5)",
        params![meta.id.0, user.as_str(), meta.sha256, ts(now), bytes],
    )?;
    Ok(meta)
}

fn insert_job(
    tx: &Transaction<'_>,
    kind: JobKind,
    user: Option<&UserId>,
    upload: Option<&UploadId>,
    payload: serde_json::Value,
    now: DateTime<Utc>,
) -> Result<Job, StoreError> {
    let id = format!("job-{}", uuid::Uuid::new_v4().simple());
    let seq: i64 = tx.query_row("SELECT COALESCE(MAX(seq), 0) + 1 FROM jobs", [], |r| r.get(0))?;
    tx.execute(
        "INSERT INTO jobs (id, seq, kind, user_id, upload_id, payload, status, note, created_at, updated_at)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, 'queued', 'queued', ?7, ?7)",
        params![
            id,
            seq,
            kind.as_str(),
            user.map(UserId::as_str),
            upload.map(|u| u.0.as_str()),
            payload.to_string(),
            ts(now)
        ],
    )?;
    Ok(read_job(tx, &id)?.expect("just inserted"))
}

fn read_job(conn: &Connection, id: &str) -> Result<Option<Job>, StoreError> {
    type RawJob = (String, Option<String>, Option<String>, String, String, String, u32, Option<String>);
    type RawTimes = (String, String, Option<String>, Option<String>);
    let row: Option<(RawJob, RawTimes)> = conn
        .query_row(
            "SELECT kind, user_id, upload_id, payload, status, note, attempts, lease_owner,
                    created_at, updated_at, started_at, finished_at
             FROM jobs WHERE id = ?1",
            params![id],
            |r| {
                Ok((
                    (r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?, r.get(7)?),
                    (r.get(8)?, r.get(9)?, r.get(10)?, r.get(11)?),
                ))
            },
        )
        .optional()?;
    let Some(((kind, user, upload, payload, status, note, attempts, lease_owner), (c, u, s, f))) = row else {
        return Ok(None);
    };
    Ok(Some(Job {
        id: id.to_string(),
        kind: kind.parse().map_err(StoreError::Corrupt)?,
        status: status.parse().map_err(StoreError::Corrupt)?,
        user_id: user.map(UserId::new),
        upload_id: upload.map(UploadId),
        payload: serde_json::from_str(&payload)?,
        note,
        attempts,
        lease_owner,
        created_at: parse_ts(&c)?,
        updated_at: parse_ts(&u)?,
        started_at: parse_opt_ts(s)?,
        finished_at: parse_opt_ts(f)?,
    }))
}

fn check_lease(conn: &Connection, job_id: &str, worker: &str) -> Result<Job, StoreError> {
    let job = read_job(conn, job_id)?.ok_or_else(|| StoreError::NotFound(format!("job {job_id}")))?;
    if job.status != JobStatus::Processing || job.lease_owner.as_deref() != Some(worker) {
        return Err(StoreError::LeaseLost(job_id.to_string()));
    }
    Ok(job)
}

fn store_err(e: StoreError) -> IngestError {
    IngestError::Store(e.to_string())
}

fn read_meta(conn: &Connection, id: &UploadId) -> Result<Option<UploadMeta>, StoreError> {
    let row: Option<(String, String, String, bool, Option<String>)> = conn
        .query_row(
            "SELECT user_id, sha256, received_at, committed, purged_at FROM uploads WHERE id = ?1",
            params![id.0],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)),
        )
        .optional()?;
    row.map(|(user, sha256, received, committed, purged)| {
        Ok(UploadMeta {
            id: id.clone(),
            user_id: UserId::new(user),
            sha256,
            received_at: parse_ts(&received)?,
            committed,
            purged_at: parse_opt_ts(purged)?,
        })
    })
    .transpose()
}

impl RawStore for Store {
    fn put(&self, user: &UserId, bytes: Vec<u8>) -> Result<UploadMeta, IngestError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction().map_err(|e| store_err(e.into()))?;
        let meta = insert_upload(&tx, user, bytes, Utc::now()).map_err(store_err)?;
        tx.commit().map_err(|e| store_err(e.into()))?;
        Ok(meta)
    }

    fn meta(&self, id: &UploadId) -> Result<Option<UploadMeta>, IngestError> {
        read_meta(&self.conn.lock(), id).map_err(store_err)
    }

    fn bytes(&self, id: &UploadId) -> Result<Option<Vec<u8>>, IngestError> {
        let b: Option<Option<Vec<u8>>> = self
            .conn
            .lock()
            .query_row("SELECT bytes FROM uploads WHERE id = ?1", params![id.0], |r| r.get(0))
            .optional()
            .map_err(|e| store_err(e.into()))?;
        match b {
            None => Err(IngestError::UnknownUpload(id.clone())),
            Some(b) => Ok(b),
        }
    }

    fn uploads_for(&self, user: &UserId) -> Result<Vec<UploadMeta>, IngestError> {
        let conn = self.conn.lock();
        let ids: Vec<String> = (|| {
            let mut stmt = conn.prepare("SELECT id FROM uploads WHERE user_id = ?1 ORDER BY received_at, id")?;
            let ids = stmt.query_map(params![user.as_str()], |r| r.get(0))?.collect::<Result<Vec<_>, _>>()?;
            Ok::<_, rusqlite::Error>(ids)
        })()
        .map_err(|e| store_err(e.into()))?;
        ids.into_iter()
            .map(|id| read_meta(&conn, &UploadId(id)).map(|m| m.expect("listed upload exists")).map_err(store_err))
            .collect()
    }

    fn mark_committed(&self, id: &UploadId) -> Result<(), IngestError> {
        let n = self
            .conn
            .lock()
            .execute("UPDATE uploads SET committed = 1 WHERE id = ?1", params![id.0])
            .map_err(|e| store_err(e.into()))?;
        if n == 0 {
            return Err(IngestError::UnknownUpload(id.clone()));
        }
        Ok(())
    }

    fn delete_bytes(&self, id: &UploadId, at: DateTime<Utc>) -> Result<bool, IngestError> {
        let n = self
            .conn
            .lock()
            .execute(
                "UPDATE uploads SET bytes = NULL, purged_at = ?2 WHERE id = ?1 AND bytes IS NOT NULL",
                params![id.0, ts(at)],
            )
            .map_err(|e| store_err(e.into()))?;
        Ok(n > 0)
    }
}

/// Disk layer of the response cache, kept in the same database.
pub struct SqliteCacheStore(pub std::sync::Arc<Store>);

impl DiskStore for SqliteCacheStore {
    fn get(&self, key: &str) -> std::io::Result<Option<Vec<u8>>> {
        self.0
            .conn
            .lock()
            .query_row("SELECT bytes FROM cache WHERE key = ?1", params![key], |r| r.get(0))
            .optional()
            .map_err(std::io::Error::other)
    }

    fn put(&self, key: &str, bytes: &[u8]) -> std::io::Result<()> {
        self.0
            .conn
            .lock()
            .execute(
                "INSERT INTO cache (key, bytes) VALUES (?1, ?2) ON CONFLICT(key) DO UPDATE SET bytes = excluded.bytes",
                params![key, bytes],
            )
            .map(|_| ())
            .map_err(std::io::Error::other)
    }
}
