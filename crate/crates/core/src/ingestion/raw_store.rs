use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{parse_export, IngestError, ParsedExport};
use crate::UserId;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UploadId(pub String);

impl fmt::Display for UploadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadMeta {
    pub id: UploadId,
    pub user_id: UserId,
    /// Hex SHA-256 of the archive bytes; part of the idempotent feature-commit key.
    pub sha256: String,
    pub received_at: DateTime<Utc>,
    pub committed: bool,
    pub purged_at: Option<DateTime<Utc>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Storage for raw upload bytes until their features are committed.
///
/// Purged uploads keep their metadata as a tombstone so later reads can
/// report [`IngestError::RawAbsent`] rather than [`IngestError::UnknownUpload`].
pub trait RawStore: Send + Sync {
    fn put(&self, user: &UserId, bytes: Vec<u8>) -> Result<UploadMeta, IngestError>;
    fn meta(&self, id: &UploadId) -> Result<Option<UploadMeta>, IngestError>;
    /// Archive bytes, or `None` once purged.
    fn bytes(&self, id: &UploadId) -> Result<Option<Vec<u8>>, IngestError>;
    fn uploads_for(&self, user: &UserId) -> Result<Vec<UploadMeta>, IngestError>;
    fn mark_committed(&self, id: &UploadId) -> Result<(), IngestError>;
    /// Drops the bytes; returns false if they were already gone.
    fn delete_bytes(&self, id: &UploadId, at: DateTime<Utc>) -> Result<bool, IngestError>;
}

#[derive(Default)]
pub struct MemoryRawStore {
    inner: Mutex<MemoryInner>,
}

#[derive(Default)]
struct MemoryInner {
    seq: u64,
    uploads: BTreeMap<UploadId, (UploadMeta, Option<Vec<u8>>)>,
}

impl MemoryRawStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RawStore for MemoryRawStore {
    fn put(&self, user: &UserId, bytes: Vec<u8>) -> Result<UploadMeta, IngestError> {
        let mut inner = self.inner.lock().expect("raw store poisoned");
        inner.seq += 1;
        let sha = sha256_hex(&bytes);
        let meta = UploadMeta {
            id: UploadId(format!("upl-{}-{}", &sha[..12], inner.seq)),
            user_id: user.clone(),
            sha256: sha,
            received_at: Utc::now(),
            committed: false,
            purged_at: None,
        };
        inner.uploads.insert(meta.id.clone(), (meta.clone(), Some(bytes)));
        Ok(meta)
    }

    fn meta(&self, id: &UploadId) -> Result<Option<UploadMeta>, IngestError> {
        let inner = self.inner.lock().expect("raw store poisoned");
        Ok(inner.uploads.get(id).map(|(m, _)| m.clone()))
    }

    fn bytes(&self, id: &UploadId) -> Result<Option<Vec<u8>>, IngestError> {
        let inner = self.inner.lock().expect("raw store poisoned");
        match inner.uploads.get(id) {
            Some((_, b)) => Ok(b.clone()),
            None => Err(IngestError::UnknownUpload(id.clone())),
        }
    }

    fn uploads_for(&self, user: &UserId) -> Result<Vec<UploadMeta>, IngestError> {
        let inner = self.inner.lock().expect("raw store poisoned");
        Ok(inner.uploads.values().filter(|(m, _)| &m.user_id == user).map(|(m, _)| m.clone()).collect())
    }

    fn mark_committed(&self, id: &UploadId) -> Result<(), IngestError> {
        let mut inner = self.inner.lock().expect("raw store poisoned");
        let (meta, _) =
            inner.uploads.get_mut(id).ok_or_else(|| IngestError::UnknownUpload(id.clone()))?;
        meta.committed = true;
        Ok(())
    }

    fn delete_bytes(&self, id: &UploadId, at: DateTime<Utc>) -> Result<bool, IngestError> {
        let mut inner = self.inner.lock().expect("raw store poisoned");
        let (meta, bytes) =
            inner.uploads.get_mut(id).ok_or_else(|| IngestError::UnknownUpload(id.clone()))?;
        if bytes.take().is_some() {
            meta.purged_at = Some(at);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurgeReceipt {
    pub user_id: UserId,
    pub deleted: Vec<UploadId>,
    pub purged_at: DateTime<Utc>,
}

/// Deletes every raw archive of `user` whose features are committed.
///
/// Refuses to delete anything while an upload of the user is still
/// uncommitted. Repeat calls succeed with an empty receipt.
pub fn purge_raw(store: &dyn RawStore, user: &UserId) -> Result<PurgeReceipt, IngestError> {
    let uploads = store.uploads_for(user)?;
    let pending: Vec<UploadId> = uploads
        .iter()
        .filter(|m| !m.committed && m.purged_at.is_none())
        .map(|m| m.id.clone())
        .collect();
    if !pending.is_empty() {
        return Err(IngestError::PurgeBeforeCommit { user: user.clone(), pending });
    }
    let now = Utc::now();
    let mut deleted = Vec::new();
    for m in uploads {
        if store.delete_bytes(&m.id, now)? {
            deleted.push(m.id);
        }
    }
    Ok(PurgeReceipt { user_id: user.clone(), deleted, purged_at: now })
}

/// Purges a single committed upload.
pub fn purge_upload(store: &dyn RawStore, id: &UploadId) -> Result<PurgeReceipt, IngestError> {
    let meta = store.meta(id)?.ok_or_else(|| IngestError::UnknownUpload(id.clone()))?;
    if !meta.committed {
        return Err(IngestError::PurgeBeforeCommit { user: meta.user_id, pending: vec![id.clone()] });
    }
    let now = Utc::now();
    let deleted = if store.delete_bytes(id, now)? { vec![id.clone()] } else { Vec::new() };
    Ok(PurgeReceipt { user_id: meta.user_id, deleted, purged_at: now })
}

/// Re-parses a stored upload. Fails with `RawAbsent` once purged.
pub fn load_upload(store: &dyn RawStore, id: &UploadId) -> Result<ParsedExport, IngestError> {
    let meta = store.meta(id)?.ok_or_else(|| IngestError::UnknownUpload(id.clone()))?;
    let bytes = store.bytes(id)?.ok_or_else(|| IngestError::RawAbsent(id.clone()))?;
    parse_export(&bytes, &meta.user_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{write_export, RawRecord, Stream};
    use chrono::TimeZone;

    fn archive() -> Vec<u8> {
        let ts = Utc.with_ymd_and_hms(2024, 3, 1, 7, 0, 0).unwrap();
        write_export(&[RawRecord::new(Stream::HeartRate, ts, 61.0)], &[], None)
    }

    #[test]
    fn purge_after_commit_removes_bytes() {
        let store = MemoryRawStore::new();
        let user = UserId::new("u1");
        let meta = store.put(&user, archive()).unwrap();
        assert!(load_upload(&store, &meta.id).is_ok());
        store.mark_committed(&meta.id).unwrap();

        let receipt = purge_raw(&store, &user).unwrap();
        assert_eq!(receipt.deleted, vec![meta.id.clone()]);
        assert_eq!(store.bytes(&meta.id).unwrap(), None);
        assert!(matches!(load_upload(&store, &meta.id), Err(IngestError::RawAbsent(_))));
    }

    #[test]
    fn purge_is_idempotent() {
        let store = MemoryRawStore::new();
        let user = UserId::new("u1");
        let meta = store.put(&user, archive()).unwrap();
        store.mark_committed(&meta.id).unwrap();
        purge_raw(&store, &user).unwrap();
        let second = purge_raw(&store, &user).unwrap();
        assert!(second.deleted.is_empty());
        let single = purge_upload(&store, &meta.id).unwrap();
        assert!(single.deleted.is_empty());
    }

    #[test]
    fn purge_before_commit_is_refused() {
        let store = MemoryRawStore::new();
        let user = UserId::new("u1");
        let meta = store.put(&user, archive()).unwrap();
        let err = purge_raw(&store, &user).unwrap_err();
        assert!(matches!(err, IngestError::PurgeBeforeCommit { .. }));
        assert!(store.bytes(&meta.id).unwrap().is_some());
        assert!(matches!(
            purge_upload(&store, &meta.id).unwrap_err(),
            IngestError::PurgeBeforeCommit { .. }
        ));
    }

    #[test]
    fn unknown_upload() {
        let store = MemoryRawStore::new();
        assert!(matches!(
            load_upload(&store, &UploadId("nope".into())).unwrap_err(),
            IngestError::UnknownUpload(_)
        ));
    }
}
