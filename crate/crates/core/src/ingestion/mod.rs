//! Health-export ingestion.
//!
//! An export is a ZIP archive holding line-delimited JSON:
//!
//! * `records.jsonl` (or several `records*.jsonl`): one sensor sample per line,
//!   `{"stream": "heart_rate", "ts": "2024-03-01T07:15:00Z", "value": 61.0}`;
//!   sleep epochs additionally carry `"stage": "awake" | "light" | "deep" | "rem"`
//!   and use `value` for the epoch length in minutes.
//! * `reports.jsonl`: `{"date": "2024-03-01", "slot": "morning", "stress": 4,
//!   "soreness": 3, "injury_risk": 2}`.
//! * `profile.json`: `{"age": 21, "sex": "male", "weight": 82.0, "height": 191.0,
//!   "sport": "basketball"}` with an optional `"name"` that is kept locally and
//!   never sent anywhere.
//!
//! Malformed lines are counted and skipped; only an export where more than half
//! of the lines are malformed is rejected outright. Once the derived daily
//! features are committed, [`purge_raw`] deletes the archive bytes.

mod export;
mod raw_store;

pub use export::{parse_export, write_export, LineReject, ParsedExport, RejectReason};
pub use raw_store::{
    load_upload, purge_raw, purge_upload, sha256_hex, MemoryRawStore, PurgeReceipt, RawStore, UploadId,
    UploadMeta,
};

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::UserId;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("upload is not a readable ZIP archive: {0}")]
    NotAnArchive(String),
    #[error("archive contains no record lines")]
    EmptyArchive,
    #[error("export is corrupt: {malformed} of {total} lines malformed")]
    CorruptExport { malformed: usize, total: usize },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("refusing to purge raw data for {user}: uploads {pending:?} have no committed features")]
    PurgeBeforeCommit { user: UserId, pending: Vec<UploadId> },
    #[error("raw data for upload {0} was purged")]
    RawAbsent(UploadId),
    #[error("unknown upload {0}")]
    UnknownUpload(UploadId),
    #[error("raw store failure: {0}")]
    Store(String),
}

/// Sensor stream of a [`RawRecord`]. Units: bpm, ms, %, breaths/min,
/// ml/kg/min, minutes, steps, kcal, minutes, °C, %.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    HeartRate,
    Hrv,
    Spo2,
    RespRate,
    Vo2max,
    SleepStage,
    Steps,
    ActiveCalories,
    Workout,
    WeatherTemp,
    WeatherHumidity,
}

impl Stream {
    pub const ALL: [Stream; 11] = [
        Stream::HeartRate,
        Stream::Hrv,
        Stream::Spo2,
        Stream::RespRate,
        Stream::Vo2max,
        Stream::SleepStage,
        Stream::Steps,
        Stream::ActiveCalories,
        Stream::Workout,
        Stream::WeatherTemp,
        Stream::WeatherHumidity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::HeartRate => "heart_rate",
            Stream::Hrv => "hrv",
            Stream::Spo2 => "spo2",
            Stream::RespRate => "resp_rate",
            Stream::Vo2max => "vo2max",
            Stream::SleepStage => "sleep_stage",
            Stream::Steps => "steps",
            Stream::ActiveCalories => "active_calories",
            Stream::Workout => "workout",
            Stream::WeatherTemp => "weather_temp",
            Stream::WeatherHumidity => "weather_humidity",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stream::ALL.into_iter().find(|st| st.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepStageKind {
    Awake,
    Light,
    Deep,
    Rem,
}

/// One cleaned sensor sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub stream: Stream,
    pub timestamp: DateTime<Utc>,
    pub value: f64,
    pub sleep_stage: Option<SleepStageKind>,
}

impl RawRecord {
    pub fn new(stream: Stream, timestamp: DateTime<Utc>, value: f64) -> Self {
        Self { stream, timestamp, value, sleep_stage: None }
    }

    pub fn sleep(timestamp: DateTime<Utc>, minutes: f64, stage: SleepStageKind) -> Self {
        Self { stream: Stream::SleepStage, timestamp, value: minutes, sleep_stage: Some(stage) }
    }

    /// Range and shape checks applied on ingest. Returns the violated rule.
    pub fn validate(&self) -> Result<(), String> {
        if !self.value.is_finite() {
            return Err("value is not finite".into());
        }
        match self.stream {
            Stream::HeartRate if !(self.value > 20.0 && self.value < 250.0) => {
                Err(format!("heart rate {} outside (20, 250) bpm", self.value))
            }
            Stream::Spo2 if !(self.value > 50.0 && self.value <= 100.0) => {
                Err(format!("SpO2 {} outside (50, 100] %", self.value))
            }
            Stream::SleepStage if self.sleep_stage.is_none() => {
                Err("sleep_stage record without stage".into())
            }
            Stream::SleepStage | Stream::Steps | Stream::ActiveCalories | Stream::Workout
                if self.value < 0.0 =>
            {
                Err(format!("negative {} value {}", self.stream, self.value))
            }
            _ if self.stream != Stream::SleepStage && self.sleep_stage.is_some() => {
                Err("stage given on a non-sleep record".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Morning,
    Afternoon,
    Evening,
}

/// One 1-7 self-assessment taken at a given slot of the day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfReport {
    pub user_id: UserId,
    pub date: NaiveDate,
    pub slot: Slot,
    pub stress: u8,
    pub soreness: u8,
    pub injury_risk: u8,
}

impl SelfReport {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("stress", self.stress),
            ("soreness", self.soreness),
            ("injury_risk", self.injury_risk),
        ] {
            if !(1..=7).contains(&v) {
                return Err(format!("{name} score {v} outside 1..=7"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Other,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Other => "other",
        }
    }

    /// Numeric encoding used as a constant demographic feature.
    pub fn code(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
            Sex::Other => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub age: f64,
    pub sex: Sex,
    pub weight_kg: f64,
    pub height_cm: f64,
    pub sport: String,
    /// Local display name. Scrubbed from anything sent to external services.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

impl UserProfile {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(10.0..=100.0).contains(&self.age) {
            return Err(IngestError::InvalidProfile(format!("age {} outside [10, 100]", self.age)));
        }
        if !(self.weight_kg > 0.0 && self.weight_kg.is_finite()) {
            return Err(IngestError::InvalidProfile(format!("weight {} not positive", self.weight_kg)));
        }
        if !(self.height_cm > 0.0 && self.height_cm.is_finite()) {
            return Err(IngestError::InvalidProfile(format!("height {} not positive", self.height_cm)));
        }
        Ok(())
    }
}
