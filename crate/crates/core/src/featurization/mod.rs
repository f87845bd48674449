//! Daily feature rows and feature selection.
//!
//! Each row describes one user-day `D`: statistics of every stream over the
//! three preceding calendar days and the trailing 72 hours, vitals and sleep
//! architecture of the night ending on the morning of `D`, and constant
//! demographics. Labels are the mean of that day's self-reports.

mod aggregate;
mod catalog;
mod matrix;
mod selection;
pub mod stats;

pub use aggregate::{aggregate_cohort, aggregate_daily, aggregate_daily_with, UserData};
pub use catalog::{CatalogEntry, FeatureCatalog, Statistic, Window, DEMOGRAPHIC_FEATURES};
pub use matrix::FeatureMatrix;
pub use selection::{
    pearson, remove_multicollinear, select_f_test, FeatureSelector, SelectorState,
    DEFAULT_CORRELATION_THRESHOLD, DEFAULT_SELECTED_FEATURES,
};
pub use stats::{dfa_alpha, sample_entropy};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Task, UserId};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series of length {len} is shorter than the required {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("series is constant")]
    ConstantSeries,
    #[error("need at least {need} labeled rows, have {have}")]
    TooFewLabeledRows { have: usize, need: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed matrix file: {0}")]
    Malformed(String),
}

/// Day means of the self-reported scores, each in `[1, 7]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub stress_avg: f64,
    pub soreness_avg: f64,
    pub injury_avg: f64,
}

impl Labels {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Stress => self.stress_avg,
            Task::Soreness => self.soreness_avg,
            Task::Injury => self.injury_avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyFeatureRow {
    pub user_id: UserId,
    pub date: NaiveDate,
    /// Catalog order; identical key order across rows of one matrix.
    pub features: IndexMap<String, f64>,
    pub labels: Option<Labels>,
}

impl DailyFeatureRow {
    pub fn label(&self, task: Task) -> Option<f64> {
        self.labels.map(|l| l.get(task))
    }

    /// Values of `names`, in that order.
    pub fn values_of(&self, names: &[String]) -> Result<Vec<f64>, FeatureError> {
        names
            .iter()
            .map(|n| {
                self.features.get(n).copied().ok_or_else(|| FeatureError::UnknownFeature(n.clone()))
            })
            .collect()
    }
}
