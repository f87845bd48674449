//! Cross-validation harnesses, the synthetic cohort, and expert-ranking statistics.

mod cohort;
mod cv;
mod expert;
mod metrics;

pub use cohort::{generate_cohort, CohortConfig, LabelModel, SyntheticCohort, TASK_HETEROGENEITY};
pub use cv::{
    group_kfold_cv, rolling_origin_cv, CumulativeR2, CvPoint, CvResult, FoldR2, GroupKFoldConfig, Protocol,
    RollingOriginConfig,
};
pub use expert::{
    cliffs_delta, kendalls_w, mean_rank, parse_rankings_csv, summarize_rankings, wilcoxon_signed_rank, MeanRanks,
    QuestionSummary, RankingRecord, RankingSummary, System, WilcoxonResult,
};
pub use metrics::r_squared;

use thiserror::Error;

use crate::modeling::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("truth has zero variance")]
    DegenerateTruth,
    #[error("length mismatch or fewer than 2 points ({0} vs {1})")]
    BadLengths(usize, usize),
    #[error("no user has enough labeled days")]
    TooFewDays,
    #[error("need at least {need} users, have {have}")]
    TooFewGroups { have: usize, need: usize },
    #[error("incomplete rankings: {0}")]
    IncompleteRankings(String),
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("need at least {need} nonzero differences, have {have}")]
    TooFewPairs { have: usize, need: usize },
    #[error("rankings file: {0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
