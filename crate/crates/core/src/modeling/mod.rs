//! Risk-score regressors and the tier gate that decides which one serves a user.
//!
//! Every model here consumes a [`Dataset`] of selected features and exposes the
//! same [`Learner`]/[`Model`] pair so the evaluation harnesses can treat them
//! uniformly.

mod forest;
mod gbt;
mod phm;
mod registry;
mod tier;

pub use forest::{train_forest, ForestParams, RandomForest};
pub use gbt::{gbt_predict, gbt_train, GbtEnsemble, GbtParams, Node, RegressionTree, TreeBuilder};
pub use phm::{
    gradient_check, phm_forward, phm_forward_traced, phm_train, Dense, GradientCheck, PhmModel, PhmShape,
    PhmWeights, Scaler, EMBEDDING_DIM,
};
pub use registry::{
    clip_score, predict_daily, ModelKind, ModelMeta, ModelRegistry, PredictionSet, RiskPrediction, TrainedModel,
    SNAPSHOT_FORMAT,
    UNAVAILABLE_IN_COLD_START,
};
pub use tier::{tier_select, ModelTier, TierDecision, PERSONALIZATION_MIN_DAYS};

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurization::FeatureMatrix;
use crate::{Task, UserId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no labeled rows to train on")]
    NoLabeledData,
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("need at least {need} labeled rows, have {have}")]
    TooFewRows { have: usize, need: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("missing features: {0}")]
    MissingFeatures(String),
    #[error("model snapshot: {0}")]
    Snapshot(String),
}

/// Labeled training or test rows for one task, already projected onto the
/// selected features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub users: Vec<UserId>,
    pub dates: Vec<NaiveDate>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    /// Labeled rows of `m` for `task`, in matrix order.
    pub fn from_matrix(m: &FeatureMatrix, task: Task) -> Self {
        let mut d = Dataset::default();
        for (i, y) in m.labeled(task) {
            d.users.push(m.keys[i].0.clone());
            d.dates.push(m.keys[i].1);
            d.x.push(m.values[i].clone());
            d.y.push(y);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            users: idx.iter().map(|&i| self.users[i].clone()).collect(),
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn push(&mut self, user: UserId, date: NaiveDate, x: Vec<f64>, y: f64) {
        self.users.push(user);
        self.dates.push(date);
        self.x.push(x);
        self.y.push(y);
    }

    /// Row order that depends only on row content, so training is
    /// independent of how the caller happened to order its rows.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.users[a]
                .cmp(&self.users[b])
                .then(self.dates[a].cmp(&self.dates[b]))
                .then(self.y[a].total_cmp(&self.y[b]))
                .then_with(|| {
                    self.x[a]
                        .iter()
                        .zip(&self.x[b])
                        .map(|(p, q)| p.total_cmp(q))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        idx
    }

    pub(crate) fn check_width(&self) -> Result<usize, ModelError> {
        let d = self.n_features();
        match self.x.iter().find(|r| r.len() != d) {
            Some(r) => Err(ModelError::DimensionMismatch { expected: d, got: r.len() }),
            None => Ok(d),
        }
    }
}

/// A fitted regressor.
pub trait Model: Send + Sync {
    fn predict(&self, user: &UserId, x: &[f64]) -> Result<f64, ModelError>;
}

/// Fits a fresh [`Model`]; `seed` drives every random choice.
pub trait Learner: Send + Sync {
    fn name(&self) -> &str;
    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Model>, ModelError>;

    /// Fits one model per step of a growing sequence of training sets, each
    /// a superset of the one before. Learners that can continue from the
    /// previous step's model override this.
    fn fit_path(&self, steps: &[(Dataset, u64)]) -> Result<Vec<Box<dyn Model>>, ModelError> {
        steps.iter().map(|(d, seed)| self.fit(d, *seed)).collect()
    }
}

/// Predicts the training-label mean for everyone.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanLearner;

struct MeanModel(f64);

impl Model for MeanModel {
    fn predict(&self, _: &UserId, _: &[f64]) -> Result<f64, ModelError> {
        Ok(self.0)
    }
}

impl Learner for MeanLearner {
    fn name(&self) -> &str {
        "mean"
    }

    fn fit(&self, data: &Dataset, _seed: u64) -> Result<Box<dyn Model>, ModelError> {
        if data.is_empty() {
            return Err(ModelError::NoLabeledData);
        }
        Ok(Box::new(MeanModel(data.y.iter().sum::<f64>() / data.len() as f64)))
    }
}

/// Hyperparameters of the embedding network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub l2_lambda: f64,
    /// Heavy-ball coefficient; 0 gives plain mini-batch gradient descent.
    pub momentum: f64,
    pub task: Task,
    #[serde(default)]
    pub shape: PhmShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            learning_rate: 3e-3,
            batch_size: 32,
            dropout_p: 0.5,
            l2_lambda: 1e-5,
            momentum: 0.9,
            task: Task::Stress,
            shape: PhmShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        Self { task, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.l2_lambda >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("l2_lambda must be non-negative and momentum in [0, 1)");
        }
        Ok(())
    }
}

/// Embedding network learner. With `personalized = false` every user shares
/// one embedding row, which is the non-personalized baseline.
#[derive(Debug, Clone)]
pub struct PhmLearner {
    pub config: TrainConfig,
    pub personalized: bool,
    /// When set, [`Learner::fit_path`] trains the first step from scratch
    /// and fine-tunes each later step for this many epochs.
    pub warm_epochs: Option<usize>,
}

impl PhmLearner {
    pub fn new(config: TrainConfig, personalized: bool) -> Self {
        Self { config, personalized, warm_epochs: None }
    }

    pub fn with_warm_start(mut self, epochs: usize) -> Self {
        self.warm_epochs = Some(epochs);
        self
    }

    fn train(&self, data: &Dataset, seed: u64) -> Result<PhmModel, ModelError> {
        let config = TrainConfig { seed, ..self.config.clone() };
        if self.personalized {
            phm_train(data, &config)
        } else {
            PhmModel::train_shared(data, &config)
        }
    }
}

impl Learner for PhmLearner {
    fn name(&self) -> &str {
        if self.personalized {
            "phm"
        } else {
            "n-phm"
        }
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Model>, ModelError> {
        Ok(Box::new(self.train(data, seed)?))
    }

    fn fit_path(&self, steps: &[(Dataset, u64)]) -> Result<Vec<Box<dyn Model>>, ModelError> {
        let Some(epochs) = self.warm_epochs else {
            return steps.iter().map(|(d, seed)| self.fit(d, *seed)).collect();
        };
        let mut out: Vec<Box<dyn Model>> = Vec::with_capacity(steps.len());
        let mut current: Option<PhmModel> = None;
        for (data, seed) in steps {
            let model = match current.take() {
                None => self.train(data, *seed)?,
                Some(mut prev) => {
                    prev.fine_tune(data, epochs, *seed)?;
                    prev
                }
            };
            out.push(Box::new(model.clone()));
            current = Some(model);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GbtLearner {
    pub params: GbtParams,
}

impl Learner for GbtLearner {
    fn name(&self) -> &str {
        "gbt"
    }

    fn fit(&self, data: &Dataset, _seed: u64) -> Result<Box<dyn Model>, ModelError> {
        Ok(Box::new(gbt_train(data, &self.params)?))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForestLearner {
    pub params: ForestParams,
}

impl Learner for ForestLearner {
    fn name(&self) -> &str {
        "forest"
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Model>, ModelError> {
        Ok(Box::new(train_forest(data, &self.params, seed)?))
    }
}

impl fmt::Display for ModelTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
