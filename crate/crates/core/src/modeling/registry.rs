use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{tier_select, GbtEnsemble, Model, ModelError, ModelTier, PhmModel, RandomForest};
use crate::featurization::{DailyFeatureRow, SelectorState};
use crate::{Task, UserId};

pub const UNAVAILABLE_IN_COLD_START: &str = "unavailable in cold start";

const SCORE_MIN: f64 = 1.0;
const SCORE_MAX: f64 = 7.0;

/// Clamps a raw model output to the 1 to 7 label scale.
pub fn clip_score(v: f64) -> f64 {
    v.clamp(SCORE_MIN, SCORE_MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    Gbt(GbtEnsemble),
    Phm(PhmModel),
    Forest(RandomForest),
}

impl ModelKind {
    fn name(&self) -> &'static str {
        match self {
            ModelKind::Gbt(_) => "gbt",
            ModelKind::Phm(m) if m.personalized => "phm",
            ModelKind::Phm(_) => "n-phm",
            ModelKind::Forest(_) => "forest",
        }
    }

    fn as_model(&self) -> &dyn Model {
        match self {
            ModelKind::Gbt(m) => m,
            ModelKind::Phm(m) => m,
            ModelKind::Forest(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub task: Task,
    pub tier: ModelTier,
    pub version: u32,
    pub trained_at: DateTime<Utc>,
    /// Input columns, in the order the model consumes them.
    pub feature_names: Vec<String>,
    pub selector: Option<SelectorState>,
}

/// Snapshot format: a JSON object `{"format": "sepa-model/1", "meta": {..},
/// "model": {"kind": "gbt" | "phm" | "forest", ..parameters}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub meta: ModelMeta,
    pub model: ModelKind,
}

pub const SNAPSHOT_FORMAT: &str = "sepa-model/1";

impl TrainedModel {
    pub fn new(meta: ModelMeta, model: ModelKind) -> Self {
        Self { format: SNAPSHOT_FORMAT.to_string(), meta, model }
    }

    pub fn version_label(&self) -> String {
        format!("{}-{}-v{}", self.model.name(), self.meta.task, self.meta.version)
    }

    pub fn predict_row(&self, user: &UserId, row: &DailyFeatureRow) -> Result<f64, ModelError> {
        let x = row.values_of(&self.meta.feature_names).map_err(|e| ModelError::MissingFeatures(e.to_string()))?;
        self.model.as_model().predict(user, &x)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Snapshot(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(s).map_err(|e| ModelError::Snapshot(e.to_string()))?;
        if m.format != SNAPSHOT_FORMAT {
            return Err(ModelError::Snapshot(format!("unsupported format `{}`", m.format)));
        }
        Ok(m)
    }
}

/// Current model per (tier, task). Inserting replaces the previous one.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: HashMap<(ModelTier, Task), Arc<TrainedModel>>,
}

impl ModelRegistry {
    /// Stores `model` with a version one above the one it replaces.
    pub fn insert(&mut self, mut model: TrainedModel) -> u32 {
        let key = (model.meta.tier, model.meta.task);
        let version = self.models.get(&key).map_or(1, |m| m.meta.version + 1).max(model.meta.version);
        model.meta.version = version;
        self.models.insert(key, Arc::new(model));
        version
    }

    pub fn get(&self, tier: ModelTier, task: Task) -> Option<Arc<TrainedModel>> {
        self.models.get(&(tier, task)).cloned()
    }

    pub fn all(&self) -> impl Iterator<Item = &Arc<TrainedModel>> {
        self.models.values()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RiskPrediction {
    Available { value: f64, tier: ModelTier, model_version: String, produced_at: DateTime<Utc> },
    Unavailable { tier: ModelTier, reason: String },
}

impl RiskPrediction {
    pub fn value(&self) -> Option<f64> {
        match self {
            RiskPrediction::Available { value, .. } => Some(*value),
            RiskPrediction::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub user_id: UserId,
    pub date: NaiveDate,
    pub tier: ModelTier,
    pub labeled_days: usize,
    pub predictions: IndexMap<Task, RiskPrediction>,
}

/// Predicts every task for the user-day `row`, gated by the user's tier.
pub fn predict_daily(
    registry: &ModelRegistry,
    user: &UserId,
    date: NaiveDate,
    row: Option<&DailyFeatureRow>,
    labeled_days: usize,
    now: DateTime<Utc>,
) -> Result<PredictionSet, ModelError> {
    let row = row.ok_or_else(|| ModelError::MissingFeatures(format!("no feature row for {user} on {date}")))?;
    let decision = tier_select(labeled_days);
    let mut predictions = IndexMap::new();
    for task in Task::ALL {
        let p = if !decision.allows(task) {
            RiskPrediction::Unavailable { tier: decision.tier, reason: UNAVAILABLE_IN_COLD_START.to_string() }
        } else {
            match registry.get(decision.tier, task) {
                Some(model) => RiskPrediction::Available {
                    value: clip_score(model.predict_row(user, row)?),
                    tier: decision.tier,
                    model_version: model.version_label(),
                    produced_at: now,
                },
                None => RiskPrediction::Unavailable { tier: decision.tier, reason: "no trained model".to_string() },
            }
        };
        predictions.insert(task, p);
    }
    Ok(PredictionSet { user_id: user.clone(), date, tier: decision.tier, labeled_days, predictions })
}
