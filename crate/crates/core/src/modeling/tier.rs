use serde::{Deserialize, Serialize};

use crate::Task;

/// A user needs strictly more labeled days than this to be personalized.
pub const PERSONALIZATION_MIN_DAYS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    GeneralizedColdStart,
    Personalized,
}

impl ModelTier {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTier::GeneralizedColdStart => "generalized_cold_start",
            ModelTier::Personalized => "personalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierDecision {
    pub tier: ModelTier,
    pub allowed_tasks: Vec<Task>,
}

impl TierDecision {
    pub fn allows(&self, task: Task) -> bool {
        self.allowed_tasks.contains(&task)
    }
}

/// Cold-start users only get the pooled soreness model; the pooled stress and
/// injury models do worse than the cohort mean on unseen users.
pub fn tier_select(labeled_days: usize) -> TierDecision {
    if labeled_days > PERSONALIZATION_MIN_DAYS {
        TierDecision { tier: ModelTier::Personalized, allowed_tasks: Task::ALL.to_vec() }
    } else {
        TierDecision { tier: ModelTier::GeneralizedColdStart, allowed_tasks: vec![Task::Soreness] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_is_strict() {
        for d in [0, 1, 15] {
            let t = tier_select(d);
            assert_eq!(t.tier, ModelTier::GeneralizedColdStart);
            assert_eq!(t.allowed_tasks, vec![Task::Soreness]);
        }
        for d in [16, 17, 400] {
            let t = tier_select(d);
            assert_eq!(t.tier, ModelTier::Personalized);
            assert_eq!(t.allowed_tasks, Task::ALL.to_vec());
        }
    }
}
