use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Opaque user identifier. Never leaves the service boundary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// The three self-reported targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Stress,
    Soreness,
    Injury,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Stress, Task::Soreness, Task::Injury];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Stress => "stress",
            Task::Soreness => "soreness",
            Task::Injury => "injury",
        }
    }

    /// Human label used in query text ("injury risk" rather than "injury").
    pub fn display_name(self) -> &'static str {
        match self {
            Task::Stress => "stress",
            Task::Soreness => "soreness",
            Task::Injury => "injury risk",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stress" => Ok(Task::Stress),
            "soreness" => Ok(Task::Soreness),
            "injury" | "injury_risk" | "injury-risk" => Ok(Task::Injury),
            other => Err(format!("unknown task `{other}` (expected stress, soreness or injury)")),
        }
    }
}
