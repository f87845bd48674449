//! Predictive half of the coaching engine.
//!
//! Raw wearable exports are parsed by [`ingestion`], turned into one row of
//! engineered features per user-day by [`featurization`], and consumed by the
//! two-tiered models in [`modeling`]: a pooled gradient-boosted ensemble for
//! cold-start users and a personalized embedding network once a user has
//! enough labeled days. [`evaluation`] holds the cross-validation harnesses,
//! the synthetic cohort generator, and the expert-ranking statistics.

pub mod evaluation;
pub mod featurization;
pub mod ingestion;
pub mod modeling;

mod types;

pub use types::{Task, UserId};
