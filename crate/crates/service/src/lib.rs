//! Coaching service: a tool-routing agent over stored wearable data, a job
//! queue for archive processing and training, SQLite persistence, the REST
//! API and the `sepa` command line.

pub mod agent;
pub mod api;
pub mod app;
pub mod config;
pub mod jobs;
pub mod latency;
pub mod storage;

pub use agent::{Agent, ConversationState, Sessions, ToolName, ToolRegistry, TurnOutcome, UserDataSource};
pub use app::{App, AppError};
pub use config::ServiceConfig;
pub use jobs::{Job, JobContext, JobKind, JobStatus, WorkerConfig, WorkerPool};
pub use latency::{five_number, latency_report, FiveNumber, LatencyReport, TurnTiming};
pub use storage::{Store, StoreError};
