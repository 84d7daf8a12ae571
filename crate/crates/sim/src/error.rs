use oam_core::error::{ControlError, PlanError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("planner worker stopped unexpectedly")]
    WorkerLost,
}
