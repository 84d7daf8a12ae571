//! Simulation harness: JSON configuration, built-in scenarios, the
//! closed-loop runner with its planner worker, and run output files.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod scenario;
pub mod worker;

pub use config::SimConfig;
pub use error::HarnessError;
pub use runner::{run_scenario, RunFailure, RunOptions, RunOutcome, TelemetryRow};
pub use scenario::{Scenario, Task, SCENARIO_NAMES};
