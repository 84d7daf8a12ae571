//! Plant simulation pieces that need no operating-system services: the
//! rigid-body integrator with actuator lags, disturbance scripts, the grasp
//! trigger and run metrics.

mod disturbance;
mod grasp;
mod metrics;
mod plant;

pub use disturbance::{ArmReaction, DisturbanceComponent, DisturbanceContext, DisturbanceModel, DisturbanceSample, Surface};
pub use grasp::{GraspEvent, GraspPhase, GraspTrigger};
pub use metrics::{compute_metrics, ErrorStats, RunMetrics, SolveTimeStats, TrackingSample};
pub use plant::{JointTarget, Plant, PlantConfig, RigidBodyState};
