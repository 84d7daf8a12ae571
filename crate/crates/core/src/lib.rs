//! Control and planning core for an omnidirectional aerial manipulator:
//! geometric robust pose control, tilt-rotor allocation, ellipsoid collision
//! certificates, a small constrained NLP solver, an offline end-effector
//! planner, a whole-body NMPC, and the plant model used to test them.
//!
//! `no_std` with `alloc`.

#![cfg_attr(not(test), no_std)]
#![cfg_attr(test, allow(unused_imports))]

extern crate alloc;

pub mod collision;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod nlp;
pub mod planner_nmpc;
pub mod planner_offline;
pub mod robot_model;
pub mod sim;

pub use error::{ControlError, GeometryError, ModelError, NlpError, PlanError, SimError};
pub use geometry::{Mat3, RotationMatrix, Vec3};
