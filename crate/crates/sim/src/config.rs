//! JSON run configuration. Every field has a default, so a config file only
//! needs the values it changes.

use std::path::Path;

use oam_core::controller::{GainSet, LoopGains};
use oam_core::geometry::{Mat3, RotationMatrix, Vec3};
use oam_core::nlp::SolverOptions;
use oam_core::planner_nmpc::{NmpcParams, NmpcWeights};
use oam_core::planner_offline::OfflineParams;
use oam_core::robot_model::{box_polytope, AllocationConfig, ManipulatorModel, PlantParams, Pose, GRAVITY};
use oam_core::sim::PlantConfig;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub plant_dt: f64,
    pub control_dt: f64,
    /// Replanning interval of the online planner.
    pub replan_period: f64,
    /// Simulated solve latency: a plan requested at `t` is picked up at `t + latency`.
    pub replan_latency: f64,
    /// Telemetry is written every `telemetry_decimation` control ticks.
    pub telemetry_decimation: usize,
}

impl Default for Rates {
    fn default() -> Self {
        Self { plant_dt: 0.001, control_dt: 0.002, replan_period: 0.1, replan_latency: 0.1, telemetry_decimation: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vehicle {
    pub mass: f64,
    pub inertia: [f64; 3],
    pub nominal_mass: f64,
    pub nominal_inertia: [f64; 3],
    pub arm_length: f64,
    pub drag_ratio: f64,
    pub allocation_weights: [f64; 12],
    pub servo_time_constant: f64,
    pub rotor_time_constant: f64,
    pub actuator_lags: bool,
    pub joint_bandwidth: f64,
    pub mount_height: f64,
    pub link_lengths: [f64; 3],
    pub link_masses: [f64; 3],
    /// Joint box limits in degrees.
    pub joint_lower_deg: [f64; 3],
    pub joint_upper_deg: [f64; 3],
    pub base_semi_axes: [f64; 3],
    pub link_radius: f64,
}

impl Default for Vehicle {
    fn default() -> Self {
        let p = PlantParams::default();
        let a = AllocationConfig::default();
        let m = ManipulatorModel::default();
        let c = PlantConfig::default();
        Self {
            mass: p.mass,
            inertia: [p.inertia[(0, 0)], p.inertia[(1, 1)], p.inertia[(2, 2)]],
            nominal_mass: p.nominal_mass,
            nominal_inertia: p.nominal_inertia.into(),
            arm_length: a.arm_length,
            drag_ratio: a.drag_ratio,
            allocation_weights: a.weights,
            servo_time_constant: c.servo_time_constant,
            rotor_time_constant: c.rotor_time_constant,
            actuator_lags: c.actuator_lags,
            joint_bandwidth: c.joint_bandwidth,
            mount_height: m.mount.position.z,
            link_lengths: m.link_lengths,
            link_masses: [0.03, 0.02, 0.02],
            joint_lower_deg: [-100.0, -120.0, -120.0],
            joint_upper_deg: [100.0, 120.0, 120.0],
            base_semi_axes: [0.3, 0.3, 0.1],
            link_radius: 0.03,
        }
    }
}

impl Vehicle {
    pub fn plant_params(&self) -> PlantParams {
        PlantParams {
            mass: self.mass,
            inertia: Mat3::from_diagonal(&Vec3::from(self.inertia)),
            nominal_mass: self.nominal_mass,
            nominal_inertia: Vec3::from(self.nominal_inertia),
            gravity: GRAVITY,
        }
    }

    pub fn allocation(&self) -> AllocationConfig {
        AllocationConfig { arm_length: self.arm_length, drag_ratio: self.drag_ratio, weights: self.allocation_weights }
    }

    pub fn plant_config(&self) -> PlantConfig {
        PlantConfig {
            servo_time_constant: self.servo_time_constant,
            rotor_time_constant: self.rotor_time_constant,
            actuator_lags: self.actuator_lags,
            joint_bandwidth: self.joint_bandwidth,
        }
    }

    pub fn manipulator(&self) -> ManipulatorModel {
        let lower = self.joint_lower_deg.map(f64::to_radians);
        let upper = self.joint_upper_deg.map(f64::to_radians);
        ManipulatorModel {
            mount: Pose { position: Vec3::new(0.0, 0.0, self.mount_height), rotation: RotationMatrix::identity() },
            link_lengths: self.link_lengths,
            polytope: box_polytope(&lower, &upper),
            ..ManipulatorModel::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopGainsConfig {
    pub kp: [f64; 3],
    pub kd: [f64; 3],
    pub ki: [f64; 3],
    pub blend: [f64; 3],
    pub robust: [f64; 3],
    pub sharpness: [f64; 3],
    pub offset: f64,
}

impl From<&LoopGains> for LoopGainsConfig {
    fn from(g: &LoopGains) -> Self {
        Self {
            kp: g.kp.into(),
            kd: g.kd.into(),
            ki: g.ki.into(),
            blend: g.blend.into(),
            robust: g.robust.into(),
            sharpness: g.sharpness.into(),
            offset: g.offset,
        }
    }
}

impl From<&LoopGainsConfig> for LoopGains {
    fn from(g: &LoopGainsConfig) -> Self {
        Self {
            kp: g.kp.into(),
            kd: g.kd.into(),
            ki: g.ki.into(),
            blend: g.blend.into(),
            robust: g.robust.into(),
            sharpness: g.sharpness.into(),
            offset: g.offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    pub translational: LoopGainsConfig,
    pub rotational: LoopGainsConfig,
}

impl Default for GainsConfig {
    fn default() -> Self {
        let g = GainSet::default();
        Self { translational: (&g.translational).into(), rotational: (&g.rotational).into() }
    }
}

impl GainsConfig {
    pub fn gain_set(&self) -> GainSet {
        GainSet { translational: (&self.translational).into(), rotational: (&self.rotational).into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    pub horizon: f64,
    pub dt: f64,
    pub jerk_weight: f64,
    pub angular_jerk_weight: f64,
    pub decay_rate: f64,
    pub margin: f64,
    pub ee_radius: f64,
    pub max_iterations: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        let p = OfflineParams::default();
        Self {
            horizon: p.horizon,
            dt: p.dt,
            jerk_weight: p.jerk_weight,
            angular_jerk_weight: p.angular_jerk_weight,
            decay_rate: p.decay_rate,
            margin: p.margin,
            ee_radius: p.ee_radius,
            max_iterations: p.solver.max_iter,
        }
    }
}

impl OfflineConfig {
    pub fn params(&self) -> OfflineParams {
        let d = OfflineParams::default();
        OfflineParams {
            horizon: self.horizon,
            dt: self.dt,
            jerk_weight: self.jerk_weight,
            angular_jerk_weight: self.angular_jerk_weight,
            decay_rate: self.decay_rate,
            margin: self.margin,
            ee_radius: self.ee_radius,
            solver: SolverOptions { max_iter: self.max_iterations, ..d.solver },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub steps: usize,
    pub dt: f64,
    pub position_weight: f64,
    pub orientation_weight: [f64; 3],
    pub input_weight: [f64; 9],
    pub manipulability_position: f64,
    pub manipulability_orientation: f64,
    pub input_limit: [f64; 9],
    pub margin: f64,
    /// Growth of every body ellipsoid used for planning (m).
    pub planning_inflation: f64,
    pub max_iterations: usize,
    /// Consecutive failed solves tolerated before the run is aborted.
    pub retry_budget: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        let p = NmpcParams::default();
        Self {
            steps: p.steps,
            dt: p.dt,
            position_weight: p.weights.position,
            orientation_weight: p.weights.orientation.into(),
            input_weight: p.weights.input,
            manipulability_position: p.weights.manipulability_position,
            manipulability_orientation: p.weights.manipulability_orientation,
            input_limit: p.input_limit,
            margin: p.margin,
            planning_inflation: 0.03,
            max_iterations: p.solver.max_iter,
            retry_budget: 10,
        }
    }
}

impl NmpcConfig {
    pub fn params(&self, collision_avoidance: bool, track_orientation: bool) -> NmpcParams {
        let d = NmpcParams::default();
        NmpcParams {
            steps: self.steps,
            dt: self.dt,
            weights: NmpcWeights {
                position: self.position_weight,
                orientation: self.orientation_weight.into(),
                input: self.input_weight,
                manipulability_position: self.manipulability_position,
                manipulability_orientation: self.manipulability_orientation,
            },
            input_limit: self.input_limit,
            margin: self.margin,
            collision_avoidance,
            track_orientation,
            solver: SolverOptions { max_iter: self.max_iterations, ..d.solver },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspConfig {
    /// EE-to-goal distance that closes the gripper (m).
    pub threshold: f64,
    /// Time between closing and attachment (s).
    pub dwell: f64,
    pub payload_mass: f64,
    pub pull_distance: f64,
    pub pull_duration: f64,
    /// Hover time after the pull before the run ends.
    pub hold_after_pull: f64,
    /// Time after the approach plan ends before a missing grasp fails the run.
    pub timeout: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self { threshold: 0.03, dwell: 1.5, payload_mass: 0.1, pull_distance: 0.2, pull_duration: 5.0, hold_after_pull: 2.0, timeout: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceConfig {
    /// Ground-effect boost as a fraction of hover thrust at zero clearance.
    pub ground_effect_fraction: f64,
    /// Decay length of the ground effect; defaults to the base radius.
    pub ground_effect_length: f64,
    pub arm_reaction: bool,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { ground_effect_fraction: 0.15, ground_effect_length: 0.3, arm_reaction: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub rates: Rates,
    pub vehicle: Vehicle,
    pub gains: GainsConfig,
    pub offline: OfflineConfig,
    pub nmpc: NmpcConfig,
    pub grasp: GraspConfig,
    pub disturbance: DisturbanceConfig,
    /// Position error (m) beyond which a run is declared divergent.
    pub divergence_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            rates: Rates::default(),
            vehicle: Vehicle::default(),
            gains: GainsConfig::default(),
            offline: OfflineConfig::default(),
            nmpc: NmpcConfig::default(),
            grasp: GraspConfig::default(),
            disturbance: DisturbanceConfig::default(),
            divergence_limit: 1.0,
        }
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        let cfg: SimConfig = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let r = &self.rates;
        if !(r.plant_dt > 0.0 && r.control_dt > 0.0 && r.replan_period > 0.0) {
            return Err(HarnessError::Config("rates must be positive".into()));
        }
        let ratio = r.control_dt / r.plant_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(HarnessError::Config("control_dt must be a multiple of plant_dt".into()));
        }
        let ratio = r.replan_period / r.control_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(HarnessError::Config("replan_period must be a multiple of control_dt".into()));
        }
        if !(r.replan_latency >= 0.0 && r.replan_latency <= r.replan_period) {
            return Err(HarnessError::Config("replan_latency must lie in [0, replan_period]".into()));
        }
        if r.telemetry_decimation == 0 {
            return Err(HarnessError::Config("telemetry_decimation must be at least 1".into()));
        }
        self.vehicle.plant_params().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.vehicle.allocation().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.vehicle.manipulator().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.gains.gain_set().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.offline.params().steps().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.nmpc.steps == 0 || !(self.nmpc.dt > 0.0) {
            return Err(HarnessError::Config("nmpc horizon must be positive".into()));
        }
        Ok(())
    }

    /// Hover thrust magnitude of the true vehicle.
    pub fn hover_force(&self) -> f64 {
        self.vehicle.mass * GRAVITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_file_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
        assert_eq!(SimConfig::load(&path).unwrap(), SimConfig::default());
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg: SimConfig = serde_json::from_str(r#"{"rates": {"control_dt": 0.004}}"#).unwrap();
        assert_eq!(cfg.rates.control_dt, 0.004);
        assert_eq!(cfg.rates.plant_dt, 0.001);
        assert_eq!(cfg.nmpc, NmpcConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<SimConfig>(r#"{"rates": {"plant_hz": 5}}"#).is_err());
    }

    #[test]
    fn inconsistent_rates_are_rejected() {
        let mut cfg = SimConfig::default();
        cfg.rates.control_dt = 0.0015;
        assert!(cfg.validate().is_err());
        cfg.rates.control_dt = 0.002;
        cfg.rates.replan_latency = 0.2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn conversions_round_trip_core_defaults() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.gains.gain_set(), GainSet::default());
        assert_eq!(cfg.vehicle.plant_params(), PlantParams::default());
        assert_eq!(cfg.vehicle.manipulator(), ManipulatorModel::default());
        assert_eq!(cfg.offline.params(), OfflineParams::default());
        assert_eq!(cfg.nmpc.params(true, false), NmpcParams::default());
    }
}
