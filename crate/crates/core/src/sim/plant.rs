use nalgebra::ComplexField;

use crate::error::{ModelError, SimError};
use crate::geometry::{exp_so3, RotationMatrix, Vec3};
use crate::robot_model::{ActuatorCommand, AllocationConfig, Allocator, PlantParams, Wrench};
use crate::sim::disturbance::{DisturbanceContext, DisturbanceModel, DisturbanceSample};

/// Ground-truth vehicle state; angular velocity in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidBodyState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: RotationMatrix,
    pub angular_velocity: Vec3,
    pub joints: Vec3,
    pub joint_rates: Vec3,
}

impl RigidBodyState {
    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .chain(self.rotation.matrix().iter())
            .chain(self.angular_velocity.iter())
            .chain(self.joints.iter())
            .chain(self.joint_rates.iter())
            .all(|x| x.is_finite())
    }
}

/// Commanded arm motion, held between control updates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointTarget {
    pub angles: Vec3,
    pub rates: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig {
    pub servo_time_constant: f64,
    pub rotor_time_constant: f64,
    pub actuator_lags: bool,
    /// Natural frequency of the critically damped joint servos (rad/s).
    pub joint_bandwidth: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { servo_time_constant: 0.06, rotor_time_constant: 0.03, actuator_lags: true, joint_bandwidth: 25.0 }
    }
}

/// Rigid-body plant driven by lagged tilt-rotor actuators.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub config: PlantConfig,
    allocator: Allocator,
    inertia_inv: crate::geometry::Mat3,
}

#[derive(Debug, Clone, Copy)]
struct Rates {
    velocity: Vec3,
    acceleration: Vec3,
    angular_velocity: Vec3,
    angular_acceleration: Vec3,
    joint_rates: Vec3,
    joint_accels: Vec3,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let r = a - two_pi * ((a + core::f64::consts::PI) / two_pi).floor();
    if r <= -core::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

impl Plant {
    pub fn new(params: PlantParams, allocation: &AllocationConfig, config: PlantConfig) -> Result<Self, ModelError> {
        params.validate()?;
        let allocator = Allocator::new(allocation)?;
        let inertia_inv = params.inertia.try_inverse().ok_or(ModelError::NotPositiveDefinite)?;
        Ok(Self { params, config, allocator, inertia_inv })
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    /// Changes the true mass (e.g. when a payload is attached).
    pub fn set_mass(&mut self, mass: f64) {
        self.params.mass = mass;
    }

    /// Moves realized actuator states toward the command over `dt`.
    pub fn advance_actuators(&self, realized: &mut ActuatorCommand, cmd: &ActuatorCommand, dt: f64) {
        if !self.config.actuator_lags {
            *realized = *cmd;
            return;
        }
        let kr = 1.0 - (-dt / self.config.rotor_time_constant).exp();
        let ks = 1.0 - (-dt / self.config.servo_time_constant).exp();
        for i in 0..6 {
            realized.thrust[i] += kr * (cmd.thrust[i] - realized.thrust[i]);
            realized.tilt[i] = wrap_angle(realized.tilt[i] + ks * wrap_angle(cmd.tilt[i] - realized.tilt[i]));
        }
    }

    fn joint_accels(&self, s: &RigidBodyState, target: &JointTarget, offset: f64) -> Vec3 {
        let wn = self.config.joint_bandwidth;
        let goal = target.angles + target.rates * offset;
        (goal - s.joints) * (wn * wn) + (target.rates - s.joint_rates) * (2.0 * wn)
    }

    fn context(s: &RigidBodyState, joint_accels: Vec3, t: f64) -> DisturbanceContext {
        DisturbanceContext { time: t, position: s.position, rotation: s.rotation, joints: s.joints, joint_rates: s.joint_rates, joint_accels }
    }

    /// Ground-truth disturbance acting on the base at `s`.
    pub fn disturbance(&self, s: &RigidBodyState, target: &JointTarget, dist: &DisturbanceModel, t: f64) -> DisturbanceSample {
        dist.evaluate(&Self::context(s, self.joint_accels(s, target, 0.0), t))
    }

    fn rates(&self, s: &RigidBodyState, wrench: &Wrench, target: &JointTarget, offset: f64, dist: &DisturbanceModel, t: f64) -> Rates {
        let joint_accels = self.joint_accels(s, target, offset);
        let d = dist.evaluate(&Self::context(s, joint_accels, t));
        let m = self.params.mass;
        let r = s.rotation.matrix();
        let acceleration = (r * wrench.force + d.force) / m - Vec3::z() * self.params.gravity;
        let w = s.angular_velocity;
        let angular_acceleration = self.inertia_inv * (-w.cross(&(self.params.inertia * w)) + wrench.torque + d.torque);
        Rates { velocity: s.velocity, acceleration, angular_velocity: w, angular_acceleration, joint_rates: s.joint_rates, joint_accels }
    }

    fn stage(s: &RigidBodyState, k: &Rates, h: f64) -> RigidBodyState {
        RigidBodyState {
            position: s.position + k.velocity * h,
            velocity: s.velocity + k.acceleration * h,
            rotation: RotationMatrix::from_matrix_unchecked(s.rotation.matrix() * exp_so3(&(k.angular_velocity * h))),
            angular_velocity: s.angular_velocity + k.angular_acceleration * h,
            joints: s.joints + k.joint_rates * h,
            joint_rates: s.joint_rates + k.joint_accels * h,
        }
    }

    /// Advances the plant one step. The realized actuators are lagged toward
    /// `cmd` first and their wrench is held over the step.
    pub fn step(
        &self,
        state: &RigidBodyState,
        realized: &mut ActuatorCommand,
        cmd: &ActuatorCommand,
        target: &JointTarget,
        dist: &DisturbanceModel,
        t: f64,
        dt: f64,
    ) -> Result<RigidBodyState, SimError> {
        self.advance_actuators(realized, cmd, dt);
        let wrench = self.allocator.wrench(realized);
        self.integrate(state, &wrench, target, dist, t, dt)
    }

    /// RK4 on the translational, angular-rate and joint states with the
    /// rotation advanced by the exponential of the averaged body rate.
    pub fn integrate(
        &self,
        s: &RigidBodyState,
        wrench: &Wrench,
        target: &JointTarget,
        dist: &DisturbanceModel,
        t: f64,
        dt: f64,
    ) -> Result<RigidBodyState, SimError> {
        let h = 0.5 * dt;
        let k1 = self.rates(s, wrench, target, 0.0, dist, t);
        let k2 = self.rates(&Self::stage(s, &k1, h), wrench, target, h, dist, t + h);
        let k3 = self.rates(&Self::stage(s, &k2, h), wrench, target, h, dist, t + h);
        let k4 = self.rates(&Self::stage(s, &k3, dt), wrench, target, dt, dist, t + dt);
        let avg = |f: fn(&Rates) -> Vec3| (f(&k1) + f(&k2) * 2.0 + f(&k3) * 2.0 + f(&k4)) * (dt / 6.0);
        let next = RigidBodyState {
            position: s.position + avg(|k| k.velocity),
            velocity: s.velocity + avg(|k| k.acceleration),
            rotation: s.rotation.integrate_body_rate(&avg(|k| k.angular_velocity)),
            angular_velocity: s.angular_velocity + avg(|k| k.angular_acceleration),
            joints: s.joints + avg(|k| k.joint_rates),
            joint_rates: s.joint_rates + avg(|k| k.joint_accels),
        };
        if !next.is_finite() {
            return Err(SimError::NonFiniteState(t + dt));
        }
        Ok(next)
    }

    /// Linear acceleration of the base at `s` (world frame), for diagnostics.
    pub fn acceleration(&self, s: &RigidBodyState, wrench: &Wrench, dist: &DisturbanceModel, t: f64) -> Vec3 {
        self.rates(s, wrench, &JointTarget { angles: s.joints, rates: s.joint_rates }, 0.0, dist, t).acceleration
    }
}
