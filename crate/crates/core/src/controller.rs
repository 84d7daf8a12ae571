//! Geometric pose control of the floating base: the tanh-robust integral
//! controller, its sign-function and plain-PID baselines, and evaluators for
//! the Lyapunov functions used in stability checks.

#[allow(unused_imports)]
use nalgebra::ComplexField;

use crate::error::ControlError;
use crate::geometry::{attitude_error, hat, Mat3, RotationMatrix, Vec3};
use crate::robot_model::{PlantParams, Wrench};
use crate::sim::RigidBodyState;

/// Diagonal gains for one loop (translation or rotation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopGains {
    pub kp: Vec3,
    pub kd: Vec3,
    pub ki: Vec3,
    /// Weight blending the proportional error into the composite error.
    pub blend: Vec3,
    /// Amplitude of the saturated integrand.
    pub robust: Vec3,
    /// Slope of the saturation inside the integrand.
    pub sharpness: Vec3,
    /// Offset added to `ki` in the robust integral.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    pub translational: LoopGains,
    pub rotational: LoopGains,
}

impl Default for GainSet {
    fn default() -> Self {
        Self {
            translational: LoopGains {
                kp: Vec3::new(8.0, 8.0, 8.0),
                kd: Vec3::new(5.0, 5.0, 5.0),
                ki: Vec3::new(2.0, 2.0, 4.0),
                blend: Vec3::new(3.0, 2.0, 2.0),
                robust: Vec3::new(2.0, 2.0, 2.0),
                sharpness: Vec3::new(3.0, 3.0, 3.0),
                offset: 1.0,
            },
            rotational: LoopGains {
                kp: Vec3::new(15.0, 20.0, 10.0),
                kd: Vec3::new(10.0, 9.0, 5.0),
                ki: Vec3::repeat(0.08),
                blend: Vec3::repeat(8.0),
                robust: Vec3::repeat(0.2),
                sharpness: Vec3::repeat(10.0),
                offset: 0.02,
            },
        }
    }
}

impl LoopGains {
    fn validate(&self, names: [&'static str; 7]) -> Result<(), ControlError> {
        let vecs = [self.kp, self.kd, self.ki, self.blend, self.robust, self.sharpness];
        for (v, name) in vecs.iter().zip(names) {
            if v.iter().any(|x| !(*x > 0.0)) {
                return Err(ControlError::NonPositiveGain(name));
            }
        }
        if !(self.offset > 0.0) {
            return Err(ControlError::NonPositiveGain(names[6]));
        }
        Ok(())
    }
}

impl GainSet {
    pub fn validate(&self) -> Result<(), ControlError> {
        self.translational.validate(["K_tp", "K_td", "K_ti", "Lambda_t", "Gamma_t", "Theta_t", "rho_t"])?;
        self.rotational.validate(["K_rp", "K_rd", "K_ri", "Lambda_r", "Gamma_r", "Theta_r", "rho_r"])
    }
}

/// Desired base trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Setpoint {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub rotation: RotationMatrix,
    pub angular_velocity: Vec3,
    pub angular_acceleration: Vec3,
}

impl Setpoint {
    pub fn hold(position: Vec3, rotation: RotationMatrix) -> Self {
        Self { position, rotation, ..Default::default() }
    }
}

/// Which saturation shapes the robust integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustKernel {
    Tanh,
    Sign,
}

impl RobustKernel {
    fn apply(self, sharpness: &Vec3, e: &Vec3) -> Vec3 {
        match self {
            RobustKernel::Tanh => sharpness.component_mul(e).map(|x| x.tanh()),
            RobustKernel::Sign => e.map(sign),
        }
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Trapezoidal running integral of a vector signal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Trapezoid {
    pub sum: Vec3,
    last: Option<Vec3>,
}

impl Trapezoid {
    pub fn push(&mut self, x: Vec3, dt: f64) {
        if let Some(prev) = self.last {
            self.sum += (prev + x) * (0.5 * dt);
        }
        self.last = Some(x);
    }

    pub fn clamp(&mut self, bound: &Vec3) {
        self.sum = self.sum.zip_map(bound, |s, b| s.clamp(-b, b));
    }
}

/// Composite-error bookkeeping shared by both loops.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeError {
    /// First composite error (rate error plus blended proportional error).
    pub first: Vec3,
    /// Second composite error: time derivative of `first` plus `first`.
    pub second: Vec3,
    pub first_at_start: Option<Vec3>,
    pub integral: Trapezoid,
}

impl CompositeError {
    fn advance(&mut self, first: Vec3, dt: f64) {
        let rate = match self.first_at_start {
            Some(_) => (first - self.first) / dt,
            None => {
                self.first_at_start = Some(first);
                Vec3::zeros()
            }
        };
        self.first = first;
        self.second = rate + first;
    }

    fn robust_term(&mut self, gains: &LoopGains, kernel: RobustKernel, dt: f64) -> Vec3 {
        let k = gains.ki.add_scalar(gains.offset);
        let integrand = k.component_mul(&self.first) + gains.robust.component_mul(&kernel.apply(&gains.sharpness, &self.first));
        self.integral.push(integrand, dt);
        let start = self.first_at_start.unwrap_or(self.first);
        k.component_mul(&(self.first - start)) + self.integral.sum
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TranslationalErrorState {
    /// `p_d − p`
    pub position: Vec3,
    /// `v_d − v`
    pub velocity: Vec3,
    pub composite: CompositeError,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationalErrorState {
    pub attitude: Vec3,
    pub rate: Vec3,
    pub composite: CompositeError,
}

impl TranslationalErrorState {
    fn observe(&mut self, state: &RigidBodyState, sp: &Setpoint, gains: &LoopGains, dt: f64) {
        self.position = sp.position - state.position;
        self.velocity = sp.velocity - state.velocity;
        self.composite.advance(self.velocity + gains.blend.component_mul(&self.position), dt);
    }
}

impl RotationalErrorState {
    fn observe(&mut self, state: &RigidBodyState, sp: &Setpoint, gains: &LoopGains, dt: f64) {
        let (e_r, _) = attitude_error(&state.rotation, &sp.rotation);
        let rel = state.rotation.matrix().transpose() * sp.rotation.matrix();
        self.attitude = e_r;
        self.rate = rel * sp.angular_velocity - state.angular_velocity;
        self.composite.advance(self.rate + gains.blend.component_mul(&self.attitude), dt);
    }
}

/// Parameters the nominal laws are allowed to know.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalModel {
    pub mass: f64,
    pub inertia: Vec3,
    pub gravity: f64,
}

impl From<&PlantParams> for NominalModel {
    fn from(p: &PlantParams) -> Self {
        Self { mass: p.nominal_mass, inertia: p.nominal_inertia, gravity: p.gravity }
    }
}

/// Body-frame nominal force: gravity compensation, PD and feedforward.
pub fn nominal_force(state: &RigidBodyState, sp: &Setpoint, gains: &LoopGains, model: &NominalModel, err: &TranslationalErrorState) -> Vec3 {
    let world = Vec3::z() * model.gravity + gains.kp.component_mul(&err.position) + gains.kd.component_mul(&err.velocity) + sp.acceleration;
    state.rotation.matrix().transpose() * world * model.mass
}

/// Body-frame nominal torque: gyroscopic cancellation, transported
/// feedforward and PD on the attitude and rate errors.
pub fn nominal_torque(state: &RigidBodyState, sp: &Setpoint, gains: &LoopGains, model: &NominalModel, err: &RotationalErrorState) -> Vec3 {
    let j = Mat3::from_diagonal(&model.inertia);
    let w = state.angular_velocity;
    let rel = state.rotation.matrix().transpose() * sp.rotation.matrix();
    let feedforward = hat(&w) * rel * sp.angular_velocity - rel * sp.angular_acceleration;
    w.cross(&(j * w)) - j * feedforward + j * gains.kp.component_mul(&err.attitude) + j * gains.kd.component_mul(&err.rate)
}

/// Translational robust-integral law with the chosen kernel.
pub fn robust_integral_force(
    state: &RigidBodyState,
    sp: &Setpoint,
    gains: &LoopGains,
    model: &NominalModel,
    kernel: RobustKernel,
    err: &mut TranslationalErrorState,
    dt: f64,
) -> Vec3 {
    err.observe(state, sp, gains, dt);
    let f_n = nominal_force(state, sp, gains, model, err);
    let f_r = err.composite.robust_term(gains, kernel, dt);
    f_n + state.rotation.matrix().transpose() * f_r
}

/// Rotational robust-integral law with the chosen kernel.
pub fn robust_integral_torque(
    state: &RigidBodyState,
    sp: &Setpoint,
    gains: &LoopGains,
    model: &NominalModel,
    kernel: RobustKernel,
    err: &mut RotationalErrorState,
    dt: f64,
) -> Vec3 {
    err.observe(state, sp, gains, dt);
    nominal_torque(state, sp, gains, model, err) + err.composite.robust_term(gains, kernel, dt)
}

pub fn grite_force(
    state: &RigidBodyState,
    sp: &Setpoint,
    gains: &LoopGains,
    model: &NominalModel,
    err: &mut TranslationalErrorState,
    dt: f64,
) -> Vec3 {
    robust_integral_force(state, sp, gains, model, RobustKernel::Tanh, err, dt)
}

pub fn grite_torque(state: &RigidBodyState, sp: &Setpoint, gains: &LoopGains, model: &NominalModel, err: &mut RotationalErrorState, dt: f64) -> Vec3 {
    robust_integral_torque(state, sp, gains, model, RobustKernel::Tanh, err, dt)
}

pub fn grise_force(
    state: &RigidBodyState,
    sp: &Setpoint,
    gains: &LoopGains,
    model: &NominalModel,
    err: &mut TranslationalErrorState,
    dt: f64,
) -> Vec3 {
    robust_integral_force(state, sp, gains, model, RobustKernel::Sign, err, dt)
}

pub fn grise_torque(state: &RigidBodyState, sp: &Setpoint, gains: &LoopGains, model: &NominalModel, err: &mut RotationalErrorState, dt: f64) -> Vec3 {
    robust_integral_torque(state, sp, gains, model, RobustKernel::Sign, err, dt)
}

/// Anti-windup limits for the PID baseline's integral terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidLimits {
    pub force: f64,
    pub torque: f64,
}

impl PidLimits {
    pub fn for_model(model: &NominalModel) -> Self {
        Self { force: 2.0 * model.mass * model.gravity, torque: 1.0 }
    }
}

/// Nominal law plus `K_i ∫e_p`, clamped so the integral term stays within `limit`.
pub fn gpid_force(
    state: &RigidBodyState,
    sp: &Setpoint,
    gains: &LoopGains,
    model: &NominalModel,
    err: &mut TranslationalErrorState,
    limit: f64,
    dt: f64,
) -> Vec3 {
    err.observe(state, sp, gains, dt);
    err.composite.integral.push(err.position, dt);
    err.composite.integral.clamp(&gains.ki.map(|k| limit / k));
    let f_i = gains.ki.component_mul(&err.composite.integral.sum);
    nominal_force(state, sp, gains, model, err) + state.rotation.matrix().transpose() * f_i
}

/// Nominal law plus `K_i ∫e_R`, clamped so the integral term stays within `limit`.
pub fn gpid_torque(
    state: &RigidBodyState,
    sp: &Setpoint,
    gains: &LoopGains,
    model: &NominalModel,
    err: &mut RotationalErrorState,
    limit: f64,
    dt: f64,
) -> Vec3 {
    err.observe(state, sp, gains, dt);
    err.composite.integral.push(err.attitude, dt);
    err.composite.integral.clamp(&gains.ki.map(|k| limit / k));
    nominal_torque(state, sp, gains, model, err) + gains.ki.component_mul(&err.composite.integral.sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Grite,
    Grise,
    Gpid,
}

/// One pose controller instance; the error states are its only mutable state.
#[derive(Debug, Clone)]
pub struct PoseController {
    kind: ControllerKind,
    gains: GainSet,
    model: NominalModel,
    limits: PidLimits,
    translational: TranslationalErrorState,
    rotational: RotationalErrorState,
}

impl PoseController {
    pub fn new(kind: ControllerKind, gains: GainSet, params: &PlantParams) -> Result<Self, ControlError> {
        gains.validate()?;
        let model = NominalModel::from(params);
        Ok(Self {
            kind,
            gains,
            model,
            limits: PidLimits::for_model(&model),
            translational: TranslationalErrorState::default(),
            rotational: RotationalErrorState::default(),
        })
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn update(&mut self, state: &RigidBodyState, sp: &Setpoint, dt: f64) -> Result<Wrench, ControlError> {
        if !(dt > 0.0) {
            return Err(ControlError::NonPositiveStep);
        }
        let (gt, gr, m) = (&self.gains.translational, &self.gains.rotational, &self.model);
        let (f, tau) = match self.kind {
            ControllerKind::Grite => {
                (grite_force(state, sp, gt, m, &mut self.translational, dt), grite_torque(state, sp, gr, m, &mut self.rotational, dt))
            }
            ControllerKind::Grise => {
                (grise_force(state, sp, gt, m, &mut self.translational, dt), grise_torque(state, sp, gr, m, &mut self.rotational, dt))
            }
            ControllerKind::Gpid => (
                gpid_force(state, sp, gt, m, &mut self.translational, self.limits.force, dt),
                gpid_torque(state, sp, gr, m, &mut self.rotational, self.limits.torque, dt),
            ),
        };
        Ok(Wrench::new(f, tau))
    }

    pub fn reset(&mut self) {
        self.translational = TranslationalErrorState::default();
        self.rotational = RotationalErrorState::default();
    }

    pub fn translational_error(&self) -> &TranslationalErrorState {
        &self.translational
    }

    pub fn rotational_error(&self) -> &RotationalErrorState {
        &self.rotational
    }
}

/// `ln cosh x` without overflow.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - core::f64::consts::LN_2
}

/// `|x| − x tanh x`, bounded above by roughly 0.2785.
pub fn tanh_gap(x: f64) -> f64 {
    x.abs() - x * x.tanh()
}

fn robust_potential(gains: &LoopGains, first: &Vec3, uncertainty: &Vec3) -> f64 {
    (0..3)
        .map(|i| {
            let ratio = gains.robust[i] / gains.sharpness[i];
            ratio * ln_cosh(gains.sharpness[i] * first[i]) - first[i] * uncertainty[i] + ratio * core::f64::consts::LN_2
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub value: f64,
    /// The integral-of-tanh potential term.
    pub robust_potential: f64,
    /// Attitude configuration term (zero for translation).
    pub attitude_potential: f64,
}

/// Translational Lyapunov function given the true mass and the lumped
/// uncertainty `(m − m̄)p⃛_d − ḋ_t`.
pub fn lyapunov_translational(err: &TranslationalErrorState, true_mass: f64, gains: &LoopGains, uncertainty: &Vec3) -> LyapunovValue {
    let q = robust_potential(gains, &err.composite.first, uncertainty);
    let value =
        0.5 * err.position.norm_squared() + 0.5 * err.composite.first.norm_squared() + 0.5 * true_mass * err.composite.second.norm_squared() + q;
    LyapunovValue { value, robust_potential: q, attitude_potential: 0.0 }
}

/// Rotational Lyapunov function given the true inertia and lumped uncertainty.
pub fn lyapunov_rotational(
    err: &RotationalErrorState,
    rotation: &RotationMatrix,
    desired: &RotationMatrix,
    true_inertia: &Mat3,
    gains: &LoopGains,
    uncertainty: &Vec3,
) -> LyapunovValue {
    let (_, psi) = attitude_error(rotation, desired);
    let q = robust_potential(gains, &err.composite.first, uncertainty);
    let e2 = err.composite.second;
    let value = 0.5 * err.composite.first.norm_squared() + 0.5 * e2.dot(&(true_inertia * e2)) + q + psi;
    LyapunovValue { value, robust_potential: q, attitude_potential: psi }
}

/// Gain condition for the robust amplitude: `Γ_i ≥ sup|N_i| + sup|Ṅ_i|`.
pub fn robust_gain_sufficient(gains: &LoopGains, uncertainty_sup: &Vec3, uncertainty_rate_sup: &Vec3) -> bool {
    (0..3).all(|i| gains.robust[i] >= uncertainty_sup[i] + uncertainty_rate_sup[i])
}

/// First-order low-pass differentiator used in the noisy-measurement mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassDifferentiator {
    cutoff: f64,
    last: Option<Vec3>,
    rate: Vec3,
}

impl LowPassDifferentiator {
    pub fn new(cutoff_hz: f64) -> Self {
        Self { cutoff: 2.0 * core::f64::consts::PI * cutoff_hz, last: None, rate: Vec3::zeros() }
    }

    pub fn update(&mut self, x: Vec3, dt: f64) -> Vec3 {
        if let Some(prev) = self.last {
            let alpha = dt * self.cutoff / (1.0 + dt * self.cutoff);
            self.rate += ((x - prev) / dt - self.rate) * alpha;
        }
        self.last = Some(x);
        self.rate
    }
}
