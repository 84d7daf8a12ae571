use alloc::vec::Vec;

#[allow(unused_imports)]
use nalgebra::ComplexField;

use crate::geometry::{RotationMatrix, Vec3};
use crate::robot_model::{ManipulatorModel, GRAVITY};

/// Everything a disturbance may depend on at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceContext {
    pub time: f64,
    pub position: Vec3,
    pub rotation: RotationMatrix,
    pub joints: Vec3,
    pub joint_rates: Vec3,
    pub joint_accels: Vec3,
}

/// Force in the world frame, torque in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceSample {
    pub force: Vec3,
    pub torque: Vec3,
}

impl core::ops::AddAssign for DisturbanceSample {
    fn add_assign(&mut self, rhs: Self) {
        self.force += rhs.force;
        self.torque += rhs.torque;
    }
}

/// Reaction of point-mass links (at link midpoints) on the base.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmReaction {
    pub link_masses: [f64; 3],
    pub model: ManipulatorModel,
}

impl ArmReaction {
    fn link_mass_points(&self, theta: &Vec3) -> [Vec3; 3] {
        let poses = self.model.relative_poses(theta);
        let mut out = [Vec3::zeros(); 3];
        for i in 0..3 {
            out[i] = poses.links[i].position + poses.links[i].rotation.matrix() * Vec3::new(0.0, 0.0, 0.5 * self.model.link_lengths[i]);
        }
        out
    }

    pub fn evaluate(&self, ctx: &DisturbanceContext) -> DisturbanceSample {
        // Central second difference along the local joint-space parabola.
        let h = 1e-3;
        let q = |s: f64| ctx.joints + ctx.joint_rates * s + ctx.joint_accels * (0.5 * s * s);
        let r0 = self.link_mass_points(&ctx.joints);
        let rp = self.link_mass_points(&q(h));
        let rm = self.link_mass_points(&q(-h));
        let g_body = ctx.rotation.matrix().transpose() * Vec3::new(0.0, 0.0, -GRAVITY);
        let mut force = Vec3::zeros();
        let mut torque = Vec3::zeros();
        for i in 0..3 {
            let m = self.link_masses[i];
            let acc = (rp[i] - r0[i] * 2.0 + rm[i]) / (h * h);
            let reaction = -acc * m;
            force += reaction;
            torque += r0[i].cross(&(reaction + g_body * m));
        }
        DisturbanceSample { force: ctx.rotation.matrix() * force, torque }
    }
}

/// A horizontal surface producing ground effect; `footprint` limits it to a
/// rectangle (center xy, half extents) with smooth edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub height: f64,
    pub footprint: Option<([f64; 2], [f64; 2])>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Surface {
    fn coverage(&self, p: &Vec3, edge: f64) -> f64 {
        match self.footprint {
            None => 1.0,
            Some((c, half)) => {
                let mut w = 1.0;
                for k in 0..2 {
                    let d = p[k] - c[k];
                    w *= logistic((half[k] - d) / edge) * logistic((half[k] + d) / edge);
                }
                w
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceComponent {
    Arm(ArmReaction),
    Sinusoid {
        force: Vec3,
        torque: Vec3,
        frequency: f64,
        phase: f64,
    },
    /// Upward boost `fraction·hover_force·exp(−clearance/length_scale)`.
    GroundEffect {
        surfaces: Vec<Surface>,
        hover_force: f64,
        fraction: f64,
        length_scale: f64,
    },
    /// World-frame force blended in with a C¹ smoothstep over `ramp` seconds.
    Step {
        force: Vec3,
        onset: f64,
        ramp: f64,
    },
}

impl DisturbanceComponent {
    pub fn evaluate(&self, ctx: &DisturbanceContext) -> DisturbanceSample {
        match self {
            DisturbanceComponent::Arm(arm) => arm.evaluate(ctx),
            DisturbanceComponent::Sinusoid { force, torque, frequency, phase } => {
                let s = (2.0 * core::f64::consts::PI * frequency * ctx.time + phase).sin();
                DisturbanceSample { force: force * s, torque: torque * s }
            }
            DisturbanceComponent::GroundEffect { surfaces, hover_force, fraction, length_scale } => {
                let mut lift = 0.0;
                for s in surfaces {
                    let clearance = ctx.position.z - s.height;
                    if clearance <= 0.0 {
                        continue;
                    }
                    lift += fraction * hover_force * (-clearance / length_scale).exp() * s.coverage(&ctx.position, 0.02);
                }
                DisturbanceSample { force: Vec3::new(0.0, 0.0, lift), torque: Vec3::zeros() }
            }
            DisturbanceComponent::Step { force, onset, ramp } => {
                let s = ((ctx.time - onset) / ramp).clamp(0.0, 1.0);
                DisturbanceSample { force: force * (s * s * (3.0 - 2.0 * s)), torque: Vec3::zeros() }
            }
        }
    }
}

/// Sum of disturbance components.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisturbanceModel {
    pub components: Vec<DisturbanceComponent>,
}

impl DisturbanceModel {
    pub fn evaluate(&self, ctx: &DisturbanceContext) -> DisturbanceSample {
        let mut total = DisturbanceSample::default();
        for c in &self.components {
            total += c.evaluate(ctx);
        }
        total
    }

    pub fn push(&mut self, c: DisturbanceComponent) {
        self.components.push(c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    fn arm() -> ArmReaction {
        ArmReaction { link_masses: [0.12, 0.10, 0.08], model: ManipulatorModel::default() }
    }

    /// Joint sweep θ₁ = θ₂ = A sin(2πt/T) and its derivatives.
    fn sweep(t: f64) -> (Vec3, Vec3, Vec3) {
        let (a, w) = (PI / 4.0, 2.0 * PI / 10.0);
        let (s, c) = ((w * t).sin(), (w * t).cos());
        (Vec3::new(a * s, a * s, 0.0), Vec3::new(a * w * c, a * w * c, 0.0), Vec3::new(-a * w * w * s, -a * w * w * s, 0.0))
    }

    #[test]
    fn straight_arm_at_rest_is_neutral_when_level() {
        let d = arm().evaluate(&DisturbanceContext::default());
        assert!(d.force.norm() < 1e-9 && d.torque.norm() < 1e-12);
    }

    #[test]
    fn static_gravity_torque_matches_hand_calculation() {
        // Arm folded to horizontal at the shoulder: link masses at x = l/2, l1 + l2/2, ...
        let ctx = DisturbanceContext { joints: Vec3::new(PI / 2.0, 0.0, 0.0), ..Default::default() };
        let d = arm().evaluate(&ctx);
        let moment: f64 = 0.12 * 0.075 + 0.10 * (0.15 + 0.06) + 0.08 * (0.27 + 0.05);
        // weight along −z at +x arm gives torque about +y of +g·Σm x
        assert_relative_eq!(d.torque.y, GRAVITY * moment, epsilon = 1e-6);
        assert!(d.force.norm() < 1e-6);
    }

    #[test]
    fn swept_arm_disturbance_is_smooth() {
        let a = arm();
        let model = DisturbanceModel { components: alloc::vec![DisturbanceComponent::Arm(a)] };
        let at = |t: f64| {
            let (q, qd, qdd) = sweep(t);
            model.evaluate(&DisturbanceContext { time: t, joints: q, joint_rates: qd, joint_accels: qdd, ..Default::default() })
        };
        let h = 1e-2;
        let mut max_second = 0.0f64;
        let mut max_torque = 0.0f64;
        for k in 1..2000 {
            let t = k as f64 * 0.01;
            let (m, c, p) = (at(t - h), at(t), at(t + h));
            let second = ((p.torque - c.torque * 2.0 + m.torque) / (h * h)).norm() + ((p.force - c.force * 2.0 + m.force) / (h * h)).norm();
            max_second = max_second.max(second);
            max_torque = max_torque.max(c.torque.norm());
        }
        assert!(max_second < 5.0, "{max_second}");
        assert!(max_torque > 0.1 && max_torque < 0.5, "{max_torque}");
    }

    #[test]
    fn ground_effect_decays_and_respects_footprint() {
        let table = Surface { height: 0.7, footprint: Some(([0.0, 0.0], [0.6, 0.4])) };
        let c = DisturbanceComponent::GroundEffect { surfaces: alloc::vec![table], hover_force: 20.0, fraction: 0.15, length_scale: 0.35 };
        let at = |p: Vec3| c.evaluate(&DisturbanceContext { position: p, ..Default::default() }).force.z;
        assert_relative_eq!(at(Vec3::new(0.0, 0.0, 0.7 + 0.35)), 3.0 * (-1.0f64).exp(), epsilon = 1e-6);
        assert!(at(Vec3::new(2.0, 0.0, 1.0)) < 1e-6);
        assert_eq!(at(Vec3::new(0.0, 0.0, 0.5)), 0.0);
    }

    #[test]
    fn step_is_c1() {
        let c = DisturbanceComponent::Step { force: Vec3::new(0.0, 0.0, -1.0), onset: 1.0, ramp: 0.5 };
        let f = |t: f64| c.evaluate(&DisturbanceContext { time: t, ..Default::default() }).force.z;
        assert_eq!(f(0.5), 0.0);
        assert_eq!(f(2.0), -1.0);
        let h = 1e-6;
        for t in [1.0, 1.5] {
            let left = (f(t) - f(t - h)) / h;
            let right = (f(t + h) - f(t)) / h;
            assert!((left - right).abs() < 1e-4);
        }
    }
}
