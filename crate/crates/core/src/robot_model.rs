//! Static description of the vehicle: inertial parameters, tilt-rotor
//! allocation, arm kinematics and the body-ellipsoid decomposition.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use nalgebra::{ComplexField, RealField};
use nalgebra::{Matrix2, SMatrix, SVector, Vector6};

use crate::collision::Ellipsoid;
use crate::error::ModelError;
use crate::geometry::{exp_so3, Mat3, RotationMatrix, Vec3};

pub const GRAVITY: f64 = 9.81;

pub type AllocationMatrix = SMatrix<f64, 6, 12>;
pub type ActuatorVector = SVector<f64, 12>;

/// True and nominal inertial parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    pub mass: f64,
    pub inertia: Mat3,
    pub nominal_mass: f64,
    pub nominal_inertia: Vec3,
    pub gravity: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 2.2,
            inertia: Mat3::from_diagonal(&Vec3::new(0.021, 0.026, 0.037)),
            nominal_mass: 2.13,
            nominal_inertia: Vec3::new(0.02, 0.025, 0.035),
            gravity: GRAVITY,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mass > 0.0) {
            return Err(ModelError::InvalidParameter("mass"));
        }
        if !(self.nominal_mass > 0.0) {
            return Err(ModelError::InvalidParameter("nominal_mass"));
        }
        if self.nominal_inertia.iter().any(|j| !(*j > 0.0)) {
            return Err(ModelError::InvalidParameter("nominal_inertia"));
        }
        if !(self.gravity >= 0.0) {
            return Err(ModelError::InvalidParameter("gravity"));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 || self.inertia.cholesky().is_none() {
            return Err(ModelError::NotPositiveDefinite);
        }
        Ok(())
    }

    pub fn nominal_inertia_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&self.nominal_inertia)
    }
}

/// Rotor geometry constants and the allocation weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationConfig {
    /// Moment arm `L` in metres.
    pub arm_length: f64,
    /// Drag-to-thrust ratio `k_f` in metres.
    pub drag_ratio: f64,
    pub weights: [f64; 12],
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self { arm_length: 0.018, drag_ratio: 0.015, weights: [1.0, 1.0, 0.6, 0.6, 1.0, 1.0, 1.0, 1.0, 0.6, 0.6, 1.0, 1.0] }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.arm_length >= 0.0) {
            return Err(ModelError::InvalidParameter("arm_length"));
        }
        if !(self.drag_ratio >= 0.0) {
            return Err(ModelError::InvalidParameter("drag_ratio"));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(ModelError::InvalidParameter("weights"));
        }
        Ok(())
    }
}

/// The 6×12 map from stacked rotor force components to the body wrench.
pub fn allocation_matrix(cfg: &AllocationConfig) -> AllocationMatrix {
    let c = (PI / 3.0).cos();
    let s = (PI / 3.0).sin();
    let l = cfg.arm_length;
    let k = cfg.drag_ratio;
    #[rustfmt::skip]
    let a1 = [
        [0.0,    -c,     0.0,  -1.0, 0.0,    -c],
        [0.0,     s,     0.0,   0.0, 0.0,    -s],
        [1.0,     0.0,   1.0,   0.0, 1.0,    0.0],
        [-l * c,  k * c, -l,   -k,   -l * c, k * c],
        [l * s,  -k * s, 0.0,   0.0, -l * s, k * s],
        [-k,     -l,     k,    -l,   -k,     -l],
    ];
    #[rustfmt::skip]
    let a2 = [
        [0.0,     c,     0.0,   1.0, 0.0,    c],
        [0.0,    -s,     0.0,   0.0, 0.0,    s],
        [1.0,     0.0,   1.0,   0.0, 1.0,    0.0],
        [l * c,   k * c, l,    -k,   l * c,  k * c],
        [-l * s, -k * s, 0.0,   0.0, l * s,  k * s],
        [k,      -l,     -k,   -l,   k,      -l],
    ];
    let mut a = AllocationMatrix::zeros();
    for r in 0..6 {
        for col in 0..6 {
            a[(r, col)] = a1[r][col];
            a[(r, col + 6)] = a2[r][col];
        }
    }
    a
}

/// Body-frame force and torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.force.x, self.force.y, self.force.z, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(w: &Vector6<f64>) -> Self {
        Self { force: Vec3::new(w[0], w[1], w[2]), torque: Vec3::new(w[3], w[4], w[5]) }
    }
}

/// Per-rotor thrust magnitudes (N) and tilt angles (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActuatorCommand {
    pub thrust: [f64; 6],
    pub tilt: [f64; 6],
}

impl ActuatorCommand {
    /// Recovers thrust and tilt from stacked force components.
    pub fn from_components(b: &ActuatorVector) -> Self {
        let mut cmd = Self::default();
        for i in 0..6 {
            let (x, y) = (b[2 * i], b[2 * i + 1]);
            cmd.thrust[i] = x.hypot(y);
            cmd.tilt[i] = y.atan2(x);
        }
        cmd
    }

    pub fn components(&self) -> ActuatorVector {
        let mut b = ActuatorVector::zeros();
        for i in 0..6 {
            b[2 * i] = self.thrust[i] * self.tilt[i].cos();
            b[2 * i + 1] = self.thrust[i] * self.tilt[i].sin();
        }
        b
    }
}

/// Weighted pseudo-inverse allocation, precomputed once.
#[derive(Debug, Clone)]
pub struct Allocator {
    matrix: AllocationMatrix,
    pseudo_inverse: SMatrix<f64, 12, 6>,
}

pub const MAX_ALLOCATION_CONDITION: f64 = 1e12;

impl Allocator {
    pub fn new(cfg: &AllocationConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let a = allocation_matrix(cfg);
        let w = SMatrix::<f64, 12, 12>::from_diagonal(&SVector::from(cfg.weights));
        let awa = a * w * a.transpose();
        let sv = awa.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond < MAX_ALLOCATION_CONDITION) {
            return Err(ModelError::SingularAllocation(cond));
        }
        let inv = awa.try_inverse().ok_or(ModelError::SingularAllocation(f64::INFINITY))?;
        Ok(Self { matrix: a, pseudo_inverse: w * a.transpose() * inv })
    }

    pub fn matrix(&self) -> &AllocationMatrix {
        &self.matrix
    }

    pub fn components(&self, wrench: &Wrench) -> ActuatorVector {
        self.pseudo_inverse * wrench.to_vector()
    }

    pub fn allocate(&self, wrench: &Wrench) -> ActuatorCommand {
        ActuatorCommand::from_components(&self.components(wrench))
    }

    /// The wrench produced by a given actuator state.
    pub fn wrench(&self, cmd: &ActuatorCommand) -> Wrench {
        Wrench::from_vector(&(self.matrix * cmd.components()))
    }
}

/// A rigid pose (position in the parent frame, orientation).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: RotationMatrix,
}

/// Base pose plus motion-joint angles.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WholeBodyConfig {
    pub position: Vec3,
    pub rotation: RotationMatrix,
    pub joints: Vec3,
}

/// Serial arm with three motion joints; the fourth (gripper) joint is a
/// binary actuator and carries no kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorModel {
    pub mount: Pose,
    /// Each link extends along its joint frame's local z axis.
    pub link_lengths: [f64; 3],
    /// Joint axes expressed in the parent link frame.
    pub joint_axes: [Vec3; 3],
    /// Self-collision polytope rows: `a · θ ≤ b`.
    pub polytope: Vec<([f64; 3], f64)>,
}

impl Default for ManipulatorModel {
    fn default() -> Self {
        let deg = PI / 180.0;
        Self {
            mount: Pose { position: Vec3::new(0.0, 0.0, 0.10), rotation: RotationMatrix::identity() },
            link_lengths: [0.15, 0.12, 0.10],
            joint_axes: [Vec3::y(), Vec3::y(), Vec3::y()],
            polytope: box_polytope(&[-100.0 * deg, -120.0 * deg, -120.0 * deg], &[100.0 * deg, 120.0 * deg, 120.0 * deg]),
        }
    }
}

/// Encodes `lower ≤ θ ≤ upper` as polytope rows.
pub fn box_polytope(lower: &[f64; 3], upper: &[f64; 3]) -> Vec<([f64; 3], f64)> {
    let mut rows = Vec::with_capacity(6);
    for i in 0..3 {
        let mut a = [0.0; 3];
        a[i] = 1.0;
        rows.push((a, upper[i]));
    }
    for i in 0..3 {
        let mut a = [0.0; 3];
        a[i] = -1.0;
        rows.push((a, -lower[i]));
    }
    rows
}

/// Link frames of the arm relative to the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPoses {
    /// Joint frames; origin at the joint, link `i` extends along local z.
    pub links: [Pose; 3],
    pub end_effector: Pose,
}

impl ManipulatorModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(ModelError::InvalidParameter("link_lengths"));
        }
        if self.joint_axes.iter().any(|a| (a.norm() - 1.0).abs() > 1e-9) {
            return Err(ModelError::InvalidParameter("joint_axes"));
        }
        if !self.joints_admissible(&Vec3::zeros(), 0.0) {
            return Err(ModelError::InvalidParameter("polytope"));
        }
        Ok(())
    }

    /// `b − a·θ` for every polytope row (nonnegative when admissible).
    pub fn polytope_slack(&self, theta: &Vec3) -> impl Iterator<Item = f64> + '_ {
        let theta = *theta;
        self.polytope.iter().map(move |(a, b)| b - (a[0] * theta.x + a[1] * theta.y + a[2] * theta.z))
    }

    pub fn joints_admissible(&self, theta: &Vec3, tol: f64) -> bool {
        self.polytope_slack(theta).all(|s| s >= -tol)
    }

    /// True when every joint axis is parallel to the first (in the base frame at home).
    pub fn is_planar(&self) -> bool {
        let axes = self.base_frame_axes(&Vec3::zeros());
        axes.iter().all(|a| a.cross(&axes[0]).norm() < 1e-12)
    }

    /// Arm link frames relative to the base frame.
    pub fn relative_poses(&self, theta: &Vec3) -> ArmPoses {
        let mut rot = *self.mount.rotation.matrix();
        let mut pos = self.mount.position;
        let mut links = [Pose::default(); 3];
        for i in 0..3 {
            rot *= exp_so3(&(self.joint_axes[i] * theta[i]));
            links[i] = Pose { position: pos, rotation: RotationMatrix::from_matrix_unchecked(rot) };
            pos += rot * Vec3::new(0.0, 0.0, self.link_lengths[i]);
        }
        ArmPoses { links, end_effector: Pose { position: pos, rotation: RotationMatrix::from_matrix_unchecked(rot) } }
    }

    fn base_frame_axes(&self, theta: &Vec3) -> [Vec3; 3] {
        let mut rot = *self.mount.rotation.matrix();
        let mut axes = [Vec3::zeros(); 3];
        for i in 0..3 {
            axes[i] = rot * self.joint_axes[i];
            rot *= exp_so3(&(self.joint_axes[i] * theta[i]));
        }
        axes
    }

    /// Jacobians of the EE position and orientation relative to the base
    /// with respect to the motion joints.
    pub fn relative_jacobians(&self, theta: &Vec3) -> (Mat3, Mat3) {
        let poses = self.relative_poses(theta);
        let axes = self.base_frame_axes(theta);
        let ee = poses.end_effector.position;
        let mut jv = Mat3::zeros();
        let mut jw = Mat3::zeros();
        for i in 0..3 {
            jv.set_column(i, &axes[i].cross(&(ee - poses.links[i].position)));
            jw.set_column(i, &axes[i]);
        }
        (jv, jw)
    }

    /// World-frame chain for a whole-body configuration.
    pub fn forward_kinematics(&self, x: &WholeBodyConfig) -> ArmPoses {
        let rel = self.relative_poses(&x.joints);
        let r = x.rotation.matrix();
        let lift =
            |p: &Pose| Pose { position: x.position + r * p.position, rotation: RotationMatrix::from_matrix_unchecked(r * p.rotation.matrix()) };
        ArmPoses { links: [lift(&rel.links[0]), lift(&rel.links[1]), lift(&rel.links[2])], end_effector: lift(&rel.end_effector) }
    }

    /// Manipulability reward. For a planar arm the position Jacobian is
    /// projected onto the motion plane and the orientation term is dropped.
    pub fn manipulability(&self, theta: &Vec3, position_weight: f64, orientation_weight: f64) -> f64 {
        let (jv, jw) = self.relative_jacobians(theta);
        if self.is_planar() {
            let n = self.base_frame_axes(theta)[0];
            let (u, w) = plane_basis(&n);
            let mut jp = SMatrix::<f64, 2, 3>::zeros();
            for c in 0..3 {
                let col = jv.column(c);
                jp[(0, c)] = u.dot(&col);
                jp[(1, c)] = w.dot(&col);
            }
            let g: Matrix2<f64> = jp * jp.transpose();
            position_weight * g.determinant()
        } else {
            position_weight * (jv * jv.transpose()).determinant() + orientation_weight * (jw * jw.transpose()).determinant()
        }
    }
}

fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let u = (seed - n * n.dot(&seed)).normalize();
    (u, n.cross(&u))
}

/// Collision shape of one rigid body.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyShape {
    /// Shape matrix at identity orientation (m²).
    pub shape: Mat3,
    /// Ellipsoid center in the body frame.
    pub offset: Vec3,
    /// Sphere radius for the ground clearance constraint.
    pub ground_radius: f64,
}

/// Ellipsoids for the base (index 0) and the three arm links.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyEllipsoidSet {
    pub bodies: Vec<BodyShape>,
}

impl BodyEllipsoidSet {
    pub fn new(bodies: Vec<BodyShape>) -> Result<Self, ModelError> {
        for b in &bodies {
            if (b.shape - b.shape.transpose()).norm() > 1e-12 || b.shape.cholesky().is_none() {
                return Err(ModelError::NotPositiveDefinite);
            }
            if !(b.ground_radius > 0.0) {
                return Err(ModelError::InvalidParameter("ground_radius"));
            }
        }
        Ok(Self { bodies })
    }

    /// Oblate base plus capsule-like prolate ellipsoids centered on each link.
    pub fn for_model(model: &ManipulatorModel, base_semi_axes: Vec3, link_radius: f64) -> Self {
        let mut bodies = Vec::with_capacity(4);
        bodies.push(BodyShape {
            shape: Mat3::from_diagonal(&base_semi_axes.component_mul(&base_semi_axes)),
            offset: Vec3::zeros(),
            ground_radius: base_semi_axes.x.max(base_semi_axes.y).max(base_semi_axes.z),
        });
        for &l in &model.link_lengths {
            let half = 0.5 * l + link_radius;
            bodies.push(BodyShape {
                shape: Mat3::from_diagonal(&Vec3::new(link_radius * link_radius, link_radius * link_radius, half * half)),
                offset: Vec3::new(0.0, 0.0, 0.5 * l),
                ground_radius: half,
            });
        }
        Self { bodies }
    }

    /// Grows every semi-axis and ground radius by `margin`.
    pub fn inflated(&self, margin: f64) -> Self {
        let bodies = self
            .bodies
            .iter()
            .map(|b| BodyShape {
                shape: crate::collision::inflate_shape(&b.shape, margin),
                offset: b.offset,
                ground_radius: b.ground_radius + margin,
            })
            .collect();
        Self { bodies }
    }

    /// World-frame centers of every body.
    pub fn centers(&self, model: &ManipulatorModel, x: &WholeBodyConfig) -> Vec<Vec3> {
        let fk = model.forward_kinematics(x);
        self.bodies
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let pose = body_pose(x, &fk, i);
                pose.position + pose.rotation.matrix() * b.offset
            })
            .collect()
    }
}

fn body_pose(x: &WholeBodyConfig, fk: &ArmPoses, index: usize) -> Pose {
    if index == 0 {
        Pose { position: x.position, rotation: x.rotation }
    } else {
        fk.links[(index - 1).min(2)]
    }
}

/// One world-frame ellipsoid per body.
pub fn body_ellipsoids(model: &ManipulatorModel, x: &WholeBodyConfig, set: &BodyEllipsoidSet) -> Vec<Ellipsoid> {
    let fk = model.forward_kinematics(x);
    set.bodies
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let pose = body_pose(x, &fk, i);
            let r = pose.rotation.matrix();
            let shape = r * b.shape * r.transpose();
            Ellipsoid::new_unchecked(pose.position + r * b.offset, 0.5 * (shape + shape.transpose()))
        })
        .collect()
}
