//! Receding-horizon whole-body planner tracking the offline end-effector
//! reference with base pose and joint rates as inputs.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use nalgebra::{ComplexField, DMatrix, DVector, SMatrix};

use crate::collision::{minkowski_separation, point_barrier, ObstacleSet};
use crate::controller::Setpoint;
use crate::error::PlanError;
use crate::geometry::{exp_so3, right_jacobian, Mat3, RotationMatrix, Vec3};
use crate::nlp::{self, Evaluation, NlpProblem, SolveStatus, SolverOptions, WarmStart};
use crate::planner_offline::EeTrajectory;
use crate::robot_model::{body_ellipsoids, BodyEllipsoidSet, ManipulatorModel, WholeBodyConfig};

pub const INPUT_DIM: usize = 9;
const LOCAL_DIM: usize = 9;
const CONSTRAINT_BUFFER: f64 = 1e-5;
const LOCAL_FD_STEP: f64 = 1e-6;

/// Base linear velocity (world), body angular velocity and joint rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WholeBodyInput {
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub joint_rates: Vec3,
}

impl WholeBodyInput {
    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        let mut a = [0.0; INPUT_DIM];
        a[..3].copy_from_slice(self.linear_velocity.as_slice());
        a[3..6].copy_from_slice(self.angular_velocity.as_slice());
        a[6..].copy_from_slice(self.joint_rates.as_slice());
        a
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self { linear_velocity: Vec3::new(s[0], s[1], s[2]), angular_velocity: Vec3::new(s[3], s[4], s[5]), joint_rates: Vec3::new(s[6], s[7], s[8]) }
    }
}

/// First-order step with the attitude advanced on the group.
pub fn wb_kinematics_step(x: &WholeBodyConfig, u: &WholeBodyInput, dt: f64) -> WholeBodyConfig {
    WholeBodyConfig {
        position: x.position + u.linear_velocity * dt,
        rotation: x.rotation.integrate_body_rate(&(u.angular_velocity * dt)),
        joints: x.joints + u.joint_rates * dt,
    }
}

/// Desired end-effector pose at one knot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EeReference {
    pub position: Vec3,
    pub rotation: RotationMatrix,
}

/// `steps + 1` references spaced `dt` apart from `t0`, holding the final
/// offline knot past the end of the trajectory.
pub fn reference_window(traj: &EeTrajectory, t0: f64, steps: usize, dt: f64) -> Vec<EeReference> {
    (0..=steps)
        .map(|k| {
            let s = traj.sample(t0 + k as f64 * dt);
            EeReference { position: s.translation.position, rotation: s.rotation.rotation }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcWeights {
    pub position: f64,
    /// Diagonal of the orientation weight.
    pub orientation: Vec3,
    /// Diagonal of the input weight.
    pub input: [f64; INPUT_DIM],
    pub manipulability_position: f64,
    pub manipulability_orientation: f64,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            position: 5.0,
            orientation: Vec3::new(4.0, 4.0, 4.0),
            input: [0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.1, 0.1, 0.1],
            manipulability_position: 0.01,
            manipulability_orientation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcParams {
    pub steps: usize,
    pub dt: f64,
    pub weights: NmpcWeights,
    /// Symmetric input bound.
    pub input_limit: [f64; INPUT_DIM],
    pub margin: f64,
    pub collision_avoidance: bool,
    pub track_orientation: bool,
    pub solver: SolverOptions,
}

impl Default for NmpcParams {
    fn default() -> Self {
        let half_pi = core::f64::consts::FRAC_PI_2;
        let quarter_pi = core::f64::consts::FRAC_PI_4;
        Self {
            steps: 15,
            dt: 0.1,
            weights: NmpcWeights::default(),
            input_limit: [1.0, 1.0, 1.0, half_pi, half_pi, half_pi, quarter_pi, quarter_pi, quarter_pi],
            margin: 1e-3,
            collision_avoidance: true,
            track_orientation: false,
            solver: SolverOptions { tol_opt: 1e-6, max_iter: 200, ..SolverOptions::default() },
        }
    }
}

impl NmpcParams {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Robot geometry and environment for collision certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionScene {
    pub model: ManipulatorModel,
    pub bodies: BodyEllipsoidSet,
    pub obstacles: ObstacleSet,
    /// Body index pairs that must stay apart (base vs distal link by default).
    pub self_pairs: Vec<(usize, usize)>,
}

impl CollisionScene {
    pub fn new(model: ManipulatorModel, bodies: BodyEllipsoidSet, obstacles: ObstacleSet) -> Self {
        let last = bodies.bodies.len().saturating_sub(1);
        Self { model, bodies, obstacles, self_pairs: vec![(0, last)] }
    }

    pub fn num_certificates(&self) -> usize {
        let b = self.bodies.bodies.len();
        b + b * self.obstacles.ellipsoids.len() + self.self_pairs.len()
    }

    /// Ground clearances, then body/obstacle and self-collision
    /// separations; all positive when collision free.
    pub fn certificates(&self, x: &WholeBodyConfig, out: &mut [f64]) {
        let shapes = body_ellipsoids(&self.model, x, &self.bodies);
        let mut i = 0;
        for (e, b) in shapes.iter().zip(&self.bodies.bodies) {
            out[i] = e.center().z - self.obstacles.ground_height - b.ground_radius;
            i += 1;
        }
        for e in &shapes {
            for o in &self.obstacles.ellipsoids {
                out[i] = minkowski_separation(e, o);
                i += 1;
            }
        }
        for &(a, b) in &self.self_pairs {
            out[i] = minkowski_separation(&shapes[a], &shapes[b]);
            i += 1;
        }
    }

    pub fn min_certificate(&self, x: &WholeBodyConfig) -> f64 {
        let mut c = vec![0.0; self.num_certificates()];
        self.certificates(x, &mut c);
        c.into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Manipulability reward of the arm.
pub fn manipulability(model: &ManipulatorModel, theta: &Vec3, weights: &NmpcWeights) -> f64 {
    model.manipulability(theta, weights.manipulability_position, weights.manipulability_orientation)
}

/// Weighted state cost (tracking error minus manipulability reward) plus input cost.
pub fn stage_cost(
    model: &ManipulatorModel,
    x: &WholeBodyConfig,
    reference: &EeReference,
    u: &WholeBodyInput,
    weights: &NmpcWeights,
    track_orientation: bool,
) -> f64 {
    let ee = model.forward_kinematics(x).end_effector;
    let mut cost = weights.position * (ee.position - reference.position).norm_squared() - manipulability(model, &x.joints, weights);
    if track_orientation {
        let q = reference.rotation.matrix().transpose() * ee.rotation.matrix();
        for i in 0..3 {
            cost += weights.orientation[i] * (1.0 - q[(i, i)]);
        }
    }
    let a = u.to_array();
    cost + (0..INPUT_DIM).map(|i| weights.input[i] * a[i] * a[i]).sum::<f64>()
}

/// Solver summary attached to a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub min_certificate: f64,
}

/// Solved horizon: `steps + 1` configurations and `steps` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    pub stamp: f64,
    pub dt: f64,
    pub states: Vec<WholeBodyConfig>,
    pub inputs: Vec<WholeBodyInput>,
    pub report: NmpcReport,
    pub solver_state: WarmStart,
}

impl TrajectoryPlan {
    pub fn horizon(&self) -> f64 {
        self.dt * self.inputs.len() as f64
    }

    /// The plan advanced by one interval, with the last input repeated.
    pub fn shifted_warm_start(&self, rows_per_knot: usize) -> WarmStart {
        let w = &self.solver_state;
        let n = w.z.len();
        let mut z = DVector::zeros(n);
        z.rows_mut(0, n - INPUT_DIM).copy_from(&w.z.rows(INPUT_DIM, n - INPUT_DIM));
        z.rows_mut(n - INPUT_DIM, INPUT_DIM).copy_from(&w.z.rows(n - INPUT_DIM, INPUT_DIM));
        let m = w.ineq_multipliers.len();
        let mut mu = DVector::zeros(m);
        if m >= rows_per_knot && rows_per_knot > 0 {
            mu.rows_mut(0, m - rows_per_knot).copy_from(&w.ineq_multipliers.rows(rows_per_knot, m - rows_per_knot));
        }
        WarmStart { z, eq_multipliers: w.eq_multipliers.clone(), ineq_multipliers: mu, penalty: w.penalty }
    }
}

struct KnotTerms {
    residual: Vec<f64>,
    constraints: Vec<f64>,
    reward: f64,
}

struct Rollout {
    terms: Vec<KnotTerms>,
    /// Per knot: derivative of residuals and constraints (stacked) and of the
    /// reward with respect to the local coordinates.
    local: Option<Vec<(DMatrix<f64>, SMatrix<f64, 1, LOCAL_DIM>)>>,
}

struct NmpcProblem<'a> {
    x0: WholeBodyConfig,
    refs: &'a [EeReference],
    scene: &'a CollisionScene,
    params: &'a NmpcParams,
    guess: DVector<f64>,
    cache: RefCell<Option<(DVector<f64>, bool, Rollout)>>,
}

impl NmpcProblem<'_> {
    fn residual_len(&self) -> usize {
        if self.params.track_orientation {
            12
        } else {
            3
        }
    }

    fn constraints_per_knot(&self) -> usize {
        let c = if self.params.collision_avoidance { self.scene.num_certificates() } else { 0 };
        c + self.scene.model.polytope.len()
    }

    fn offset(&self) -> f64 {
        self.params.margin + CONSTRAINT_BUFFER
    }

    fn knot_terms(&self, x: &WholeBodyConfig, k: usize) -> KnotTerms {
        let w = &self.params.weights;
        let ee = self.scene.model.forward_kinematics(x).end_effector;
        let r = &self.refs[k.min(self.refs.len() - 1)];
        let mut residual = Vec::with_capacity(self.residual_len());
        let sp = w.position.sqrt();
        residual.extend((ee.position - r.position).iter().map(|e| e * sp));
        if self.params.track_orientation {
            // q_i (1 − e_iᵀ R_dᵀ R e_i) = (q_i / 2) ‖R e_i − R_d e_i‖²
            for i in 0..3 {
                let s = (0.5 * w.orientation[i]).sqrt();
                let d = ee.rotation.matrix().column(i) - r.rotation.matrix().column(i);
                residual.extend(d.iter().map(|e| e * s));
            }
        }
        let mut constraints = vec![0.0; self.constraints_per_knot()];
        let mut i = 0;
        if self.params.collision_avoidance {
            let nc = self.scene.num_certificates();
            self.scene.certificates(x, &mut constraints[..nc]);
            for c in &mut constraints[..nc] {
                *c -= self.offset();
            }
            i = nc;
        }
        for (j, s) in self.scene.model.polytope_slack(&x.joints).enumerate() {
            constraints[i + j] = s - CONSTRAINT_BUFFER;
        }
        KnotTerms { residual, constraints, reward: manipulability(&self.scene.model, &x.joints, w) }
    }

    fn perturbed(x: &WholeBodyConfig, i: usize, h: f64) -> WholeBodyConfig {
        let mut y = *x;
        match i {
            0..=2 => y.position[i] += h,
            3..=5 => {
                let mut d = Vec3::zeros();
                d[i - 3] = h;
                y.rotation = RotationMatrix::from_matrix_unchecked(x.rotation.matrix() * exp_so3(&d));
            }
            _ => y.joints[i - 6] += h,
        }
        y
    }

    fn local_derivatives(&self, x: &WholeBodyConfig, k: usize) -> (DMatrix<f64>, SMatrix<f64, 1, LOCAL_DIM>) {
        let rows = self.residual_len() + self.constraints_per_knot();
        let mut d = DMatrix::zeros(rows, LOCAL_DIM);
        let mut dr = SMatrix::<f64, 1, LOCAL_DIM>::zeros();
        for i in 0..LOCAL_DIM {
            let h = LOCAL_FD_STEP;
            let plus = self.knot_terms(&Self::perturbed(x, i, h), k);
            let minus = self.knot_terms(&Self::perturbed(x, i, -h), k);
            let nr = plus.residual.len();
            for r in 0..nr {
                d[(r, i)] = (plus.residual[r] - minus.residual[r]) / (2.0 * h);
            }
            for c in 0..plus.constraints.len() {
                d[(nr + c, i)] = (plus.constraints[c] - minus.constraints[c]) / (2.0 * h);
            }
            dr[i] = (plus.reward - minus.reward) / (2.0 * h);
        }
        (d, dr)
    }

    fn rollout(&self, z: &DVector<f64>, derivatives: bool) -> core::cell::Ref<'_, Rollout> {
        let fresh = match self.cache.borrow().as_ref() {
            Some((key, with_derivs, _)) => key != z || (derivatives && !with_derivs),
            None => true,
        };
        if fresh {
            let n = self.params.steps;
            let mut states = Vec::with_capacity(n + 1);
            states.push(self.x0);
            for k in 0..n {
                let u = WholeBodyInput::from_slice(&z.as_slice()[INPUT_DIM * k..INPUT_DIM * (k + 1)]);
                let next = wb_kinematics_step(&states[k], &u, self.params.dt);
                states.push(next);
            }
            let terms = states.iter().enumerate().map(|(k, x)| self.knot_terms(x, k)).collect();
            let local = derivatives.then(|| states.iter().enumerate().map(|(k, x)| self.local_derivatives(x, k)).collect());
            *self.cache.borrow_mut() = Some((z.clone(), derivatives, Rollout { terms, local }));
        }
        core::cell::Ref::map(self.cache.borrow(), |c| &c.as_ref().unwrap().2)
    }
}

impl NlpProblem for NmpcProblem<'_> {
    fn dimension(&self) -> usize {
        INPUT_DIM * self.params.steps
    }

    fn initial_guess(&self) -> DVector<f64> {
        self.guess.clone()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let mut e = Evaluation::new(self.dimension(), 0, self.num_inequalities());
        self.evaluate(z, false, &mut e);
        e.objective
    }

    fn num_inequalities(&self) -> usize {
        self.params.steps * self.constraints_per_knot()
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dimension();
        let hi = DVector::from_fn(n, |i, _| self.params.input_limit[i % INPUT_DIM]);
        (-&hi, hi)
    }

    fn evaluate(&self, z: &DVector<f64>, derivatives: bool, out: &mut Evaluation) {
        let n = self.params.steps;
        let dt = self.params.dt;
        let w = &self.params.weights;
        let ro = self.rollout(z, derivatives);
        let ncon = self.constraints_per_knot();
        let nres = self.residual_len();

        let mut objective = 0.0;
        for t in &ro.terms {
            objective += t.residual.iter().map(|r| r * r).sum::<f64>() - t.reward;
        }
        for i in 0..z.len() {
            objective += w.input[i % INPUT_DIM] * z[i] * z[i];
        }
        out.objective = objective;
        for k in 1..=n {
            for c in 0..ncon {
                out.inequalities[(k - 1) * ncon + c] = ro.terms[k].constraints[c];
            }
        }
        if !derivatives {
            return;
        }
        let local = ro.local.as_ref().unwrap();

        // rotation sensitivities: δφ_k = Σ_{j<k} M_{j,k}ᵀ J_r(dt ω_j) dt δω_j
        let omegas: Vec<Vec3> = (0..n).map(|j| Vec3::new(z[INPUT_DIM * j + 3], z[INPUT_DIM * j + 4], z[INPUT_DIM * j + 5])).collect();
        let steps: Vec<Mat3> = omegas.iter().map(|o| exp_so3(&(o * dt))).collect();
        let jr: Vec<Mat3> = omegas.iter().map(|o| right_jacobian(&(o * dt)) * dt).collect();

        let nz = z.len();
        let mut jres = DMatrix::zeros((n + 1) * nres, nz);
        let mut grad = DVector::zeros(nz);
        out.inequality_jacobian.fill(0.0);
        for k in 1..=n {
            let (d, dreward) = &local[k];
            // M_{j,k} built backwards from j = k − 1
            let mut m = Mat3::identity();
            for j in (0..k).rev() {
                let rot = m.transpose() * jr[j];
                let col = INPUT_DIM * j;
                for r in 0..(nres + ncon) {
                    let row = d.row(r);
                    let mut vals = [0.0; INPUT_DIM];
                    for a in 0..3 {
                        vals[a] = row[a] * dt;
                        vals[6 + a] = row[6 + a] * dt;
                        vals[3 + a] = row[3] * rot[(0, a)] + row[4] * rot[(1, a)] + row[5] * rot[(2, a)];
                    }
                    if r < nres {
                        for a in 0..INPUT_DIM {
                            jres[(k * nres + r, col + a)] = vals[a];
                        }
                    } else {
                        for a in 0..INPUT_DIM {
                            out.inequality_jacobian[((k - 1) * ncon + r - nres, col + a)] = vals[a];
                        }
                    }
                }
                for a in 0..3 {
                    grad[col + a] -= dreward[a] * dt;
                    grad[col + 6 + a] -= dreward[6 + a] * dt;
                    grad[col + 3 + a] -= dreward[3] * rot[(0, a)] + dreward[4] * rot[(1, a)] + dreward[5] * rot[(2, a)];
                }
                m = steps[j] * m;
            }
        }
        let mut res = DVector::zeros((n + 1) * nres);
        for (k, t) in ro.terms.iter().enumerate() {
            for r in 0..nres {
                res[k * nres + r] = t.residual[r];
            }
        }
        grad += jres.tr_mul(&res) * 2.0;
        let mut hess = jres.tr_mul(&jres) * 2.0;
        for i in 0..nz {
            grad[i] += 2.0 * w.input[i % INPUT_DIM] * z[i];
            hess[(i, i)] += 2.0 * w.input[i % INPUT_DIM];
        }
        out.gradient.copy_from(&grad);
        out.hessian = Some(hess);
    }
}

/// Solves one horizon from the measured configuration `x0`.
///
/// `refs` must hold at least `steps + 1` samples. A warm start (normally the
/// previous plan shifted by one interval) seeds the solver.
pub fn solve_nmpc(
    x0: &WholeBodyConfig,
    refs: &[EeReference],
    scene: &CollisionScene,
    params: &NmpcParams,
    warm: Option<&WarmStart>,
    stamp: f64,
) -> Result<TrajectoryPlan, PlanError> {
    let n = params.steps;
    if n == 0 || !(params.dt > 0.0) {
        return Err(PlanError::InvalidInput("horizon"));
    }
    if refs.len() < n + 1 {
        return Err(PlanError::InvalidInput("reference window shorter than horizon"));
    }
    if !(x0.position.iter().chain(x0.joints.iter()).all(|v| v.is_finite())) || x0.rotation.orthonormality_error() > 1e-6 {
        return Err(PlanError::InvalidInput("non-finite initial state"));
    }
    let problem = NmpcProblem { x0: *x0, refs, scene, params, guess: DVector::zeros(INPUT_DIM * n), cache: RefCell::new(None) };
    let warm = warm.filter(|w| w.z.len() == INPUT_DIM * n);
    let sol = nlp::solve(&problem, &params.solver, warm)?;
    if sol.status == SolveStatus::NumericalFailure {
        return Err(PlanError::NumericalFailure);
    }
    let inputs: Vec<WholeBodyInput> = (0..n).map(|k| WholeBodyInput::from_slice(&sol.z.as_slice()[INPUT_DIM * k..INPUT_DIM * (k + 1)])).collect();
    let mut states = Vec::with_capacity(n + 1);
    states.push(*x0);
    for k in 0..n {
        let next = wb_kinematics_step(&states[k], &inputs[k], params.dt);
        states.push(next);
    }
    let min_certificate = states.iter().skip(1).map(|x| scene.min_certificate(x)).fold(f64::INFINITY, f64::min);
    let plan = TrajectoryPlan {
        stamp,
        dt: params.dt,
        states,
        inputs,
        report: NmpcReport { status: sol.status, iterations: sol.iterations, objective: sol.objective, min_certificate },
        solver_state: sol.warm_start(),
    };
    validate_plan(&plan, x0, scene, params)?;
    Ok(plan)
}

/// Independent post-solve checks: dynamics consistency, certificates,
/// joint polytope, input bounds and rotation validity.
pub fn validate_plan(plan: &TrajectoryPlan, x0: &WholeBodyConfig, scene: &CollisionScene, params: &NmpcParams) -> Result<(), PlanError> {
    if plan.states.len() != plan.inputs.len() + 1 || plan.states.is_empty() {
        return Err(PlanError::InvalidInput("plan length"));
    }
    let first = &plan.states[0];
    if (first.position - x0.position).norm() > 1e-12 || (first.joints - x0.joints).norm() > 1e-12 {
        return Err(PlanError::PlanInfeasible("initial state mismatch"));
    }
    for (k, u) in plan.inputs.iter().enumerate() {
        let a = u.to_array();
        if (0..INPUT_DIM).any(|i| a[i].abs() > params.input_limit[i] * (1.0 + 1e-12)) {
            return Err(PlanError::PlanInfeasible("input bound"));
        }
        let next = wb_kinematics_step(&plan.states[k], u, plan.dt);
        let x = &plan.states[k + 1];
        let residual =
            (next.position - x.position).norm().max((next.joints - x.joints).norm()).max((next.rotation.matrix() - x.rotation.matrix()).norm());
        if residual >= 1e-6 {
            return Err(PlanError::PlanInfeasible("dynamics residual"));
        }
    }
    for x in plan.states.iter().skip(1) {
        if x.rotation.orthonormality_error() > 1e-9 {
            return Err(PlanError::PlanInfeasible("rotation drift"));
        }
        if !scene.model.joints_admissible(&x.joints, 1e-9) {
            return Err(PlanError::PlanInfeasible("joint polytope"));
        }
        if params.collision_avoidance && scene.min_certificate(x) < params.margin - 1e-9 {
            return Err(PlanError::PlanInfeasible("collision certificate"));
        }
    }
    Ok(())
}

/// Base setpoint and arm targets read off a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSample {
    pub base: Setpoint,
    pub joints: Vec3,
    pub joint_rates: Vec3,
}

/// Interpolates a plan: held inputs, linear position and joints, geodesic
/// attitude, and accelerations from differenced inputs.
pub fn plan_to_setpoints(plan: &TrajectoryPlan, t: f64) -> Result<PlanSample, PlanError> {
    let n = plan.inputs.len();
    let rel = t - plan.stamp;
    let eps = 1e-9 * plan.dt;
    if n == 0 || !(rel >= -eps) || rel > plan.horizon() + eps {
        return Err(PlanError::StalePlan);
    }
    let rel = rel.clamp(0.0, plan.horizon());
    let k = (ComplexField::floor(rel / plan.dt) as usize).min(n - 1);
    let s = rel - k as f64 * plan.dt;
    let x = &plan.states[k];
    let u = &plan.inputs[k];
    let (acc, ang_acc) = if k + 1 < n {
        let v = &plan.inputs[k + 1];
        ((v.linear_velocity - u.linear_velocity) / plan.dt, (v.angular_velocity - u.angular_velocity) / plan.dt)
    } else {
        (Vec3::zeros(), Vec3::zeros())
    };
    let rotation = if s == 0.0 { x.rotation } else { x.rotation.integrate_body_rate(&(u.angular_velocity * s)) };
    Ok(PlanSample {
        base: Setpoint {
            position: x.position + u.linear_velocity * s,
            velocity: u.linear_velocity,
            acceleration: acc,
            rotation,
            angular_velocity: u.angular_velocity,
            angular_acceleration: ang_acc,
        },
        joints: x.joints + u.joint_rates * s,
        joint_rates: u.joint_rates,
    })
}

/// Smallest offline-stage barrier of an end-effector point against every
/// obstacle, with the ground as a plane.
pub fn ee_barrier(p: &Vec3, obstacles: &ObstacleSet, ee_radius: f64) -> f64 {
    let mut h = p.z - obstacles.ground_height - ee_radius;
    for o in &obstacles.ellipsoids {
        h = h.min(point_barrier(p, &o.inflated(ee_radius)).0);
    }
    h
}
