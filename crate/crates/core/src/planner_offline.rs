//! Offline end-effector planning: jerk-minimal translation around obstacles
//! and angular-jerk-minimal rotation, each a separate single-shooting NLP.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::collision::{point_barrier, Ellipsoid, ObstacleSet};
use crate::error::PlanError;
use crate::geometry::{exp_so3, log_so3, right_jacobian, Mat3, RotationMatrix, Vec3};
use crate::nlp::{self, Evaluation, NlpProblem, SolveStatus, SolverOptions};

/// Extra slack added to every inequality so returned plans clear the margin
/// despite the solver's feasibility tolerance.
const CONSTRAINT_BUFFER: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TranslationalState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl TranslationalState {
    pub fn at_rest(position: Vec3) -> Self {
        Self { position, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationalState {
    pub rotation: RotationMatrix,
    pub angular_velocity: Vec3,
    pub angular_acceleration: Vec3,
}

impl RotationalState {
    pub fn at_rest(rotation: RotationMatrix) -> Self {
        Self { rotation, ..Default::default() }
    }
}

/// One staged fourth-order Runge-Kutta step of the triple integrator.
pub fn ee_kinematics_step_translation(x: &TranslationalState, jerk: &Vec3, dt: f64) -> TranslationalState {
    let (v, a) = (x.velocity, x.acceleration);
    let v1 = v + a * (0.5 * dt);
    let a1 = a + jerk * (0.5 * dt);
    let v2 = v + a1 * (0.5 * dt);
    let a2 = a + jerk * (0.5 * dt);
    let v3 = v + a2 * dt;
    let a3 = a + jerk * dt;
    TranslationalState {
        position: x.position + (v + v1 * 2.0 + v2 * 2.0 + v3) * (dt / 6.0),
        velocity: v + (a + a1 * 2.0 + a2 * 2.0 + a3) * (dt / 6.0),
        acceleration: a + jerk * dt,
    }
}

/// Body-frame rotation increment of one rotational step.
fn rotation_increment(x: &RotationalState, angular_jerk: &Vec3, dt: f64) -> Vec3 {
    let (w, wd) = (x.angular_velocity, x.angular_acceleration);
    let w1 = w + wd * (0.5 * dt);
    let wd1 = wd + angular_jerk * (0.5 * dt);
    let w2 = w + wd1 * (0.5 * dt);
    let wd2 = wd + angular_jerk * (0.5 * dt);
    let w3 = w + wd2 * dt;
    (w + w1 * 2.0 + w2 * 2.0 + w3) * (dt / 6.0)
}

/// Rotational counterpart of [`ee_kinematics_step_translation`]; the
/// attitude advances by the exponential of the averaged body rate.
pub fn ee_kinematics_step_rotation(x: &RotationalState, angular_jerk: &Vec3, dt: f64) -> RotationalState {
    let phi = rotation_increment(x, angular_jerk, dt);
    let wd = x.angular_acceleration;
    let wd1 = wd + angular_jerk * (0.5 * dt);
    let wd3 = wd + angular_jerk * dt;
    RotationalState {
        rotation: x.rotation.integrate_body_rate(&phi),
        angular_velocity: x.angular_velocity + (wd + wd1 * 4.0 + wd3) * (dt / 6.0),
        angular_acceleration: wd3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineParams {
    pub horizon: f64,
    pub dt: f64,
    pub jerk_weight: f64,
    pub angular_jerk_weight: f64,
    /// Slope of the linear class-K function in the barrier-rate constraint.
    pub decay_rate: f64,
    pub margin: f64,
    /// Bounding radius of the end effector; obstacles are inflated by it.
    pub ee_radius: f64,
    pub solver: SolverOptions,
}

impl Default for OfflineParams {
    fn default() -> Self {
        Self {
            horizon: 15.0,
            dt: 0.1,
            jerk_weight: 1.0,
            angular_jerk_weight: 1.0,
            decay_rate: 3.0,
            margin: 1e-3,
            ee_radius: 0.03,
            solver: SolverOptions { tol_eq: 1e-7, tol_opt: 1e-7, max_iter: 400, ..SolverOptions::default() },
        }
    }
}

impl OfflineParams {
    pub fn steps(&self) -> Result<usize, PlanError> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) {
            return Err(PlanError::InvalidInput("horizon/dt"));
        }
        let n = self.horizon / self.dt;
        let steps = ComplexField::round(n) as usize;
        if (n - steps as f64).abs() > 1e-9 {
            return Err(PlanError::InvalidInput("horizon must be a multiple of dt"));
        }
        Ok(steps)
    }
}

/// Solver bookkeeping attached to each plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPlan {
    pub dt: f64,
    pub knots: Vec<TranslationalState>,
    pub jerks: Vec<Vec3>,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationPlan {
    pub dt: f64,
    pub knots: Vec<RotationalState>,
    pub angular_jerks: Vec<Vec3>,
    pub report: SolveReport,
}

/// Responses of the scalar triple integrator to a unit jerk held for one
/// step, `m` steps after the impulse.
fn impulse_responses(dt: f64, n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    let mut x = [dt * dt * dt / 6.0, dt * dt / 2.0, dt];
    for _ in 0..n {
        out.push(x);
        x = [x[0] + dt * x[1] + 0.5 * dt * dt * x[2], x[1] + dt * x[2], x[2]];
    }
    out
}

fn min_jerk_profile(s: f64) -> f64 {
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn min_jerk_third_derivative(s: f64) -> f64 {
    60.0 - 360.0 * s + 360.0 * s * s
}

/// `64 s³(1 − s)³`: unit peak at mid-course, flat to second order at both ends.
fn bump_profile(s: f64) -> f64 {
    64.0 * (s * (1.0 - s)).powi(3)
}

fn bump_third_derivative(s: f64) -> f64 {
    64.0 * (6.0 - 72.0 * s + 180.0 * s * s - 120.0 * s * s * s)
}

struct TranslationProblem<'a> {
    start: Vec3,
    goal: Vec3,
    obstacles: &'a [Ellipsoid],
    ground: f64,
    params: &'a OfflineParams,
    n: usize,
    responses: Vec<[f64; 3]>,
    guess: DVector<f64>,
    cache: RefCell<Option<(DVector<f64>, Vec<TranslationalState>)>>,
}

impl TranslationProblem<'_> {
    fn rollout(&self, z: &DVector<f64>) -> Vec<TranslationalState> {
        if let Some((key, knots)) = self.cache.borrow().as_ref() {
            if key == z {
                return knots.clone();
            }
        }
        let knots = rollout_translation(&TranslationalState::at_rest(self.start), z, self.params.dt);
        *self.cache.borrow_mut() = Some((z.clone(), knots.clone()));
        knots
    }

    fn rows_per_knot(&self) -> usize {
        self.obstacles.len() + 1
    }

    fn offset(&self) -> f64 {
        self.params.margin + CONSTRAINT_BUFFER
    }
}

fn rollout_translation(start: &TranslationalState, z: &DVector<f64>, dt: f64) -> Vec<TranslationalState> {
    let n = z.len() / 3;
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(*start);
    for k in 0..n {
        let j = Vec3::new(z[3 * k], z[3 * k + 1], z[3 * k + 2]);
        let next = ee_kinematics_step_translation(&knots[k], &j, dt);
        knots.push(next);
    }
    knots
}

impl NlpProblem for TranslationProblem<'_> {
    fn dimension(&self) -> usize {
        3 * self.n
    }

    fn initial_guess(&self) -> DVector<f64> {
        self.guess.clone()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        self.params.jerk_weight * z.norm_squared()
    }

    fn num_equalities(&self) -> usize {
        9
    }

    fn num_inequalities(&self) -> usize {
        self.n * self.rows_per_knot()
    }

    fn constraint_curvature(&self, _z: &DVector<f64>, _eq: &DVector<f64>, ineq: &DVector<f64>) -> Option<DMatrix<f64>> {
        // h̃ is quadratic in (p_k, v_k): ∇² = [[2γQ⁻¹, 2Q⁻¹], [2Q⁻¹, 0]],
        // and (p_k, v_k) are linear in the jerks with scalar coefficients.
        let gamma = self.params.decay_rate;
        let rows = self.rows_per_knot();
        let mut h = DMatrix::zeros(3 * self.n, 3 * self.n);
        for (o, obs) in self.obstacles.iter().enumerate() {
            let mut m = DMatrix::<f64>::zeros(self.n, self.n);
            let mut any = false;
            for k in 1..=self.n {
                let w = ineq[(k - 1) * rows + o];
                if w == 0.0 {
                    continue;
                }
                any = true;
                for j in 0..k {
                    let rj = self.responses[k - 1 - j];
                    for l in 0..k {
                        let rl = self.responses[k - 1 - l];
                        m[(j, l)] += w * (2.0 * gamma * rj[0] * rl[0] + 2.0 * (rj[0] * rl[1] + rj[1] * rl[0]));
                    }
                }
            }
            if !any {
                continue;
            }
            let qi = obs.shape_inverse();
            for j in 0..self.n {
                for l in 0..self.n {
                    let c = m[(j, l)];
                    if c == 0.0 {
                        continue;
                    }
                    for a in 0..3 {
                        for b in 0..3 {
                            h[(3 * j + a, 3 * l + b)] += c * qi[(a, b)];
                        }
                    }
                }
            }
        }
        Some(h)
    }

    fn evaluate(&self, z: &DVector<f64>, derivatives: bool, out: &mut Evaluation) {
        let knots = self.rollout(z);
        let w = self.params.jerk_weight;
        let gamma = self.params.decay_rate;
        let rows = self.rows_per_knot();
        out.objective = w * z.norm_squared();
        let last = &knots[self.n];
        for a in 0..3 {
            out.equalities[a] = last.position[a] - self.goal[a];
            out.equalities[3 + a] = last.velocity[a];
            out.equalities[6 + a] = last.acceleration[a];
        }
        for k in 1..=self.n {
            let x = &knots[k];
            for (o, obs) in self.obstacles.iter().enumerate() {
                let (h, grad) = point_barrier(&x.position, obs);
                out.inequalities[(k - 1) * rows + o] = grad.dot(&x.velocity) + gamma * h - self.offset();
            }
            out.inequalities[(k - 1) * rows + self.obstacles.len()] = x.position.z - self.ground - self.params.ee_radius - self.offset();
        }
        if !derivatives {
            return;
        }
        out.gradient.copy_from(&(z * (2.0 * w)));
        out.hessian = Some(DMatrix::identity(3 * self.n, 3 * self.n) * (2.0 * w));
        out.equality_jacobian.fill(0.0);
        out.inequality_jacobian.fill(0.0);
        for j in 0..self.n {
            let r = self.responses[self.n - 1 - j];
            for a in 0..3 {
                for s in 0..3 {
                    out.equality_jacobian[(3 * s + a, 3 * j + a)] = r[s];
                }
            }
        }
        for k in 1..=self.n {
            let x = &knots[k];
            for (o, obs) in self.obstacles.iter().enumerate() {
                let qi = obs.shape_inverse();
                let d = x.position - obs.center();
                let dp = qi * (x.velocity + d * gamma) * 2.0;
                let dv = qi * d * 2.0;
                let row = (k - 1) * rows + o;
                for j in 0..k {
                    let r = self.responses[k - 1 - j];
                    for a in 0..3 {
                        out.inequality_jacobian[(row, 3 * j + a)] = dp[a] * r[0] + dv[a] * r[1];
                    }
                }
            }
            let row = (k - 1) * rows + self.obstacles.len();
            for j in 0..k {
                out.inequality_jacobian[(row, 3 * j + 2)] = self.responses[k - 1 - j][0];
            }
        }
    }
}

/// Min-jerk straight line, bent away from obstacles that block it.
/// Min-jerk jerks plus a bump clearing every obstacle on the straight line.
/// The bump goes away from the obstacle centre unless `upward` is set.
fn translation_guess(start: &Vec3, goal: &Vec3, obstacles: &[Ellipsoid], dt: f64, n: usize, upward: bool) -> DVector<f64> {
    let t_f = dt * n as f64;
    let delta = goal - start;
    let mut bump = Vec3::zeros();
    for obs in obstacles {
        let c = obs.center() - start;
        let s = if delta.norm_squared() > 0.0 { (c.dot(&delta) / delta.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
        let closest = start + delta * s;
        if point_barrier(&closest, obs).0 > 0.0 {
            continue;
        }
        let line = if delta.norm() > 1e-9 { delta.normalize() } else { Vec3::x() };
        let reach = obs.shape().symmetric_eigenvalues().max().sqrt();
        let away = closest - obs.center();
        let mut dir = away - line * line.dot(&away);
        if upward || dir.norm() < 1e-2 * reach {
            dir = Vec3::z() - line * line.z;
        }
        if dir.norm() < 1e-6 {
            dir = Vec3::x() - line * line.x;
        }
        let dir = dir.normalize();
        let clearance = (obs.center() - closest).dot(&dir) + reach * 1.3;
        let weight = bump_profile(s).max(0.3);
        let needed = dir * (clearance / weight);
        if needed.norm() > bump.norm() {
            bump = needed;
        }
    }
    let mut z = DVector::zeros(3 * n);
    for k in 0..n {
        let s = (k as f64 + 0.5) / n as f64;
        let jerk = (delta * min_jerk_third_derivative(s) + bump * bump_third_derivative(s)) / (t_f * t_f * t_f);
        z.fixed_rows_mut::<3>(3 * k).copy_from(&jerk);
    }
    z
}

/// Jerk-minimal end-effector path from rest at `start` to rest at `goal`
/// that keeps the barrier-rate constraint against every obstacle.
pub fn plan_ee_translation(start: &Vec3, goal: &Vec3, obstacles: &ObstacleSet, params: &OfflineParams) -> Result<TranslationPlan, PlanError> {
    let n = params.steps()?;
    if !(start.iter().chain(goal.iter()).all(|x| x.is_finite())) {
        return Err(PlanError::InvalidInput("non-finite endpoint"));
    }
    let inflated = obstacles.inflated(params.ee_radius);
    for (i, obs) in inflated.ellipsoids.iter().enumerate() {
        if point_barrier(start, obs).0 <= 0.0 {
            return Err(PlanError::StartInCollision(i));
        }
        if point_barrier(goal, obs).0 * params.decay_rate <= params.margin {
            return Err(PlanError::PlanInfeasible("goal inside an obstacle"));
        }
    }
    let floor = inflated.ground_height + params.ee_radius + params.margin;
    if start.z <= inflated.ground_height + params.ee_radius {
        return Err(PlanError::StartInCollision(inflated.ellipsoids.len()));
    }
    if goal.z <= floor {
        return Err(PlanError::PlanInfeasible("goal below ground clearance"));
    }

    let safe = |x: &TranslationalState| {
        x.position.z - inflated.ground_height - params.ee_radius >= params.margin
            && inflated.ellipsoids.iter().all(|o| {
                let (h, g) = point_barrier(&x.position, o);
                h > 0.0 && g.dot(&x.velocity) + params.decay_rate * h >= params.margin
            })
    };
    // A sideways detour is tried first; going over the top is the fallback
    // when the solver stalls between the two.
    let mut outcome = Err(PlanError::PlanInfeasible("translation constraints not met"));
    for upward in [false, true] {
        let guess = translation_guess(start, goal, &inflated.ellipsoids, params.dt, n, upward);
        if upward && guess == translation_guess(start, goal, &inflated.ellipsoids, params.dt, n, false) {
            break;
        }
        let problem = TranslationProblem {
            start: *start,
            goal: *goal,
            obstacles: &inflated.ellipsoids,
            ground: inflated.ground_height,
            params,
            n,
            responses: impulse_responses(params.dt, n),
            guess,
            cache: RefCell::new(None),
        };
        let sol = nlp::solve(&problem, &params.solver, None)?;
        if sol.status == SolveStatus::NumericalFailure {
            outcome = Err(PlanError::NumericalFailure);
            continue;
        }
        let knots = rollout_translation(&TranslationalState::at_rest(*start), &sol.z, params.dt);
        let last = knots[n];
        let terminal_ok = (last.position - goal).norm() <= 1e-4 && last.velocity.norm() <= 1e-4 && last.acceleration.norm() <= 1e-4;
        if terminal_ok && knots.iter().skip(1).all(safe) {
            outcome = Ok((sol, knots));
            break;
        }
        outcome = Err(PlanError::PlanInfeasible("translation constraints not met"));
    }
    let (sol, knots) = outcome?;
    let report = SolveReport { status: sol.status, iterations: sol.iterations, objective: sol.objective };
    let jerks = (0..n).map(|k| Vec3::new(sol.z[3 * k], sol.z[3 * k + 1], sol.z[3 * k + 2])).collect();
    Ok(TranslationPlan { dt: params.dt, knots, jerks, report })
}

struct RotationProblem<'a> {
    start: RotationMatrix,
    goal: RotationMatrix,
    params: &'a OfflineParams,
    n: usize,
    /// `φ_k = Σ_j increment[k − j] ω̈_j` for `j ≤ k`.
    increment: Vec<f64>,
    /// Terminal angular velocity and acceleration per unit angular jerk.
    terminal_rate: Vec<[f64; 2]>,
    guess: DVector<f64>,
}

impl RotationProblem<'_> {
    fn increments(&self, z: &DVector<f64>) -> Vec<Vec3> {
        (0..self.n)
            .map(|k| {
                let mut phi = Vec3::zeros();
                for j in 0..=k {
                    phi += Vec3::new(z[3 * j], z[3 * j + 1], z[3 * j + 2]) * self.increment[k - j];
                }
                phi
            })
            .collect()
    }
}

impl NlpProblem for RotationProblem<'_> {
    fn dimension(&self) -> usize {
        3 * self.n
    }

    fn initial_guess(&self) -> DVector<f64> {
        self.guess.clone()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        self.params.angular_jerk_weight * z.norm_squared()
    }

    fn num_equalities(&self) -> usize {
        9
    }

    fn evaluate(&self, z: &DVector<f64>, derivatives: bool, out: &mut Evaluation) {
        let w = self.params.angular_jerk_weight;
        let phis = self.increments(z);
        let mut r = *self.start.matrix();
        for phi in &phis {
            r *= exp_so3(phi);
        }
        let residual = log_so3(&(self.goal.matrix().transpose() * r));
        out.objective = w * z.norm_squared();
        out.equalities.fill(0.0);
        for j in 0..self.n {
            let c = self.terminal_rate[self.n - 1 - j];
            for a in 0..3 {
                out.equalities[a] += c[0] * z[3 * j + a];
                out.equalities[3 + a] += c[1] * z[3 * j + a];
            }
        }
        out.equalities.fixed_rows_mut::<3>(6).copy_from(&residual);
        if !derivatives {
            return;
        }
        out.gradient.copy_from(&(z * (2.0 * w)));
        out.hessian = Some(DMatrix::identity(3 * self.n, 3 * self.n) * (2.0 * w));
        out.equality_jacobian.fill(0.0);
        for j in 0..self.n {
            let c = self.terminal_rate[self.n - 1 - j];
            for a in 0..3 {
                out.equality_jacobian[(a, 3 * j + a)] = c[0];
                out.equality_jacobian[(3 + a, 3 * j + a)] = c[1];
            }
        }
        let jr_inv = right_jacobian(&residual).try_inverse().unwrap_or_else(Mat3::identity);
        // d residual / d φ_k = J_r(e)⁻¹ M_kᵀ J_r(φ_k), M_k the product after k
        let mut after = Mat3::identity();
        let mut dphi = vec![Mat3::zeros(); self.n];
        for k in (0..self.n).rev() {
            dphi[k] = jr_inv * after.transpose() * right_jacobian(&phis[k]);
            after = exp_so3(&phis[k]) * after;
        }
        for j in 0..self.n {
            let mut block = Mat3::zeros();
            for k in j..self.n {
                block += dphi[k] * self.increment[k - j];
            }
            out.equality_jacobian.view_mut((6, 3 * j), (3, 3)).copy_from(&block);
        }
    }
}

fn rollout_rotation(start: &RotationMatrix, z: &DVector<f64>, dt: f64) -> Vec<RotationalState> {
    let n = z.len() / 3;
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(RotationalState::at_rest(*start));
    for k in 0..n {
        let j = Vec3::new(z[3 * k], z[3 * k + 1], z[3 * k + 2]);
        let next = ee_kinematics_step_rotation(&knots[k], &j, dt);
        knots.push(next);
    }
    knots
}

/// Angular-jerk-minimal attitude path from rest at `start` to rest at `goal`.
pub fn plan_ee_rotation(start: &RotationMatrix, goal: &RotationMatrix, params: &OfflineParams) -> Result<RotationPlan, PlanError> {
    let n = params.steps()?;
    let dt = params.dt;
    let responses = impulse_responses(dt, n + 1);
    let mut increment = vec![0.0; n];
    increment[0] = responses[0][0];
    for m in 1..n {
        increment[m] = responses[m][0] - responses[m - 1][0];
    }
    let terminal_rate = (0..n).map(|m| [responses[m][1], responses[m][2]]).collect();

    let axis_angle = log_so3(&(start.matrix().transpose() * goal.matrix()));
    let t_f = dt * n as f64;
    let mut guess = DVector::zeros(3 * n);
    for k in 0..n {
        let s = (k as f64 + 0.5) / n as f64;
        guess.fixed_rows_mut::<3>(3 * k).copy_from(&(axis_angle * (min_jerk_third_derivative(s) / (t_f * t_f * t_f))));
    }
    let problem = RotationProblem { start: *start, goal: *goal, params, n, increment, terminal_rate, guess };
    let sol = nlp::solve(&problem, &params.solver, None)?;
    if sol.status == SolveStatus::NumericalFailure {
        return Err(PlanError::NumericalFailure);
    }
    let knots = rollout_rotation(start, &sol.z, dt);
    let last = &knots[n];
    let trace_gap = 3.0 - (goal.matrix().transpose() * last.rotation.matrix()).trace();
    if trace_gap > 1e-6 || last.angular_velocity.norm() > 1e-4 || last.angular_acceleration.norm() > 1e-4 {
        return Err(PlanError::PlanInfeasible("terminal attitude not reached"));
    }
    let angular_jerks = (0..n).map(|k| Vec3::new(sol.z[3 * k], sol.z[3 * k + 1], sol.z[3 * k + 2])).collect();
    let report = SolveReport { status: sol.status, iterations: sol.iterations, objective: sol.objective };
    Ok(RotationPlan { dt, knots, angular_jerks, report })
}

/// End-effector reference at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EeSample {
    pub time: f64,
    pub translation: TranslationalState,
    pub rotation: RotationalState,
}

/// Combined offline plan. Without a rotational plan the attitude is held.
#[derive(Debug, Clone, PartialEq)]
pub struct EeTrajectory {
    pub translation: TranslationPlan,
    pub rotation: Option<RotationPlan>,
    held_rotation: RotationMatrix,
}

impl EeTrajectory {
    pub fn new(translation: TranslationPlan, rotation: Option<RotationPlan>, held_rotation: RotationMatrix) -> Self {
        Self { translation, rotation, held_rotation }
    }

    pub fn dt(&self) -> f64 {
        self.translation.dt
    }

    pub fn duration(&self) -> f64 {
        self.translation.dt * self.translation.jerks.len() as f64
    }

    pub fn num_knots(&self) -> usize {
        self.translation.knots.len()
    }

    pub fn knot(&self, k: usize) -> EeSample {
        let k = k.min(self.num_knots() - 1);
        EeSample {
            time: k as f64 * self.dt(),
            translation: self.translation.knots[k],
            rotation: match &self.rotation {
                Some(r) => r.knots[k],
                None => RotationalState::at_rest(self.held_rotation),
            },
        }
    }

    /// Exact evaluation between knots from the held jerk; clamps outside
    /// `[0, duration]`.
    pub fn sample(&self, t: f64) -> EeSample {
        let dt = self.dt();
        let n = self.translation.jerks.len();
        if !(t > 0.0) {
            return EeSample { time: t, ..self.knot(0) };
        }
        if t >= self.duration() {
            return EeSample { time: t, ..self.knot(n) };
        }
        let k = ComplexField::floor(t / dt).min((n - 1) as f64) as usize;
        let s = t - k as f64 * dt;
        let x = &self.translation.knots[k];
        let j = self.translation.jerks[k];
        let translation = TranslationalState {
            position: x.position + x.velocity * s + x.acceleration * (0.5 * s * s) + j * (s * s * s / 6.0),
            velocity: x.velocity + x.acceleration * s + j * (0.5 * s * s),
            acceleration: x.acceleration + j * s,
        };
        let rotation = match &self.rotation {
            Some(r) => {
                let x = &r.knots[k];
                let j = r.angular_jerks[k];
                let phi = x.angular_velocity * s + x.angular_acceleration * (0.5 * s * s) + j * (s * s * s / 6.0);
                RotationalState {
                    rotation: x.rotation.integrate_body_rate(&phi),
                    angular_velocity: x.angular_velocity + x.angular_acceleration * s + j * (0.5 * s * s),
                    angular_acceleration: x.angular_acceleration + j * s,
                }
            }
            None => RotationalState::at_rest(self.held_rotation),
        };
        EeSample { time: t, translation, rotation }
    }
}

/// Plans both stages; the rotational one is skipped when `goal_rotation`
/// is `None` and the start attitude is held.
pub fn plan_ee_trajectory(
    start: &Vec3,
    start_rotation: &RotationMatrix,
    goal: &Vec3,
    goal_rotation: Option<&RotationMatrix>,
    obstacles: &ObstacleSet,
    params: &OfflineParams,
) -> Result<EeTrajectory, PlanError> {
    let translation = plan_ee_translation(start, goal, obstacles, params)?;
    let rotation = goal_rotation.map(|g| plan_ee_rotation(start_rotation, g, params)).transpose()?;
    Ok(EeTrajectory::new(translation, rotation, *start_rotation))
}

/// Minimum-jerk quintic between two rest points.
pub fn min_jerk_position(start: &Vec3, goal: &Vec3, t: f64, duration: f64) -> Vec3 {
    let s = (t / duration).clamp(0.0, 1.0);
    start + (goal - start) * min_jerk_profile(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn open_space() -> ObstacleSet {
        ObstacleSet { ellipsoids: Vec::new(), ground_height: -100.0 }
    }

    #[test]
    fn zero_jerk_is_constant_velocity() {
        let x = TranslationalState { position: Vec3::new(1.0, 2.0, 3.0), velocity: Vec3::new(0.5, -1.0, 0.2), acceleration: Vec3::zeros() };
        let y = ee_kinematics_step_translation(&x, &Vec3::zeros(), 0.1);
        assert_relative_eq!(y.position, x.position + x.velocity * 0.1, epsilon = 1e-15);
        let mut z = x;
        for _ in 0..100 {
            z = ee_kinematics_step_translation(&z, &Vec3::zeros(), 0.1);
        }
        assert!((z.position - (x.position + x.velocity * 10.0)).amax() < 1e-12);
    }

    #[test]
    fn constant_jerk_is_exact() {
        let x =
            TranslationalState { position: Vec3::new(0.3, -0.2, 1.0), velocity: Vec3::new(0.1, 0.4, -0.3), acceleration: Vec3::new(-0.5, 0.2, 0.7) };
        let j = Vec3::new(1.5, -2.0, 0.25);
        let h = 0.1;
        let y = ee_kinematics_step_translation(&x, &j, h);
        let p = x.position + x.velocity * h + x.acceleration * (h * h / 2.0) + j * (h * h * h / 6.0);
        let v = x.velocity + x.acceleration * h + j * (h * h / 2.0);
        assert!((y.position - p).amax() < 1e-15);
        assert!((y.velocity - v).amax() < 1e-15);
        assert_eq!(y.acceleration, x.acceleration + j * h);
    }

    #[test]
    fn rotation_step_examples() {
        let x = RotationalState::at_rest(RotationMatrix::about_x(0.3));
        assert_eq!(ee_kinematics_step_rotation(&x, &Vec3::zeros(), 0.1).rotation, x.rotation);
        let spin = RotationalState { angular_velocity: Vec3::z(), ..x };
        let y = ee_kinematics_step_rotation(&spin, &Vec3::zeros(), 0.1);
        let expected = x.rotation.matrix() * RotationMatrix::about_z(0.1).matrix();
        assert!((y.rotation.matrix() - expected).amax() < 1e-15);
        assert_eq!(y.angular_velocity, Vec3::z());
    }

    #[test]
    fn rotation_step_matches_closed_form_rates() {
        let x = RotationalState {
            rotation: RotationMatrix::identity(),
            angular_velocity: Vec3::new(0.1, 0.2, 0.3),
            angular_acceleration: Vec3::new(-0.4, 0.5, 0.1),
        };
        let j = Vec3::new(1.0, -1.0, 2.0);
        let h = 0.1;
        let y = ee_kinematics_step_rotation(&x, &j, h);
        let w = x.angular_velocity + x.angular_acceleration * h + j * (h * h / 2.0);
        assert!((y.angular_velocity - w).amax() < 1e-15);
    }

    #[test]
    fn long_run_drift_stays_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = RotationalState::at_rest(RotationMatrix::about_y(1.0));
        for _ in 0..10_000 {
            let j = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            x = ee_kinematics_step_rotation(&x, &j, 0.01);
            x.angular_velocity = x.angular_velocity.map(|v| v.clamp(-3.0, 3.0));
            x.angular_acceleration = x.angular_acceleration.map(|v| v.clamp(-3.0, 3.0));
            assert!(x.rotation.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn impulse_responses_match_rollout() {
        let dt = 0.1;
        let r = impulse_responses(dt, 5);
        let mut z = DVector::zeros(15);
        z[3] = 1.0;
        let knots = rollout_translation(&TranslationalState::default(), &z, dt);
        for m in 0..4 {
            assert_relative_eq!(knots[2 + m].position.x, r[m][0], epsilon = 1e-15);
            assert_relative_eq!(knots[2 + m].velocity.x, r[m][1], epsilon = 1e-15);
        }
    }

    #[test]
    fn obstacle_free_plan_matches_min_jerk() {
        let start = Vec3::new(0.0, 0.0, 1.0);
        let goal = Vec3::new(1.0, 0.0, 1.0);
        let params = OfflineParams::default();
        let plan = plan_ee_translation(&start, &goal, &open_space(), &params).unwrap();
        for (k, x) in plan.knots.iter().enumerate() {
            let oracle = min_jerk_position(&start, &goal, k as f64 * params.dt, params.horizon);
            assert!((x.position - oracle).norm() < 1e-3, "{k}: {}", (x.position - oracle).norm());
        }
    }

    #[test]
    fn goal_at_start_is_free() {
        let p = Vec3::new(0.2, 0.1, 1.0);
        let plan = plan_ee_translation(&p, &p, &ObstacleSet::default(), &OfflineParams::default()).unwrap();
        assert!(plan.report.objective < 1e-12);
        assert!(plan.knots.iter().all(|x| (x.position - p).norm() < 1e-9));
    }

    #[test]
    fn detours_around_sphere() {
        let start = Vec3::new(-2.0, 0.0, 2.0);
        let goal = Vec3::new(2.0, 0.0, 2.0);
        let obs = ObstacleSet { ellipsoids: vec![Ellipsoid::sphere(Vec3::new(0.0, 0.0, 2.0), 1.0).unwrap()], ground_height: 0.0 };
        let params = OfflineParams::default();
        let plan = plan_ee_translation(&start, &goal, &obs, &params).unwrap();
        let inflated = obs.inflated(params.ee_radius);
        for x in &plan.knots {
            assert!(point_barrier(&x.position, &inflated.ellipsoids[0]).0 > 0.0);
        }
        for pair in plan.knots.windows(2) {
            for i in 0..=10 {
                let p = pair[0].position.lerp(&pair[1].position, i as f64 / 10.0);
                assert!(point_barrier(&p, &obs.ellipsoids[0]).0 > 0.0);
            }
        }
        assert!((plan.knots.last().unwrap().position - goal).norm() <= 1e-4);
    }

    #[test]
    fn translation_invariance_of_cost() {
        let start = Vec3::new(-1.5, 0.0, 1.0);
        let goal = Vec3::new(1.5, 0.3, 1.0);
        let obs = ObstacleSet { ellipsoids: vec![Ellipsoid::sphere(Vec3::new(0.0, 0.1, 1.0), 0.5).unwrap()], ground_height: 0.0 };
        let params = OfflineParams::default();
        let a = plan_ee_translation(&start, &goal, &obs, &params).unwrap();
        let d = Vec3::new(3.0, -2.0, 0.5);
        let b = plan_ee_translation(&(start + d), &(goal + d), &obs.translated(&d), &params).unwrap();
        assert_relative_eq!(a.report.objective, b.report.objective, max_relative = 1e-4);
    }

    #[test]
    fn start_in_collision_is_rejected() {
        let obs = ObstacleSet { ellipsoids: vec![Ellipsoid::sphere(Vec3::new(0.0, 0.0, 1.0), 0.5).unwrap()], ground_height: 0.0 };
        let err = plan_ee_translation(&Vec3::new(0.0, 0.0, 1.2), &Vec3::new(2.0, 0.0, 1.0), &obs, &OfflineParams::default());
        assert_eq!(err, Err(PlanError::StartInCollision(0)));
    }

    #[test]
    fn identical_rotations_cost_nothing() {
        let r = RotationMatrix::about_x(0.4);
        let plan = plan_ee_rotation(&r, &r, &OfflineParams::default()).unwrap();
        assert!(plan.report.objective < 1e-12);
    }

    #[test]
    fn half_turn_about_z() {
        let r0 = RotationMatrix::about_x(0.2);
        let goal = r0 * RotationMatrix::about_z(PI);
        let params = OfflineParams::default();
        let plan = plan_ee_rotation(&r0, &goal, &params).unwrap();
        let mut angle = 0.0;
        for k in 0..plan.angular_jerks.len() {
            let w = plan.knots[k].angular_velocity;
            assert!(w.x.abs() < 1e-9 && w.y.abs() < 1e-9);
            angle += rotation_increment(&plan.knots[k], &plan.angular_jerks[k], params.dt).z;
        }
        assert!((angle.abs() - PI).abs() < 1e-3, "{angle}");
        let last = plan.knots.last().unwrap();
        assert!(3.0 - (goal.matrix().transpose() * last.rotation.matrix()).trace() <= 1e-6);
    }

    #[test]
    fn rotation_jacobian_matches_fd() {
        let params = OfflineParams { horizon: 1.0, ..Default::default() };
        let n = params.steps().unwrap();
        let responses = impulse_responses(params.dt, n + 1);
        let mut increment = vec![responses[0][0]; n];
        for m in 1..n {
            increment[m] = responses[m][0] - responses[m - 1][0];
        }
        let problem = RotationProblem {
            start: RotationMatrix::about_y(0.3),
            goal: RotationMatrix::about_x(1.0),
            params: &params,
            n,
            increment,
            terminal_rate: (0..n).map(|m| [responses[m][1], responses[m][2]]).collect(),
            guess: DVector::zeros(3 * n),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = DVector::from_fn(3 * n, |_, _| rng.random_range(-2.0..2.0));
        assert_eq!(nlp::check_derivatives(&problem, &z, 1e-5), Ok(()));
    }

    #[test]
    fn translation_jacobian_matches_fd() {
        let params = OfflineParams { horizon: 1.0, ..Default::default() };
        let n = params.steps().unwrap();
        let obs = vec![Ellipsoid::from_semi_axes(Vec3::new(0.5, 0.1, 1.0), Vec3::new(0.3, 0.2, 0.1), &RotationMatrix::about_z(0.4)).unwrap()];
        let problem = TranslationProblem {
            start: Vec3::new(0.0, 0.0, 1.0),
            goal: Vec3::new(1.0, 0.0, 1.0),
            obstacles: &obs,
            ground: 0.0,
            params: &params,
            n,
            responses: impulse_responses(params.dt, n),
            guess: DVector::zeros(3 * n),
            cache: RefCell::new(None),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DVector::from_fn(3 * n, |_, _| rng.random_range(-2.0..2.0));
        assert_eq!(nlp::check_derivatives(&problem, &z, 1e-5), Ok(()));
    }

    #[test]
    fn sampling_hits_knots_and_clamps() {
        let start = Vec3::new(0.0, 0.0, 1.0);
        let params = OfflineParams { horizon: 2.0, ..Default::default() };
        let traj = plan_ee_trajectory(
            &start,
            &RotationMatrix::identity(),
            &Vec3::new(0.3, 0.0, 1.0),
            Some(&RotationMatrix::about_z(0.5)),
            &open_space(),
            &params,
        )
        .unwrap();
        for k in [0usize, 3, 7, 20] {
            let a = traj.sample(k as f64 * params.dt);
            let b = traj.knot(k);
            assert!((a.translation.position - b.translation.position).norm() < 1e-12);
            assert!((a.rotation.rotation.matrix() - b.rotation.rotation.matrix()).amax() < 1e-12);
        }
        assert_eq!(traj.sample(50.0).translation.position, traj.knot(20).translation.position);
        assert_eq!(traj.sample(-1.0).translation.position, start);
    }
}
