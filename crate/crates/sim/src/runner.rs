//! Closed-loop scenario execution: offline plan, receding-horizon replanning
//! on a worker thread, pose control at the control rate and the plant at
//! the simulation rate.

use std::sync::Arc;

use nalgebra::{Rotation3, UnitQuaternion};
use oam_core::controller::{lyapunov_rotational, lyapunov_translational, ControllerKind, GainSet, PoseController, Setpoint};
use oam_core::geometry::{geodesic_distance, hat, Mat3, RotationMatrix, Vec3};
use oam_core::planner_nmpc::{plan_to_setpoints, CollisionScene, EeReference, TrajectoryPlan};
use oam_core::planner_offline::{plan_ee_trajectory, EeTrajectory};
use oam_core::robot_model::{ActuatorCommand, BodyEllipsoidSet, ManipulatorModel, WholeBodyConfig};
use oam_core::sim::{
    compute_metrics, ArmReaction, DisturbanceComponent, DisturbanceModel, GraspEvent, GraspTrigger, JointTarget, Plant, RigidBodyState, RunMetrics,
    TrackingSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SimConfig;
use crate::error::HarnessError;
use crate::scenario::{Scenario, Task};
use crate::worker::{PlanRequest, PlannerWorker};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub controller: ControllerKind,
    pub seed: u64,
    pub collision_avoidance: bool,
    /// Replaces the configured gains.
    pub gains: Option<GainSet>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { controller: ControllerKind::Grite, seed: 0, collision_avoidance: true, gains: None }
    }
}

/// One control-rate sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRow {
    pub time: f64,
    pub position: Vec3,
    /// `[w, x, y, z]`, sign kept continuous between rows.
    pub quaternion: [f64; 4],
    /// `p_d − p` (world).
    pub position_error: Vec3,
    /// Geodesic attitude error (rad).
    pub attitude_error: f64,
    /// Commanded body force and torque.
    pub force: Vec3,
    pub torque: Vec3,
    pub thrusts: [f64; 6],
    pub tilts: [f64; 6],
    pub lyapunov_translational: f64,
    pub lyapunov_rotational: f64,
    pub joints: Vec3,
    /// Smallest ground-truth collision certificate.
    pub certificate: f64,
    /// Angle between body z and world up (rad).
    pub tilt: f64,
    /// Distance from the EE to the grasp goal (zero for regulation).
    pub ee_goal_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub stamp: f64,
    pub wall_ms: f64,
    pub iterations: usize,
    pub min_certificate: f64,
    pub status: String,
    pub accepted: bool,
}

/// An offline end-effector plan and when it started.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineRecord {
    pub label: &'static str,
    pub start_time: f64,
    pub trajectory: EeTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunFailure {
    Collision { time: f64, certificate: f64 },
    Divergence { time: f64 },
    NonFinite { time: f64 },
    PlanInfeasible { time: f64, reason: String },
    GraspTimeout { time: f64 },
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunFailure::Collision { time, certificate } => write!(f, "collision at t = {time:.3} s (certificate {certificate:.4})"),
            RunFailure::Divergence { time } => write!(f, "tracking diverged at t = {time:.3} s"),
            RunFailure::NonFinite { time } => write!(f, "non-finite state at t = {time:.3} s"),
            RunFailure::PlanInfeasible { time, reason } => write!(f, "planning failed at t = {time:.3} s: {reason}"),
            RunFailure::GraspTimeout { time } => write!(f, "grasp not triggered by t = {time:.3} s"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub collision_avoidance: bool,
    pub metrics: Option<RunMetrics>,
    pub telemetry: Vec<TelemetryRow>,
    pub solves: Vec<SolveRecord>,
    pub offline: Vec<OfflineRecord>,
    pub gripper_closed_at: Option<f64>,
    pub payload_attached_at: Option<f64>,
    /// First failure; the run may continue past a collision to record its depth.
    pub failure: Option<RunFailure>,
    pub min_certificate: f64,
    pub max_tilt: f64,
    pub max_orthonormality_error: f64,
    pub duration: f64,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

fn quaternion(r: &RotationMatrix, previous: Option<[f64; 4]>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r.matrix()));
    let mut out = [q.w, q.i, q.j, q.k];
    if let Some(p) = previous {
        if out.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            out = out.map(|x| -x);
        }
    }
    out
}

fn whole_body(s: &RigidBodyState) -> WholeBodyConfig {
    WholeBodyConfig { position: s.position, rotation: s.rotation, joints: s.joints }
}

fn tilt(r: &RotationMatrix) -> f64 {
    r.matrix()[(2, 2)].clamp(-1.0, 1.0).acos()
}

/// Where the base, arm and EE reference come from at a given instant.
struct Reference {
    plan: Option<Arc<TrajectoryPlan>>,
    hold_position: Vec3,
    hold_rotation: RotationMatrix,
    hold_joints: Vec3,
}

impl Reference {
    fn setpoint(&mut self, t: f64, stale_after: f64) -> (Setpoint, JointTarget) {
        if let Some(plan) = &self.plan {
            if t - plan.stamp <= stale_after {
                if let Ok(s) = plan_to_setpoints(plan, t) {
                    self.hold_position = s.base.position;
                    self.hold_rotation = s.base.rotation;
                    self.hold_joints = s.joints;
                    return (s.base, JointTarget { angles: s.joints, rates: s.joint_rates });
                }
            }
        }
        (Setpoint::hold(self.hold_position, self.hold_rotation), JointTarget { angles: self.hold_joints, rates: Vec3::zeros() })
    }
}

/// Active offline plan for the EE.
struct EeGoal {
    trajectory: EeTrajectory,
    start_time: f64,
}

impl EeGoal {
    fn window(&self, t: f64, steps: usize, dt: f64) -> Vec<EeReference> {
        oam_core::planner_nmpc::reference_window(&self.trajectory, t - self.start_time, steps, dt)
    }
}

/// Finite difference of a sampled vector signal.
#[derive(Default)]
struct Differentiator {
    last: Option<Vec3>,
}

impl Differentiator {
    fn update(&mut self, x: Vec3, dt: f64) -> Vec3 {
        let d = self.last.map_or(Vec3::zeros(), |l| (x - l) / dt);
        self.last = Some(x);
        d
    }
}

fn build_disturbances(scenario: &Scenario, cfg: &SimConfig, model: &ManipulatorModel) -> DisturbanceModel {
    let mut d = DisturbanceModel::default();
    if cfg.disturbance.arm_reaction {
        d.push(DisturbanceComponent::Arm(ArmReaction { link_masses: cfg.vehicle.link_masses, model: model.clone() }));
    }
    if cfg.disturbance.ground_effect_fraction > 0.0 && !scenario.surfaces.is_empty() {
        d.push(DisturbanceComponent::GroundEffect {
            surfaces: scenario.surfaces.clone(),
            hover_force: cfg.hover_force(),
            fraction: cfg.disturbance.ground_effect_fraction,
            length_scale: cfg.disturbance.ground_effect_length,
        });
    }
    for c in &scenario.extra_disturbances {
        d.push(c.clone());
    }
    d
}

fn ticks(a: f64, b: f64) -> usize {
    (a / b).round() as usize
}

/// Runs one scenario to completion or failure.
pub fn run_scenario(scenario: &Scenario, cfg: &SimConfig, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let model = cfg.vehicle.manipulator();
    let params = cfg.vehicle.plant_params();
    let mut plant = Plant::new(params.clone(), &cfg.vehicle.allocation(), cfg.vehicle.plant_config()).map_err(oam_core::error::SimError::from)?;
    let gains = opts.gains.unwrap_or_else(|| cfg.gains.gain_set());
    let mut controller = PoseController::new(opts.controller, gains, &params)?;
    let dist = build_disturbances(scenario, cfg, &model);

    let bodies = BodyEllipsoidSet::for_model(&model, Vec3::from(cfg.vehicle.base_semi_axes), cfg.vehicle.link_radius);
    let truth = CollisionScene::new(model.clone(), bodies.clone(), scenario.obstacles.clone());
    let planning = CollisionScene::new(model.clone(), bodies.inflated(cfg.nmpc.planning_inflation), scenario.obstacles.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let jitter = Vec3::from_fn(|_, _| rng.random_range(-0.002..0.002));
    let mut state = RigidBodyState {
        position: scenario.start.position + jitter,
        rotation: scenario.start.rotation,
        joints: scenario.start.joints,
        ..Default::default()
    };
    // a scripted sweep is already under way when the run starts
    if let Task::Regulate { sweep, .. } = &scenario.task {
        state.joints = sweep.angles(0.0);
        state.joint_rates = sweep.rates(0.0);
    }

    let r = &cfg.rates;
    let control_dt = r.control_dt;
    let substeps = ticks(control_dt, r.plant_dt);
    let replan_every = ticks(r.replan_period, control_dt);
    let latency_ticks = ticks(r.replan_latency, control_dt);
    let stale_after = 2.0 * r.replan_period;

    let mut outcome = RunOutcome {
        scenario: scenario.name.clone(),
        controller: opts.controller,
        seed: opts.seed,
        collision_avoidance: opts.collision_avoidance,
        metrics: None,
        telemetry: Vec::new(),
        solves: Vec::new(),
        offline: Vec::new(),
        gripper_closed_at: None,
        payload_attached_at: None,
        failure: None,
        min_certificate: f64::INFINITY,
        max_tilt: 0.0,
        max_orthonormality_error: 0.0,
        duration: 0.0,
    };

    // grasp task state
    let mut worker = None;
    let mut ee_goal = None;
    let mut grasp = GraspTrigger::new(cfg.grasp.threshold, cfg.grasp.dwell);
    let mut goal_point = Vec3::zeros();
    let mut nmpc_params = cfg.nmpc.params(opts.collision_avoidance, false);
    let mut end_time = f64::INFINITY;
    let mut grasp_deadline = f64::INFINITY;
    let mut pull = None;
    match &scenario.task {
        Task::Grasp { ee_goal: goal, ee_goal_rotation, pull_direction } => {
            let ee = model.forward_kinematics(&whole_body(&state)).end_effector;
            let offline = cfg.offline.params();
            let traj = plan_ee_trajectory(&ee.position, &ee.rotation, goal, ee_goal_rotation.as_ref(), &scenario.obstacles, &offline)?;
            grasp_deadline = traj.duration() + cfg.grasp.timeout;
            outcome.offline.push(OfflineRecord { label: "approach", start_time: 0.0, trajectory: traj.clone() });
            ee_goal = Some(EeGoal { trajectory: traj, start_time: 0.0 });
            goal_point = *goal;
            nmpc_params.track_orientation = ee_goal_rotation.is_some();
            pull = Some((*pull_direction, ee_goal_rotation.unwrap_or(ee.rotation)));
            worker = Some(PlannerWorker::spawn(planning.clone()));
        }
        Task::Regulate { duration, .. } => end_time = *duration,
    }
    let rows_per_knot = if opts.collision_avoidance { planning.num_certificates() } else { 0 } + model.polytope.len();

    let mut reference =
        Reference { plan: None, hold_position: scenario.start.position, hold_rotation: scenario.start.rotation, hold_joints: scenario.start.joints };
    if let Task::Regulate { position, rotation, .. } = &scenario.task {
        reference.hold_position = *position;
        reference.hold_rotation = *rotation;
    }

    let mut realized = ActuatorCommand::default();
    let mut submitted_at = 0usize;
    let mut consecutive_failures = 0usize;
    let mut warm: Option<Arc<TrajectoryPlan>> = None;
    let mut samples: Vec<TrackingSample> = Vec::new();
    let mut solve_times = Vec::new();
    let warmup = scenario.warmup();
    let mut last_quat = None;
    let (mut d_jerk, mut d_force, mut d_torque, mut d_inertia) =
        (Differentiator::default(), Differentiator::default(), Differentiator::default(), Differentiator::default());
    let inertia_error = params.inertia - params.nominal_inertia_matrix();

    let mut k = 0usize;
    loop {
        let t = k as f64 * control_dt;
        if t > end_time + 1e-9 {
            break;
        }

        // online replanning
        if let (Some(w), Some(goal)) = (worker.as_mut(), ee_goal.as_ref()) {
            if k.is_multiple_of(replan_every) && w.pending() == 0 {
                let warm_start = warm.as_ref().map(|p| p.shifted_warm_start(rows_per_knot));
                w.submit(PlanRequest {
                    stamp: t,
                    state: whole_body(&state),
                    references: goal.window(t, nmpc_params.steps, nmpc_params.dt),
                    warm: warm_start,
                    params: nmpc_params,
                })?;
                submitted_at = k;
            }
            if w.pending() > 0 && k >= submitted_at + latency_ticks {
                let resp = w.collect()?;
                solve_times.push(resp.wall_ms);
                match resp.result {
                    Ok(plan) => {
                        outcome.solves.push(SolveRecord {
                            stamp: resp.stamp,
                            wall_ms: resp.wall_ms,
                            iterations: plan.report.iterations,
                            min_certificate: plan.report.min_certificate,
                            status: format!("{:?}", plan.report.status),
                            accepted: true,
                        });
                        consecutive_failures = 0;
                        warm = Some(plan.clone());
                        reference.plan = Some(plan);
                    }
                    Err(e) => {
                        outcome.solves.push(SolveRecord {
                            stamp: resp.stamp,
                            wall_ms: resp.wall_ms,
                            iterations: 0,
                            min_certificate: f64::NAN,
                            status: e.to_string(),
                            accepted: false,
                        });
                        warm = None;
                        consecutive_failures += 1;
                        if consecutive_failures > cfg.nmpc.retry_budget {
                            outcome.failure.get_or_insert(RunFailure::PlanInfeasible { time: t, reason: e.to_string() });
                            break;
                        }
                    }
                }
            }
        }

        // setpoint
        let (sp, joint_target) = match &scenario.task {
            Task::Regulate { position, rotation, sweep, .. } => {
                (Setpoint::hold(*position, *rotation), JointTarget { angles: sweep.angles(t), rates: sweep.rates(t) })
            }
            Task::Grasp { .. } => reference.setpoint(t, stale_after),
        };

        let wrench = controller.update(&state, &sp, control_dt)?;
        let cmd = plant.allocator().allocate(&wrench);
        if k == 0 {
            // start trimmed: actuators already at the first command
            realized = cmd;
        }

        // ground-truth monitoring
        let x = whole_body(&state);
        let certificate = truth.min_certificate(&x);
        outcome.min_certificate = outcome.min_certificate.min(certificate);
        if certificate <= 0.0 && outcome.failure.is_none() {
            outcome.failure = Some(RunFailure::Collision { time: t, certificate });
        }
        let base_tilt = tilt(&state.rotation);
        outcome.max_tilt = outcome.max_tilt.max(base_tilt);
        outcome.max_orthonormality_error = outcome.max_orthonormality_error.max(state.rotation.orthonormality_error());

        let e_p = sp.position - state.position;
        let d_g = geodesic_distance(&state.rotation, &sp.rotation);
        if t >= warmup - 1e-9 {
            samples.push(TrackingSample { time: t, position_error: e_p.norm(), orientation_error: d_g });
        }
        if e_p.norm() > cfg.divergence_limit {
            outcome.failure = Some(RunFailure::Divergence { time: t });
            break;
        }

        // Lyapunov functions with the ground-truth lumped uncertainty
        let d = plant.disturbance(&state, &joint_target, &dist, t);
        let jerk = d_jerk.update(sp.acceleration, control_dt);
        let n_t = jerk * (plant.params.mass - params.nominal_mass) - d_force.update(d.force, control_dt);
        let rel = state.rotation.matrix().transpose() * sp.rotation.matrix();
        let feed = rel * sp.angular_acceleration - hat(&state.angular_velocity) * rel * sp.angular_velocity;
        let n_r = d_inertia.update(inertia_error * feed, control_dt) - d_torque.update(d.torque, control_dt);
        let v_t = lyapunov_translational(controller.translational_error(), plant.params.mass, &controller.gains().translational, &n_t);
        let v_r =
            lyapunov_rotational(controller.rotational_error(), &state.rotation, &sp.rotation, &params.inertia, &controller.gains().rotational, &n_r);

        let ee = model.forward_kinematics(&x).end_effector;
        let ee_goal_distance = if ee_goal.is_some() { (ee.position - goal_point).norm() } else { 0.0 };

        if k.is_multiple_of(r.telemetry_decimation) {
            let q = quaternion(&state.rotation, last_quat);
            last_quat = Some(q);
            outcome.telemetry.push(TelemetryRow {
                time: t,
                position: state.position,
                quaternion: q,
                position_error: e_p,
                attitude_error: d_g,
                force: wrench.force,
                torque: wrench.torque,
                thrusts: cmd.thrust,
                tilts: cmd.tilt,
                lyapunov_translational: v_t.value,
                lyapunov_rotational: v_r.value,
                joints: state.joints,
                certificate,
                tilt: base_tilt,
                ee_goal_distance,
            });
        }

        // grasp sequencing
        if ee_goal.is_some() {
            match grasp.update(t, ee_goal_distance) {
                GraspEvent::GripperClosed => outcome.gripper_closed_at = Some(t),
                GraspEvent::PayloadAttached => {
                    outcome.payload_attached_at = Some(t);
                    plant.set_mass(plant.params.mass + cfg.grasp.payload_mass);
                    let (direction, rotation) = pull.expect("grasp task");
                    let target = goal_point + direction * cfg.grasp.pull_distance;
                    let mut offline = cfg.offline.params();
                    offline.horizon = cfg.grasp.pull_duration;
                    let traj = plan_ee_trajectory(&goal_point, &rotation, &target, None, &scenario.obstacles, &offline)?;
                    outcome.offline.push(OfflineRecord { label: "pull", start_time: t, trajectory: traj.clone() });
                    ee_goal = Some(EeGoal { trajectory: traj, start_time: t });
                    goal_point = target;
                    end_time = t + cfg.grasp.pull_duration + cfg.grasp.hold_after_pull;
                }
                GraspEvent::None => {}
            }
            if outcome.gripper_closed_at.is_none() && t > grasp_deadline {
                outcome.failure.get_or_insert(RunFailure::GraspTimeout { time: t });
                break;
            }
        }

        // plant
        let mut failed = false;
        for i in 0..substeps {
            let ti = t + i as f64 * r.plant_dt;
            match plant.step(&state, &mut realized, &cmd, &joint_target, &dist, ti, r.plant_dt) {
                Ok(s) => state = s,
                Err(_) => {
                    outcome.failure = Some(RunFailure::NonFinite { time: ti });
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            break;
        }
        k += 1;
        outcome.duration = k as f64 * control_dt;
    }

    // drain so the worker thread shuts down cleanly
    if let Some(w) = worker.as_mut() {
        while w.pending() > 0 {
            let _ = w.collect();
        }
    }
    outcome.metrics = compute_metrics(&samples, &solve_times, outcome.min_certificate).ok();
    Ok(outcome)
}

/// True inertia error used by the rotational uncertainty term; exposed for tests.
pub fn inertia_mismatch(cfg: &SimConfig) -> Mat3 {
    let p = cfg.vehicle.plant_params();
    p.inertia - p.nominal_inertia_matrix()
}
