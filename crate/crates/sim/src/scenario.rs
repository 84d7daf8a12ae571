//! Built-in scenarios: grasp-and-pull from the ground and from a table, and
//! hover regulation under a swinging arm for controller comparison.

use std::f64::consts::PI;

use oam_core::collision::{Ellipsoid, ObstacleSet};
use oam_core::geometry::{RotationMatrix, Vec3};
use oam_core::robot_model::{ManipulatorModel, WholeBodyConfig};
use oam_core::sim::{DisturbanceComponent, Surface};

use crate::error::HarnessError;

pub const SCENARIO_NAMES: [&str; 7] = ["ground-basic", "ground-yaw", "ground-pitch", "table-far", "table-close", "ctrl-compare-0", "ctrl-compare-30"];

/// Scripted motion of the arm joints: `rest + amplitude ⊙ sin(2πt / period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSweep {
    pub rest: Vec3,
    pub amplitude: Vec3,
    pub period: f64,
}

impl JointSweep {
    pub fn angles(&self, t: f64) -> Vec3 {
        self.rest + self.amplitude * (2.0 * PI * t / self.period).sin()
    }

    pub fn rates(&self, t: f64) -> Vec3 {
        self.amplitude * (2.0 * PI / self.period * (2.0 * PI * t / self.period).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// Plan to an EE goal, grasp, then pull along `pull_direction`.
    Grasp { ee_goal: Vec3, ee_goal_rotation: Option<RotationMatrix>, pull_direction: Vec3 },
    /// Hold a fixed base pose while the arm follows `sweep`.
    Regulate { position: Vec3, rotation: RotationMatrix, sweep: JointSweep, duration: f64, warmup: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub start: WholeBodyConfig,
    /// Ground-truth obstacles (no inflation).
    pub obstacles: ObstacleSet,
    /// Surfaces producing ground effect.
    pub surfaces: Vec<Surface>,
    pub task: Task,
    /// Disturbances on top of arm reaction and ground effect.
    pub extra_disturbances: Vec<DisturbanceComponent>,
}

fn ground() -> ObstacleSet {
    ObstacleSet { ellipsoids: Vec::new(), ground_height: 0.0 }
}

const TABLE_CENTER: [f64; 3] = [1.4, 0.0, 0.7];
const TABLE_SEMI_AXES: [f64; 3] = [0.6, 0.4, 0.05];

fn table() -> (ObstacleSet, Surface) {
    let c = Vec3::from(TABLE_CENTER);
    let e = Ellipsoid::from_semi_axes(c, Vec3::from(TABLE_SEMI_AXES), &RotationMatrix::identity()).expect("table shape");
    let top = Surface { height: c.z + TABLE_SEMI_AXES[2], footprint: Some(([c.x, c.y], [TABLE_SEMI_AXES[0], TABLE_SEMI_AXES[1]])) };
    (ObstacleSet { ellipsoids: vec![e], ground_height: 0.0 }, top)
}

fn hover_start(rotation: RotationMatrix) -> WholeBodyConfig {
    WholeBodyConfig { position: Vec3::new(0.0, 0.0, 1.0), rotation, joints: Vec3::new(0.0, 0.6, 0.6) }
}

fn ground_surface() -> Surface {
    Surface { height: 0.0, footprint: None }
}

/// Gripper pointing straight down.
fn pointing_down() -> RotationMatrix {
    RotationMatrix::about_y(PI)
}

const GROUND_GOAL: [f64; 3] = [1.0, 0.0, 0.05];
/// With the gripper flipped the wrist link sits below the EE, so the
/// reachable grasp point is higher.
const GROUND_PITCH_GOAL: [f64; 3] = [1.0, 0.0, 0.10];

impl Scenario {
    pub fn builtin(name: &str, model: &ManipulatorModel) -> Result<Self, HarnessError> {
        let up = Vec3::z();
        let s = match name {
            "ground-basic" => Scenario {
                name: name.into(),
                start: hover_start(RotationMatrix::identity()),
                obstacles: ground(),
                surfaces: vec![ground_surface()],
                task: Task::Grasp { ee_goal: Vec3::from(GROUND_GOAL), ee_goal_rotation: Some(pointing_down()), pull_direction: up },
                extra_disturbances: Vec::new(),
            },
            "ground-yaw" => Scenario {
                name: name.into(),
                start: hover_start(RotationMatrix::about_z(PI)),
                obstacles: ground(),
                surfaces: vec![ground_surface()],
                task: Task::Grasp { ee_goal: Vec3::from(GROUND_GOAL), ee_goal_rotation: Some(pointing_down()), pull_direction: up },
                extra_disturbances: Vec::new(),
            },
            "ground-pitch" => {
                let start = hover_start(RotationMatrix::identity());
                let ee = model.forward_kinematics(&start).end_effector.rotation;
                let goal = RotationMatrix::from_matrix_unchecked(ee.matrix() * RotationMatrix::about_y(PI).matrix()).renormalized();
                Scenario {
                    name: name.into(),
                    start,
                    obstacles: ground(),
                    surfaces: vec![ground_surface()],
                    task: Task::Grasp { ee_goal: Vec3::from(GROUND_PITCH_GOAL), ee_goal_rotation: Some(goal), pull_direction: up },
                    extra_disturbances: Vec::new(),
                }
            }
            "table-far" | "table-close" => {
                let (obstacles, top) = table();
                let x = if name == "table-far" { TABLE_CENTER[0] } else { TABLE_CENTER[0] - 0.45 };
                Scenario {
                    name: name.into(),
                    start: hover_start(RotationMatrix::identity()),
                    obstacles,
                    surfaces: vec![ground_surface(), top],
                    task: Task::Grasp {
                        ee_goal: Vec3::new(x, 0.0, 1.0),
                        ee_goal_rotation: Some(RotationMatrix::about_y(0.5 * PI)),
                        pull_direction: up,
                    },
                    extra_disturbances: Vec::new(),
                }
            }
            "ctrl-compare-0" | "ctrl-compare-30" => {
                let pitch = if name == "ctrl-compare-0" { 0.0 } else { -30f64.to_radians() };
                let rotation = RotationMatrix::about_y(pitch);
                let position = Vec3::new(0.0, 0.0, 1.0);
                let tilt = Vec3::new(1.0, 1.0, 0.0).normalize() * 10f64.to_radians();
                let start_rotation = RotationMatrix::from_matrix_unchecked(rotation.matrix() * RotationMatrix::exp(&tilt).matrix());
                let deg45 = 45f64.to_radians();
                Scenario {
                    name: name.into(),
                    start: WholeBodyConfig {
                        position: position + Vec3::new(0.2, -0.2, 0.1),
                        rotation: start_rotation.renormalized(),
                        joints: Vec3::zeros(),
                    },
                    obstacles: ground(),
                    surfaces: vec![ground_surface()],
                    task: Task::Regulate {
                        position,
                        rotation,
                        sweep: JointSweep { rest: Vec3::zeros(), amplitude: Vec3::new(deg45, deg45, 0.0), period: 10.0 },
                        duration: 40.0,
                        warmup: 10.0,
                    },
                    extra_disturbances: Vec::new(),
                }
            }
            other => return Err(HarnessError::UnknownScenario(other.into())),
        };
        Ok(s)
    }

    /// Time before which samples are left out of the metrics.
    pub fn warmup(&self) -> f64 {
        match self.task {
            Task::Regulate { warmup, .. } => warmup,
            Task::Grasp { .. } => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use oam_core::collision::point_barrier;

    #[test]
    fn every_name_resolves() {
        let model = ManipulatorModel::default();
        for name in SCENARIO_NAMES {
            assert_eq!(Scenario::builtin(name, &model).unwrap().name, name);
        }
        assert!(matches!(Scenario::builtin("ground-sideways", &model), Err(HarnessError::UnknownScenario(_))));
    }

    #[test]
    fn goals_are_clear_of_obstacles() {
        let model = ManipulatorModel::default();
        for name in SCENARIO_NAMES {
            let s = Scenario::builtin(name, &model).unwrap();
            if let Task::Grasp { ee_goal, .. } = s.task {
                assert!(ee_goal.z > s.obstacles.ground_height);
                for o in &s.obstacles.ellipsoids {
                    assert!(point_barrier(&ee_goal, o).0 > 0.0);
                }
            }
        }
    }

    #[test]
    fn ground_pitch_goal_is_a_half_turn_from_the_start() {
        let model = ManipulatorModel::default();
        let s = Scenario::builtin("ground-pitch", &model).unwrap();
        let Task::Grasp { ee_goal_rotation: Some(goal), .. } = s.task else { panic!() };
        let start = model.forward_kinematics(&s.start).end_effector.rotation;
        let rel = start.transpose().matrix() * goal.matrix();
        assert!((rel.trace() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_rate_is_the_derivative_of_the_angle() {
        let s = JointSweep { rest: Vec3::new(0.1, 0.0, 0.0), amplitude: Vec3::new(0.7, 0.7, 0.0), period: 10.0 };
        let h = 1e-6;
        for t in [0.0, 1.3, 7.9] {
            let fd = (s.angles(t + h) - s.angles(t - h)) / (2.0 * h);
            assert!((fd - s.rates(t)).norm() < 1e-8);
        }
        assert!((s.angles(2.5) - Vec3::new(0.8, 0.7, 0.0)).norm() < 1e-12);
    }
}
