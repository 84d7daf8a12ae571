//! Run artefacts: `telemetry.csv`, `plan.json`, `metrics.json` and
//! `solver_log.json` in one output directory.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::HarnessError;
use crate::runner::{RunOutcome, TelemetryRow};

pub const TELEMETRY_HEADER: [&str; 38] = [
    "t",
    "px",
    "py",
    "pz",
    "qw",
    "qx",
    "qy",
    "qz",
    "ep_x",
    "ep_y",
    "ep_z",
    "d_g",
    "fx",
    "fy",
    "fz",
    "tx",
    "ty",
    "tz",
    "F1",
    "F2",
    "F3",
    "F4",
    "F5",
    "F6",
    "a1",
    "a2",
    "a3",
    "a4",
    "a5",
    "a6",
    "V_t",
    "V_r",
    "theta1",
    "theta2",
    "theta3",
    "certificate",
    "tilt_deg",
    "ee_goal_dist",
];

fn row(r: &TelemetryRow) -> Vec<f64> {
    let mut v = vec![r.time];
    v.extend(r.position.iter());
    v.extend(r.quaternion);
    v.extend(r.position_error.iter());
    v.push(r.attitude_error);
    v.extend(r.force.iter());
    v.extend(r.torque.iter());
    v.extend(r.thrusts);
    v.extend(r.tilts);
    v.push(r.lyapunov_translational);
    v.push(r.lyapunov_rotational);
    v.extend(r.joints.iter());
    v.push(r.certificate);
    v.push(r.tilt.to_degrees());
    v.push(r.ee_goal_distance);
    v
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(path.display().to_string(), e)
}

pub fn write_telemetry(path: &Path, rows: &[TelemetryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TELEMETRY_HEADER)?;
    for r in rows {
        w.write_record(row(r).iter().map(|x| format!("{x:.9e}")))?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

#[derive(Serialize)]
struct Knot {
    t: f64,
    position: [f64; 3],
    velocity: [f64; 3],
    acceleration: [f64; 3],
    rotation: [[f64; 3]; 3],
}

fn plan_json(outcome: &RunOutcome) -> serde_json::Value {
    let plans: Vec<_> = outcome
        .offline
        .iter()
        .map(|rec| {
            let traj = &rec.trajectory;
            let knots: Vec<Knot> = (0..traj.num_knots())
                .map(|k| {
                    let s = traj.knot(k);
                    let m = s.rotation.rotation.matrix();
                    Knot {
                        t: rec.start_time + s.time,
                        position: s.translation.position.into(),
                        velocity: s.translation.velocity.into(),
                        acceleration: s.translation.acceleration.into(),
                        rotation: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
                    }
                })
                .collect();
            json!({ "label": rec.label, "start_time": rec.start_time, "dt": traj.dt(), "duration": traj.duration(), "knots": knots })
        })
        .collect();
    json!({ "scenario": outcome.scenario, "plans": plans })
}

fn metrics_json(outcome: &RunOutcome) -> serde_json::Value {
    let m = outcome.metrics.as_ref();
    let stats = |s: &oam_core::sim::ErrorStats| json!({ "rms": s.rms, "mean": s.mean, "std": s.std });
    json!({
        "scenario": outcome.scenario,
        "controller": format!("{:?}", outcome.controller).to_lowercase(),
        "seed": outcome.seed,
        "collision_avoidance": outcome.collision_avoidance,
        "success": outcome.succeeded(),
        "failure": outcome.failure.as_ref().map(|f| f.to_string()),
        "duration": outcome.duration,
        "position_error_cm": m.map(|m| stats(&m.position)),
        "orientation_error_deg": m.map(|m| stats(&m.orientation)),
        "solve_time_ms": m.and_then(|m| m.solve_time.as_ref()).map(|s| json!({ "min": s.min, "max": s.max, "mean": s.mean })),
        "min_collision_certificate": outcome.min_certificate,
        "max_tilt_deg": outcome.max_tilt.to_degrees(),
        "max_orthonormality_error": outcome.max_orthonormality_error,
        "gripper_closed_at": outcome.gripper_closed_at,
        "payload_attached_at": outcome.payload_attached_at,
    })
}

fn solver_log_json(outcome: &RunOutcome) -> serde_json::Value {
    let solves: Vec<_> = outcome
        .solves
        .iter()
        .map(|s| {
            json!({
                "stamp": s.stamp, "wall_ms": s.wall_ms, "iterations": s.iterations,
                "min_certificate": if s.min_certificate.is_finite() { Some(s.min_certificate) } else { None },
                "status": s.status, "accepted": s.accepted,
            })
        })
        .collect();
    json!({ "scenario": outcome.scenario, "solves": solves })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io(path))
}

/// Writes all four artefacts into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_telemetry(&dir.join("telemetry.csv"), &outcome.telemetry)?;
    write_json(&dir.join("plan.json"), &plan_json(outcome))?;
    write_json(&dir.join("metrics.json"), &metrics_json(outcome))?;
    write_json(&dir.join("solver_log.json"), &solver_log_json(outcome))
}
