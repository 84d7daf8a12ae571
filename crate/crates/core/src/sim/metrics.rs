#[allow(unused_imports)]
use nalgebra::ComplexField;

use crate::error::SimError;

/// Tracking errors at one telemetry instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingSample {
    pub time: f64,
    /// ‖e_p‖ in metres.
    pub position_error: f64,
    /// Geodesic attitude error in radians.
    pub orientation_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub rms: f64,
    pub mean: f64,
    pub std: f64,
}

impl ErrorStats {
    fn from_iter(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let ms = values.clone().map(|x| x * x).sum::<f64>() / n;
        let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { rms: ms.sqrt(), mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveTimeStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunMetrics {
    /// Centimetres.
    pub position: ErrorStats,
    /// Degrees.
    pub orientation: ErrorStats,
    /// Milliseconds; absent when no online solve ran.
    pub solve_time: Option<SolveTimeStats>,
    pub min_collision_certificate: f64,
    pub samples: usize,
}

pub fn compute_metrics(samples: &[TrackingSample], solve_times_ms: &[f64], min_certificate: f64) -> Result<RunMetrics, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptyTelemetry);
    }
    let position = ErrorStats::from_iter(samples.iter().map(|s| s.position_error * 100.0));
    let orientation = ErrorStats::from_iter(samples.iter().map(|s| s.orientation_error.to_degrees()));
    let solve_time = if solve_times_ms.is_empty() {
        None
    } else {
        Some(SolveTimeStats {
            min: solve_times_ms.iter().copied().fold(f64::INFINITY, f64::min),
            max: solve_times_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: solve_times_ms.iter().sum::<f64>() / solve_times_ms.len() as f64,
        })
    };
    Ok(RunMetrics { position, orientation, solve_time, min_collision_certificate: min_certificate, samples: samples.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_distance, RotationMatrix};
    use approx::assert_relative_eq;

    fn sample(p: f64, o: f64) -> TrackingSample {
        TrackingSample { time: 0.0, position_error: p, orientation_error: o }
    }

    #[test]
    fn constant_error() {
        let m = compute_metrics(&[sample(0.01, 0.0); 10], &[], 1.0).unwrap();
        assert_relative_eq!(m.position.rms, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.position.mean, 1.0, epsilon = 1e-12);
        assert!(m.position.std.abs() < 1e-12);
        assert!(m.solve_time.is_none());
    }

    #[test]
    fn alternating_error() {
        let s: alloc::vec::Vec<_> = (0..100).map(|k| sample(if k % 2 == 0 { 0.0 } else { 0.02 }, 0.0)).collect();
        let m = compute_metrics(&s, &[3.0, 1.0, 2.0], 1.0).unwrap();
        assert_relative_eq!(m.position.mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.position.rms, 2f64.sqrt(), epsilon = 1e-12);
        let st = m.solve_time.unwrap();
        assert_eq!((st.min, st.max, st.mean), (1.0, 3.0, 2.0));
    }

    #[test]
    fn fixed_rotation_offset_in_degrees() {
        let d = geodesic_distance(&RotationMatrix::identity(), &RotationMatrix::about_z(0.1));
        let m = compute_metrics(&[sample(0.0, d); 5], &[], 1.0).unwrap();
        assert_relative_eq!(m.orientation.mean, 5.729577951308232, epsilon = 1e-9);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(compute_metrics(&[], &[], 0.0), Err(SimError::EmptyTelemetry));
    }
}
