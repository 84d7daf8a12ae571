//! Ellipsoid primitives and collision certificates: the point barrier and
//! its rate form for the end-effector stage, the Minkowski-sum separation
//! certificate for body pairs, and sphere-over-ground clearance.

use alloc::vec::Vec;

use nalgebra::ComplexField;

use crate::error::ModelError;
use crate::geometry::{Mat3, RotationMatrix, Vec3};
use crate::robot_model::{BodyEllipsoidSet, ManipulatorModel, WholeBodyConfig};

/// `{p : (p − c)ᵀ Q⁻¹ (p − c) ≤ 1}` with the inverse shape cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Vec3,
    shape: Mat3,
    shape_inv: Mat3,
}

impl Ellipsoid {
    pub fn new(center: Vec3, shape: Mat3) -> Result<Self, ModelError> {
        if !center.iter().chain(shape.iter()).all(|x| x.is_finite()) {
            return Err(ModelError::InvalidParameter("ellipsoid"));
        }
        if (shape - shape.transpose()).norm() > 1e-12 * shape.norm().max(1.0) {
            return Err(ModelError::NotPositiveDefinite);
        }
        let chol = shape.cholesky().ok_or(ModelError::NotPositiveDefinite)?;
        Ok(Self { center, shape, shape_inv: chol.inverse() })
    }

    pub(crate) fn new_unchecked(center: Vec3, shape: Mat3) -> Self {
        let shape_inv = shape.try_inverse().unwrap_or_else(Mat3::zeros);
        Self { center, shape, shape_inv }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Result<Self, ModelError> {
        Self::new(center, Mat3::identity() * (radius * radius))
    }

    /// Semi-axes along the columns of `orientation`.
    pub fn from_semi_axes(center: Vec3, semi_axes: Vec3, orientation: &RotationMatrix) -> Result<Self, ModelError> {
        if semi_axes.iter().any(|a| !(*a > 0.0)) {
            return Err(ModelError::NotPositiveDefinite);
        }
        let r = orientation.matrix();
        let shape = r * Mat3::from_diagonal(&semi_axes.component_mul(&semi_axes)) * r.transpose();
        Self::new(center, 0.5 * (shape + shape.transpose()))
    }

    pub fn center(&self) -> &Vec3 {
        &self.center
    }

    pub fn shape(&self) -> &Mat3 {
        &self.shape
    }

    pub fn shape_inverse(&self) -> &Mat3 {
        &self.shape_inv
    }

    /// Every semi-axis grown by `margin`.
    pub fn inflated(&self, margin: f64) -> Self {
        Self::new_unchecked(self.center, inflate_shape(&self.shape, margin))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        point_barrier(p, self).0 <= 0.0
    }
}

pub(crate) fn inflate_shape(shape: &Mat3, margin: f64) -> Mat3 {
    let eig = shape.symmetric_eigen();
    let grown = eig.eigenvalues.map(|l| {
        let a = l.max(0.0).sqrt() + margin;
        a * a
    });
    let q = eig.eigenvectors * Mat3::from_diagonal(&grown) * eig.eigenvectors.transpose();
    0.5 * (q + q.transpose())
}

/// Static obstacles plus a ground half-space `z ≥ ground_height`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleSet {
    pub ellipsoids: Vec<Ellipsoid>,
    pub ground_height: f64,
}

impl ObstacleSet {
    pub fn inflated(&self, margin: f64) -> Self {
        Self { ellipsoids: self.ellipsoids.iter().map(|e| e.inflated(margin)).collect(), ground_height: self.ground_height }
    }

    /// Same obstacles shifted by `d` (ground height included).
    pub fn translated(&self, d: &Vec3) -> Self {
        Self {
            ellipsoids: self.ellipsoids.iter().map(|e| Ellipsoid { center: e.center + d, ..e.clone() }).collect(),
            ground_height: self.ground_height + d.z,
        }
    }
}

/// `h = (p − c)ᵀQ⁻¹(p − c) − 1` and its gradient.
pub fn point_barrier(p: &Vec3, obs: &Ellipsoid) -> (f64, Vec3) {
    let d = p - obs.center;
    let qd = obs.shape_inv * d;
    (d.dot(&qd) - 1.0, qd * 2.0)
}

/// `h̃ = ∇h·v + γ h`.
pub fn rate_barrier(p: &Vec3, v: &Vec3, obs: &Ellipsoid, gamma: f64) -> f64 {
    let (h, grad) = point_barrier(p, obs);
    grad.dot(v) + gamma * h
}

/// Shape of the ellipsoid bounding the Minkowski sum of `a` and `b`.
pub fn minkowski_shape(a: &Mat3, b: &Mat3) -> Mat3 {
    let sa = a.trace().sqrt();
    let sb = b.trace().sqrt();
    (a / sa + b / sb) * (sa + sb)
}

/// Positive values certify that the two ellipsoids are disjoint.
pub fn minkowski_separation(a: &Ellipsoid, b: &Ellipsoid) -> f64 {
    let q = minkowski_shape(&a.shape, &b.shape);
    let d = a.center - b.center;
    match q.cholesky() {
        Some(ch) => d.dot(&ch.solve(&d)) - 1.0,
        None => -1.0,
    }
}

/// `z_i − r_i − ground` for each body sphere.
pub fn ground_clearance(model: &ManipulatorModel, x: &WholeBodyConfig, set: &BodyEllipsoidSet, ground_height: f64) -> Vec<f64> {
    set.centers(model, x).iter().zip(&set.bodies).map(|(c, b)| c.z - ground_height - b.ground_radius).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere() -> Ellipsoid {
        Ellipsoid::sphere(Vec3::zeros(), 1.0).unwrap()
    }

    #[test]
    fn point_barrier_examples() {
        let (h, g) = point_barrier(&Vec3::new(2.0, 0.0, 0.0), &unit_sphere());
        assert_relative_eq!(h, 3.0);
        assert_relative_eq!(g, Vec3::new(4.0, 0.0, 0.0));
        let p = Vec3::new(1.0, 1.0, 1.0).normalize();
        assert!(point_barrier(&p, &unit_sphere()).0.abs() < 1e-15);
        let e = Ellipsoid::new(Vec3::zeros(), Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).unwrap();
        assert_relative_eq!(point_barrier(&Vec3::new(2.0, 0.0, 0.0), &e).0, 0.0);
    }

    #[test]
    fn rate_barrier_examples() {
        let s = unit_sphere();
        let p = Vec3::new(2.0, 0.0, 0.0);
        assert_relative_eq!(rate_barrier(&p, &Vec3::new(-1.0, 0.0, 0.0), &s, 3.0), 5.0);
        assert_relative_eq!(rate_barrier(&p, &Vec3::zeros(), &s, 3.0), 9.0);
        let surf = Vec3::new(0.0, 1.0, 0.0);
        assert!(rate_barrier(&surf, &Vec3::new(0.0, 0.5, 0.0), &s, 3.0) > 0.0);
    }

    #[test]
    fn minkowski_examples() {
        let a = unit_sphere();
        let b = Ellipsoid::sphere(Vec3::new(3.0, 0.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(minkowski_shape(a.shape(), b.shape()), Mat3::identity() * 4.0, epsilon = 1e-14);
        assert_relative_eq!(minkowski_separation(&a, &b), 1.25, epsilon = 1e-14);
        assert_relative_eq!(minkowski_separation(&a, &a), -1.0);
        let c = Ellipsoid::sphere(Vec3::new(3.0, 0.0, 0.0), 2.0).unwrap();
        assert_relative_eq!(minkowski_shape(a.shape(), c.shape()), Mat3::identity() * 9.0, epsilon = 1e-13);
        assert!(minkowski_separation(&a, &c).abs() < 1e-14);
    }

    #[test]
    fn ground_clearance_examples() {
        use crate::robot_model::BodyShape;
        let m = ManipulatorModel::default();
        let sphere = |r: f64| BodyShape { shape: Mat3::identity() * r * r, offset: Vec3::zeros(), ground_radius: r };
        let set = BodyEllipsoidSet::new(alloc::vec![sphere(0.2), sphere(0.05), sphere(0.05), sphere(0.05)]).unwrap();
        let x = WholeBodyConfig { position: Vec3::new(0.0, 0.0, 0.5), ..Default::default() };
        assert_relative_eq!(ground_clearance(&m, &x, &set, 0.0)[0], 0.3, epsilon = 1e-15);
        let x = WholeBodyConfig::default();
        assert_relative_eq!(ground_clearance(&m, &x, &set, 0.0)[0], -0.2);
        // base pitched 90°: the arm points along +x and link heights equal the base height
        let x = WholeBodyConfig { position: Vec3::new(0.0, 0.0, 1.0), rotation: RotationMatrix::about_y(PI / 2.0), ..Default::default() };
        let fk = m.forward_kinematics(&x);
        let cl = ground_clearance(&m, &x, &set, 0.0);
        for i in 0..3 {
            assert_relative_eq!(cl[i + 1], fk.links[i].position.z - 0.05, epsilon = 1e-14);
            assert_relative_eq!(fk.links[i].position.z, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn inflation_grows_semi_axes() {
        let e = Ellipsoid::from_semi_axes(Vec3::zeros(), Vec3::new(0.6, 0.4, 0.05), &RotationMatrix::about_z(0.3)).unwrap();
        let g = e.inflated(0.1);
        let mut ev: alloc::vec::Vec<f64> = g.shape().symmetric_eigenvalues().iter().map(|l| l.sqrt()).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(ev[0], 0.15, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(ev[2], 0.7, epsilon = 1e-12);
    }

    /// 4096-point Fibonacci lattice on the surface of `e`.
    fn surface_samples(e: &Ellipsoid) -> Vec<Vec3> {
        let l = e.shape().cholesky().unwrap().l();
        let n = 4096;
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = golden * i as f64;
                e.center() + l * Vec3::new(r * phi.cos(), y, r * phi.sin())
            })
            .collect()
    }

    fn random_ellipsoid(rng: &mut ChaCha8Rng) -> Ellipsoid {
        let axes = Vec3::new(rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
        let rot = RotationMatrix::exp(&Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
        let c = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        Ellipsoid::from_semi_axes(c, axes, &rot).unwrap()
    }

    #[test]
    fn minkowski_certificate_is_conservative() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut certified = 0;
        for _ in 0..10_000 {
            let a = random_ellipsoid(&mut rng);
            let b = random_ellipsoid(&mut rng);
            if minkowski_separation(&a, &b) <= 0.0 {
                continue;
            }
            certified += 1;
            assert!(surface_samples(&a).iter().all(|p| !b.contains(p)));
            assert!(surface_samples(&b).iter().all(|p| !a.contains(p)));
        }
        assert!(certified > 1000, "{certified}");
    }

    #[test]
    fn rate_constraint_keeps_barrier_positive() {
        // Drive toward a target through the obstacle while projecting the
        // velocity onto the half-space ∇h·v ≥ −γh (plus slack).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gamma = 3.0;
        let dt = 0.1;
        for _ in 0..200 {
            let obs = random_ellipsoid(&mut rng);
            let mut p =
                obs.center() + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize() * 2.5;
            if point_barrier(&p, &obs).0 <= 0.0 {
                continue;
            }
            let target = obs.center() * 2.0 - p;
            for _ in 0..200 {
                let (h, grad) = point_barrier(&p, &obs);
                assert!(h > 0.0);
                let mut v = (target - p).cap_magnitude(1.0);
                let lhs = grad.dot(&v) + gamma * h;
                if lhs <= 0.0 {
                    v += grad * ((1e-9 - lhs) / grad.norm_squared());
                }
                assert!(rate_barrier(&p, &v, &obs, gamma) > 0.0);
                p += v * dt;
            }
        }
    }

    proptest! {
        #[test]
        fn barrier_gradient_matches_fd(p in proptest::array::uniform3(-3.0f64..3.0), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_ellipsoid(&mut rng);
            let p = Vec3::from(p);
            let (_, g) = point_barrier(&p, &e);
            let h = 1e-6;
            for i in 0..3 {
                let mut dp = Vec3::zeros();
                dp[i] = h;
                let fd = (point_barrier(&(p + dp), &e).0 - point_barrier(&(p - dp), &e).0) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()));
            }
        }
    }
}
