//! Rotation-group primitives: hat/vee, exponential and logarithm maps,
//! attitude error functions and the geodesic metric.

use core::ops::Mul;

#[allow(unused_imports)]
use nalgebra::{ComplexField, RealField};
use nalgebra::{Matrix3, Vector3};

use crate::error::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Frobenius-norm tolerance on `RᵀR − I` accepted by [`RotationMatrix`].
pub const ORTHONORMALITY_TOL: f64 = 1e-9;
/// Below this angle `exp_so3` switches to its second-order Taylor form.
pub const EXP_SMALL_ANGLE: f64 = 1e-8;

/// A 3×3 orthonormal matrix with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates orthonormality and orientation.
    pub fn new(m: Mat3) -> Result<Self, GeometryError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let err = orthonormality_error(&m);
        let det = m.determinant();
        if err > ORTHONORMALITY_TOL || (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::NotARotation { orthonormality: err, determinant: det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix already known to be a rotation. Callers that produce
    /// matrices by composing rotations should prefer this plus [`Self::renormalized`].
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Projects an arbitrary nonsingular matrix onto SO(3) (polar factor).
    pub fn project(m: &Mat3) -> Result<Self, GeometryError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self(polar_rotation(m)))
    }

    pub fn exp(v: &Vec3) -> Self {
        Self(exp_so3(v))
    }

    pub fn about_x(angle: f64) -> Self {
        Self::exp(&Vec3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation vector `φ` with `exp(φ^) = self`, `‖φ‖ ∈ [0, π]`.
    pub fn log(&self) -> Vec3 {
        log_so3(&self.0)
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }

    /// Returns the polar projection when drift exceeds [`ORTHONORMALITY_TOL`].
    pub fn renormalized(self) -> Self {
        if orthonormality_error(&self.0) > ORTHONORMALITY_TOL {
            Self(polar_rotation(&self.0))
        } else {
            self
        }
    }

    /// Right-multiplies by `exp((dt·ω)^)` and reprojects if needed.
    pub fn integrate_body_rate(&self, increment: &Vec3) -> Self {
        Self(self.0 * exp_so3(increment)).renormalized()
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Mul<&RotationMatrix> for &RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for RotationMatrix {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &RotationMatrix {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; rejects matrices whose symmetric part exceeds 1e-9.
pub fn vee(s: &Mat3) -> Result<Vec3, GeometryError> {
    let asym = (s + s.transpose()).norm();
    if asym > 1e-9 {
        return Err(GeometryError::NonSkewInput(asym));
    }
    Ok(vee_unchecked(s))
}

/// Reads the axial vector of the skew part without validation.
pub fn vee_unchecked(s: &Mat3) -> Vec3 {
    Vec3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

pub fn exp_so3(v: &Vec3) -> Mat3 {
    let theta = v.norm();
    let k = hat(v);
    let k2 = k * k;
    if theta <= EXP_SMALL_ANGLE {
        return Mat3::identity() + k + k2 * 0.5;
    }
    let a = theta.sin() / theta;
    let half = (0.5 * theta).sin();
    let b = 2.0 * half * half / (theta * theta);
    Mat3::identity() + k * a + k2 * b
}

pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axial = vee_unchecked(&(r - r.transpose())) * 0.5;
    // atan2 stays well conditioned near 0 and π where acos does not
    let angle = axial.norm().atan2(cos);
    if angle < 1e-6 {
        // sin θ/θ ≈ 1 − θ²/6
        return axial * (1.0 + angle * angle / 6.0);
    }
    if core::f64::consts::PI - angle > 1e-4 {
        return axial * (angle / angle.sin());
    }
    // Near π the skew part vanishes; recover aaᵀ from the symmetric part.
    let sym = (r + r.transpose()) * 0.5;
    let m = (sym - Mat3::identity() * cos) / (1.0 - cos);
    let mut best = 0;
    for i in 1..3 {
        if m[(i, i)] > m[(best, best)] {
            best = i;
        }
    }
    let mut axis: Vec3 = m.column(best).into();
    axis /= axis.norm();
    // Resolve sign from the (small) skew part when available.
    if axis.dot(&axial) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Right Jacobian of SO(3): `exp((φ+δ)^) ≈ exp(φ^) exp((J_r(φ) δ)^)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < 1e-5 {
        return Mat3::identity() - k * 0.5 + k * k / 6.0;
    }
    let t2 = theta * theta;
    Mat3::identity() - k * ((1.0 - theta.cos()) / t2) + k * k * ((theta - theta.sin()) / (t2 * theta))
}

/// Returns `(e_R, Ψ)` with `e_R = ½(RᵀR_d − R_dᵀR)^∨` and `Ψ = ½ tr(I − RᵀR_d)`.
pub fn attitude_error(r: &RotationMatrix, r_d: &RotationMatrix) -> (Vec3, f64) {
    let q = r.0.transpose() * r_d.0;
    let e = vee_unchecked(&(q - q.transpose())) * 0.5;
    let psi = 0.5 * (3.0 - q.trace());
    (e, psi)
}

pub fn geodesic_distance(r: &RotationMatrix, r_d: &RotationMatrix) -> f64 {
    let tr = (r.0.transpose() * r_d.0).trace();
    ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// `C = ½[tr(RᵀR_d) I − RᵀR_d]`, the map with `ė_R = C e_ω`.
pub fn error_c_matrix(r: &RotationMatrix, r_d: &RotationMatrix) -> Mat3 {
    let q = r.0.transpose() * r_d.0;
    (Mat3::identity() * q.trace() - q) * 0.5
}

pub fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

fn polar_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Mat3::identity(),
    };
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}
