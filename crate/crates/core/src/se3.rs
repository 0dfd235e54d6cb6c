//! Rigid transforms in 3D: SE(3) poses, se(3) twists and the exp/log maps
//! between them.
//!
//! Rotations are stored as unit quaternions with a non-negative scalar part so
//! that every rotation has exactly one representation. Rotation matrices are
//! computed on demand.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use std::fmt;
use thiserror::Error;

/// Below this rotation angle the exp/log maps switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotation angles closer than this to π have no unique logarithm.
pub const LOG_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum Se3Error {
    #[error("rotation angle {angle} is within {LOG_PI_MARGIN} of pi; logarithm is not unique")]
    DegenerateLog { angle: f64 },
}

/// Tangent vector of SE(3): `rho` is the translational part, `phi` the
/// rotation vector (axis times angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Stacked as `[rho, phi]`, the ordering used by the normal equations.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }
}

/// Rigid transform `x ↦ R·x + t`. For sensor poses this maps sensor
/// coordinates into the world frame.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose {{ q: [w: {}, x: {}, y: {}, z: {}], t: [{}, {}, {}] }}",
            q.w, q.i, q.j, q.k, self.translation.x, self.translation.y, self.translation.z
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let q = if q.w < 0.0 { -q } else { q };
    UnitQuaternion::new_normalize(q)
}

/// Skew-symmetric cross-product matrix, `hat(a) * b == a × b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose from any non-zero quaternion; it is normalized and
    /// brought to the `w >= 0` hemisphere.
    pub fn new(rotation: Quaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: canonical(rotation), translation }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(rotation.into_inner(), translation)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `R·x + t`
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `Rᵀ·(x − t)`
    pub fn inverse_transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(x - self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: canonical((self.rotation * other.rotation).into_inner()),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose { rotation: canonical(inv.into_inner()), translation: -(inv * self.translation) }
    }

    /// SE(3) exponential. The rotation follows Rodrigues' formula and the
    /// translation is the left Jacobian of `phi` applied to `rho`.
    pub fn exp(xi: &Twist) -> Pose {
        let theta = xi.phi.norm();
        let half = 0.5 * theta;
        let (w, s) = if theta < SMALL_ANGLE {
            (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0)
        } else {
            (half.cos(), half.sin() / theta)
        };
        let q = Quaternion::new(w, s * xi.phi.x, s * xi.phi.y, s * xi.phi.z);
        let translation = left_jacobian(&xi.phi) * xi.rho;
        Pose { rotation: canonical(q), translation }
    }

    /// SE(3) logarithm, the inverse of [`Pose::exp`] for rotation angles
    /// below π.
    pub fn log(&self) -> Result<Twist, Se3Error> {
        let q = self.rotation.quaternion();
        let v = q.imag();
        let vn = v.norm();
        let theta = 2.0 * vn.atan2(q.w);
        if std::f64::consts::PI - theta < LOG_PI_MARGIN {
            return Err(Se3Error::DegenerateLog { angle: theta });
        }
        let phi = if theta < SMALL_ANGLE {
            // theta/|v| = 2/w · (1 + |v|²/(3w²) + …)
            v * (2.0 / q.w) * (1.0 - vn * vn / (3.0 * q.w * q.w))
        } else {
            v * (theta / vn)
        };
        let rho = left_jacobian_inverse(&phi) * self.translation;
        Ok(Twist::new(rho, phi))
    }

    /// Geodesic rotation angle of this pose, radians in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Left Jacobian of SO(3), `V(φ)` in `t = V(φ)·ρ`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        Matrix3::identity() + 0.5 * k + k2 / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k2
    }
}

pub fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        Matrix3::identity() - 0.5 * k + k2 / 12.0
    } else {
        let t2 = theta * theta;
        let c = (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / t2;
        Matrix3::identity() - 0.5 * k + c * k2
    }
}

/// Absolute pose error: Euclidean translation distance (m) and geodesic
/// angle of `R_truthᵀ·R_est` (degrees).
pub fn pose_error(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let dt = (estimate.translation - truth.translation).norm();
    if estimate.rotation == truth.rotation {
        return (dt, 0.0);
    }
    let rel = truth.rotation.inverse() * estimate.rotation;
    let q = rel.quaternion();
    let angle = 2.0 * q.imag().norm().atan2(q.w.abs());
    (dt, angle.to_degrees())
}
