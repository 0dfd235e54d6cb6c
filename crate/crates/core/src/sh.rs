//! Real spherical harmonics up to degree 3 and the radar incidence direction
//! they are evaluated at.
//!
//! The basis is the fully normalized real basis with the Condon–Shortley
//! phase, i.e. the same constants radiance-field renderers use. Coefficients
//! are ordered by `(l, m)` with `index(l, m) = l² + l + m`, so the degree-1
//! block is proportional to `(y, z, x)`.

use crate::se3::Pose;
use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

pub const MAX_DEGREE: usize = 3;
pub const NUM_COEFFS: usize = (MAX_DEGREE + 1) * (MAX_DEGREE + 1);

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 3] = [1.092_548_430_592_079_2, 0.315_391_565_252_520_05, 0.546_274_215_296_039_6];
const C3: [f64; 5] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    1.445_305_721_320_277,
];

/// Directions closer than this to unit length are used as-is.
const UNIT_TOL: f64 = 1e-6;
/// Directions within this of unit length are renormalized, beyond it rejected.
const RENORM_TOL: f64 = 1e-3;
/// Minimum separation between a point and its Gaussian mean, meters.
pub const MIN_OFFSET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ShError {
    #[error("direction has norm {norm}, expected a unit vector")]
    NonUnitDirection { norm: f64 },
    #[error("point coincides with the Gaussian mean; incidence direction undefined")]
    DegenerateDirection,
}

/// Flat index of coefficient `(l, m)`.
pub const fn index(l: usize, m: i32) -> usize {
    ((l * l + l) as i32 + m) as usize
}

/// Number of coefficients in a basis truncated at `degree`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Sixteen real SH values (basis evaluations or coefficients).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShVector(pub [f64; NUM_COEFFS]);

impl Default for ShVector {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ShVector {
    pub fn zeros() -> Self {
        Self([0.0; NUM_COEFFS])
    }

    /// Coefficients of the constant function with the given value.
    pub fn constant(value: f64) -> Self {
        let mut v = Self::zeros();
        v.0[0] = value / C0;
        v
    }

    pub fn get(&self, l: usize, m: i32) -> f64 {
        self.0[index(l, m)]
    }

    pub fn dot(&self, other: &ShVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// Zeroes every coefficient above `degree`.
    pub fn truncated(&self, degree: usize) -> Self {
        let mut out = *self;
        for v in out.0.iter_mut().skip(coeff_count(degree.min(MAX_DEGREE))) {
            *v = 0.0;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

fn checked_unit(dir: &Vector3<f64>) -> Result<Vector3<f64>, ShError> {
    let norm = dir.norm();
    let err = (norm - 1.0).abs();
    if err <= UNIT_TOL {
        Ok(*dir)
    } else if err <= RENORM_TOL {
        Ok(dir / norm)
    } else {
        Err(ShError::NonUnitDirection { norm })
    }
}

/// Basis values at `d`, which the caller guarantees to be unit length.
pub fn basis(d: &Vector3<f64>) -> ShVector {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    ShVector([
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        -C2[0] * y * z,
        C2[1] * (2.0 * zz - xx - yy),
        -C2[0] * x * z,
        C2[2] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * x * y * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[2] * x * (4.0 * zz - xx - yy),
        C3[4] * z * (xx - yy),
        C3[0] * x * (xx - 3.0 * yy),
    ])
}

/// Evaluates all 16 basis functions. Directions slightly off the unit sphere
/// are renormalized; clearly non-unit input is rejected.
pub fn eval_sh_basis(dir: &Vector3<f64>) -> Result<ShVector, ShError> {
    Ok(basis(&checked_unit(dir)?))
}

/// Ambient gradients of the basis polynomials, one row per coefficient.
fn polynomial_gradient(d: &Vector3<f64>) -> SMatrix<f64, NUM_COEFFS, 3> {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let rows: [[f64; 3]; NUM_COEFFS] = [
        [0.0, 0.0, 0.0],
        [0.0, -C1, 0.0],
        [0.0, 0.0, C1],
        [-C1, 0.0, 0.0],
        [C2[0] * y, C2[0] * x, 0.0],
        [0.0, -C2[0] * z, -C2[0] * y],
        [-2.0 * C2[1] * x, -2.0 * C2[1] * y, 4.0 * C2[1] * z],
        [-C2[0] * z, 0.0, -C2[0] * x],
        [2.0 * C2[2] * x, -2.0 * C2[2] * y, 0.0],
        [C3[0] * 6.0 * x * y, C3[0] * 3.0 * (xx - yy), 0.0],
        [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y],
        [-2.0 * C3[2] * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * C3[2] * y * z],
        [-6.0 * C3[3] * x * z, -6.0 * C3[3] * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
        [C3[2] * (4.0 * zz - 3.0 * xx - yy), -2.0 * C3[2] * x * y, 8.0 * C3[2] * x * z],
        [2.0 * C3[4] * x * z, -2.0 * C3[4] * y * z, C3[4] * (xx - yy)],
        [C3[0] * 3.0 * (xx - yy), -6.0 * C3[0] * x * y, 0.0],
    ];
    SMatrix::from_fn(|i, j| rows[i][j])
}

/// Gradient of each basis function with respect to an unnormalized direction
/// vector `v`, evaluated at `v = dir` with `|dir| = 1`. Row `i` is
/// `∇bᵢ(d)ᵀ (I − d·dᵀ)`; for `|v| ≠ 1` divide by `|v|`.
pub fn sh_basis_gradient(dir: &Vector3<f64>) -> Result<SMatrix<f64, NUM_COEFFS, 3>, ShError> {
    let d = checked_unit(dir)?;
    Ok(basis_gradient(&d))
}

pub fn basis_gradient(d: &Vector3<f64>) -> SMatrix<f64, NUM_COEFFS, 3> {
    let proj = Matrix3::identity() - d * d.transpose();
    polynomial_gradient(d) * proj
}

/// Normalized incidence vector in the sensor frame, folded onto the `x ≤ 0`
/// hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidenceDirection {
    pub dir: Vector3<f64>,
    /// True when the raw vector had `x > 0` and was negated.
    pub flipped: bool,
}

impl IncidenceDirection {
    /// From a point-minus-mean offset already expressed in the sensor frame.
    pub fn from_sensor_offset(offset: &Vector3<f64>) -> Result<Self, ShError> {
        let n = offset.norm();
        if !(n > MIN_OFFSET) {
            return Err(ShError::DegenerateDirection);
        }
        let d = offset / n;
        Ok(if d.x > 0.0 { Self { dir: -d, flipped: true } } else { Self { dir: d, flipped: false } })
    }

    /// As [`Self::from_sensor_offset`] but with the flip decided by the
    /// caller, for linearizations that hold it fixed.
    pub fn with_flip(offset: &Vector3<f64>, flipped: bool) -> Result<Self, ShError> {
        let n = offset.norm();
        if !(n > MIN_OFFSET) {
            return Err(ShError::DegenerateDirection);
        }
        let d = offset / n;
        Ok(Self { dir: if flipped { -d } else { d }, flipped })
    }
}

/// Incidence direction of a world point relative to its Gaussian mean, seen
/// from a sensor at `sensor_pose` (world ← sensor).
pub fn incidence_direction(
    point_world: &Vector3<f64>,
    gaussian_mean_world: &Vector3<f64>,
    sensor_pose: &Pose,
) -> Result<IncidenceDirection, ShError> {
    let offset = sensor_pose.rotation().inverse_transform_vector(&(point_world - gaussian_mean_world));
    IncidenceDirection::from_sensor_offset(&offset)
}

/// Normalized RCS predicted by `coeffs` along `dir`.
pub fn predict_rcs(coeffs: &ShVector, dir: &IncidenceDirection) -> f64 {
    coeffs.dot(&basis(&dir.dir))
}
