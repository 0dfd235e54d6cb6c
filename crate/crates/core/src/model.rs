//! Gaussian-RCS scene model: voxel Gaussians over a merged radar cloud, each
//! carrying an RCS median/scale normalization and SH coefficients that
//! predict the normalized RCS from the incidence direction.

use crate::scan::Scan;
use crate::se3::Pose;
use crate::sh::{self, IncidenceDirection, ShVector, MAX_DEGREE, NUM_COEFFS};
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Absolute variance floor (m²) so that clusters of identical points still
/// produce an invertible covariance.
pub const MIN_VARIANCE: f64 = 1e-6;
/// Ridge added to the SH normal equations.
pub const SH_RIDGE: f64 = 1e-8;
/// Iterated Tikhonov rounds after the ridge solve.
pub const SH_REFINEMENT_STEPS: usize = 3;
/// RCS spreads (dBsm) below this count as degenerate.
pub const MIN_RCS_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{scans} scans but {poses} poses")]
    LengthMismatch { scans: usize, poses: usize },
    #[error("need at least {required} points, got {got}")]
    TooFewPoints { got: usize, required: usize },
    #[error("SH fit has no samples")]
    NoSamples,
    #[error("SH normal equations are singular")]
    SingularFit,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("no voxel reached the minimum point count; model is empty")]
    EmptyModel,
    #[error("model text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Voxel edge length, meters.
    pub voxel_size: f64,
    pub min_points_per_gaussian: usize,
    pub max_degree: usize,
    /// Smallest allowed covariance eigenvalue relative to the largest.
    pub eigen_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { voxel_size: 1.0, min_points_per_gaussian: 10, max_degree: 3, eigen_floor: 1e-3 }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(ModelError::InvalidConfig("voxel_size must be positive"));
        }
        if self.max_degree > MAX_DEGREE {
            return Err(ModelError::InvalidConfig("max_degree must be at most 3"));
        }
        if !(0.0..1.0).contains(&self.eigen_floor) {
            return Err(ModelError::InvalidConfig("eigen_floor must be in [0, 1)"));
        }
        if self.min_points_per_gaussian < 2 {
            return Err(ModelError::InvalidConfig("min_points_per_gaussian must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    /// World frame, meters.
    pub mean: Vector3<f64>,
    /// m², symmetric positive definite.
    pub covariance: Matrix3<f64>,
    pub point_count: usize,
    /// dBsm
    pub rcs_median: f64,
    /// dBsm, > 0
    pub rcs_scale: f64,
    pub sh_coeffs: ShVector,
    pub fitted_degree: usize,
    information: Matrix3<f64>,
}

impl Gaussian {
    pub fn new(
        mean: Vector3<f64>,
        covariance: Matrix3<f64>,
        point_count: usize,
        rcs_median: f64,
        rcs_scale: f64,
        sh_coeffs: ShVector,
        fitted_degree: usize,
    ) -> Self {
        let information = covariance
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| covariance.pseudo_inverse(1e-15).unwrap_or(Matrix3::zeros()));
        Self { mean, covariance, point_count, rcs_median, rcs_scale, sh_coeffs, fitted_degree, information }
    }

    /// Inverse covariance.
    pub fn information(&self) -> &Matrix3<f64> {
        &self.information
    }

    /// Maps a raw RCS (dBsm) into this Gaussian's normalized units.
    pub fn normalize_rcs(&self, rcs: f64) -> f64 {
        (rcs - self.rcs_median) / self.rcs_scale
    }

    pub fn predict(&self, dir: &IncidenceDirection) -> f64 {
        sh::predict_rcs(&self.sh_coeffs, dir)
    }
}

pub type CellKey = [i64; 3];

pub fn cell_of(p: &Vector3<f64>, voxel_size: f64) -> CellKey {
    [(p.x / voxel_size).floor() as i64, (p.y / voxel_size).floor() as i64, (p.z / voxel_size).floor() as i64]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    gaussians: Vec<Gaussian>,
    voxel_size: f64,
    index: HashMap<CellKey, Vec<usize>>,
}

impl GaussianModel {
    pub fn new(gaussians: Vec<Gaussian>, voxel_size: f64) -> Self {
        let mut index: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, g) in gaussians.iter().enumerate() {
            index.entry(cell_of(&g.mean, voxel_size)).or_default().push(i);
        }
        Self { gaussians, voxel_size, index }
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Gaussian indices whose mean falls in `cell`.
    pub fn cell(&self, cell: &CellKey) -> &[usize] {
        self.index.get(cell).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Index of the Gaussian whose mean is nearest to `p` and no farther than
    /// `radius`. Ties go to the lowest index.
    pub fn nearest(&self, p: &Vector3<f64>, radius: f64) -> Option<usize> {
        let reach = (radius / self.voxel_size).ceil().max(1.0) as i64;
        let c = cell_of(p, self.voxel_size);
        let r2 = radius * radius;
        let mut best: Option<(f64, usize)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    for &i in self.cell(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        let d2 = (self.gaussians[i].mean - p).norm_squared();
                        if d2 > r2 {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bd, bi)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Line-oriented text form: a `gaussmodel v1 voxel=<f>` header then one
    /// line per Gaussian with mean, upper covariance, count, median, scale,
    /// degree and the 16 coefficients.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "gaussmodel v1 voxel={}", fmt_f64(self.voxel_size)).unwrap();
        for g in &self.gaussians {
            let c = &g.covariance;
            let mut fields: Vec<String> = Vec::with_capacity(29);
            fields.extend(g.mean.iter().map(|v| fmt_f64(*v)));
            for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
                fields.push(fmt_f64(c[(i, j)]));
            }
            fields.push(g.point_count.to_string());
            fields.push(fmt_f64(g.rcs_median));
            fields.push(fmt_f64(g.rcs_scale));
            fields.push(g.fitted_degree.to_string());
            fields.extend(g.sh_coeffs.0.iter().map(|v| fmt_f64(*v)));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let err = |line: usize, msg: &str| ModelError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let voxel = header
            .strip_prefix("gaussmodel v1 voxel=")
            .ok_or_else(|| err(1, "expected `gaussmodel v1 voxel=<f>` header"))?
            .trim()
            .parse::<f64>()
            .map_err(|e| err(1, &e.to_string()))?;
        if !(voxel > 0.0) {
            return Err(err(1, "voxel size must be positive"));
        }
        let mut gaussians = Vec::new();
        for (no, line) in lines {
            let no = no + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 13 + NUM_COEFFS {
                return Err(err(no, &format!("expected {} fields, got {}", 13 + NUM_COEFFS, f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| err(no, &format!("field {}: {e}", i + 1)));
            let int = |i: usize| f[i].parse::<usize>().map_err(|e| err(no, &format!("field {}: {e}", i + 1)));
            let mean = Vector3::new(num(0)?, num(1)?, num(2)?);
            let (xx, xy, xz, yy, yz, zz) = (num(3)?, num(4)?, num(5)?, num(6)?, num(7)?, num(8)?);
            let cov = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
            let count = int(9)?;
            let median = num(10)?;
            let scale = num(11)?;
            let degree = int(12)?;
            if degree > MAX_DEGREE {
                return Err(err(no, "degree above 3"));
            }
            let mut coeffs = [0.0; NUM_COEFFS];
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c = num(13 + k)?;
            }
            gaussians.push(Gaussian::new(mean, cov, count, median, scale, ShVector(coeffs), degree));
        }
        Ok(Self::new(gaussians, voxel))
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A merged world-frame return that remembers which sensor pose saw it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedPoint {
    pub position: Vector3<f64>,
    pub rcs: f64,
    pub pose_index: usize,
}

pub fn merge_scans(scans: &[Scan], poses: &[Pose]) -> Result<Vec<MergedPoint>, ModelError> {
    if scans.len() != poses.len() {
        return Err(ModelError::LengthMismatch { scans: scans.len(), poses: poses.len() });
    }
    Ok(scans
        .iter()
        .zip(poses)
        .enumerate()
        .flat_map(|(k, (scan, pose))| {
            scan.points.iter().map(move |p| MergedPoint {
                position: pose.transform_point(&p.position),
                rcs: p.rcs,
                pose_index: k,
            })
        })
        .collect())
}

/// Groups point indices by voxel, `floor(coordinate / voxel_size)` per axis.
/// Cells iterate in ascending coordinate order.
pub fn voxel_partition(points: &[Vector3<f64>], voxel_size: f64) -> BTreeMap<CellKey, Vec<usize>> {
    let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(cell_of(p, voxel_size)).or_default().push(i);
    }
    cells
}

/// Sample mean and covariance (divisor N−1) with eigenvalues floored at
/// `eigen_floor · λ_max` (and at [`MIN_VARIANCE`]).
pub fn fit_gaussian(points: &[Vector3<f64>], eigen_floor: f64) -> Result<(Vector3<f64>, Matrix3<f64>), ModelError> {
    let n = points.len();
    if n < 2 {
        return Err(ModelError::TooFewPoints { got: n, required: 2 });
    }
    let mean = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;
    Ok((mean, floor_eigenvalues(&cov, eigen_floor)))
}

fn floor_eigenvalues(cov: &Matrix3<f64>, eigen_floor: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let max = eig.eigenvalues.max();
    let floor = (eigen_floor * max).max(MIN_VARIANCE);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let v = eig.eigenvectors;
    let out = v * Matrix3::from_diagonal(&vals) * v.transpose();
    (out + out.transpose()) * 0.5
}

/// Median/scale normalization of one Gaussian's raw RCS values.
#[derive(Debug, Clone, PartialEq)]
pub struct RcsStats {
    pub median: f64,
    pub scale: f64,
    /// Aligned with the input.
    pub inlier_mask: Vec<bool>,
    /// Normalized inlier values, in input order.
    pub normalized: Vec<f64>,
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median of a non-empty slice; even counts average the two central values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_of_sorted(&v)
}

/// Median `m`, scale `s = min(|m − min|, |m − max|)`; values outside
/// `[m − s, m + s]` are outliers and the rest map to `(v − m) / s`.
///
/// A scale below [`MIN_RCS_SCALE`] is replaced by 1 for the division while
/// the interval keeps its degenerate width, so only values equal to the
/// median survive.
pub fn rcs_statistics(raw: &[f64]) -> RcsStats {
    assert!(!raw.is_empty(), "rcs_statistics needs at least one value");
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = median_of_sorted(&sorted);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let spread = (m - lo).abs().min((hi - m).abs());
    let (half_width, scale) = if spread < MIN_RCS_SCALE { (MIN_RCS_SCALE, 1.0) } else { (spread, spread) };
    let inlier_mask: Vec<bool> = raw.iter().map(|v| (v - m).abs() <= half_width).collect();
    let normalized =
        raw.iter().zip(&inlier_mask).filter(|(_, k)| **k).map(|(v, _)| ((v - m) / scale).clamp(-1.0, 1.0)).collect();
    RcsStats { median: m, scale, inlier_mask, normalized }
}

/// Highest degree `d ≤ max_degree` with `(d+1)² ≤ max(1, n/2)`.
pub fn sh_degree_for(n: usize, max_degree: usize) -> usize {
    let budget = (n as f64 / 2.0).max(1.0);
    (0..=max_degree.min(MAX_DEGREE)).rev().find(|d| ((d + 1) * (d + 1)) as f64 <= budget).unwrap_or(0)
}

/// Ridge least-squares SH fit, `(AᵀA + λI) c = Aᵀy` with rows of `A` being
/// basis values truncated to the chosen degree.
///
/// The ridge solve is followed by [`SH_REFINEMENT_STEPS`] rounds of iterated
/// Tikhonov refinement, which strip the ridge bias from well-determined
/// directions while leaving unobserved directions at zero. On the `x ≤ 0`
/// hemisphere the degree-3 Gram matrix has a smallest eigenvalue near
/// `3e-5 · n`, so a single ridge solve would bias coefficients by ~1e-6.
pub fn fit_sh_coefficients(
    dirs: &[IncidenceDirection],
    values: &[f64],
    max_degree: usize,
) -> Result<(ShVector, usize), ModelError> {
    assert_eq!(dirs.len(), values.len(), "directions and values must align");
    let n = dirs.len();
    if n == 0 {
        return Err(ModelError::NoSamples);
    }
    let degree = sh_degree_for(n, max_degree);
    let k = sh::coeff_count(degree);
    let mut normal = DMatrix::<f64>::identity(k, k) * SH_RIDGE;
    let mut rhs = DVector::<f64>::zeros(k);
    for (d, y) in dirs.iter().zip(values) {
        let b = sh::basis(&d.dir);
        for i in 0..k {
            rhs[i] += b.0[i] * y;
            for j in 0..k {
                normal[(i, j)] += b.0[i] * b.0[j];
            }
        }
    }
    let chol = normal.clone().cholesky().ok_or(ModelError::SingularFit)?;
    let mut sol = chol.solve(&rhs);
    for _ in 0..SH_REFINEMENT_STEPS {
        // residual of the unregularized normal equations
        let r = &rhs - (&normal * &sol - &sol * SH_RIDGE);
        sol += chol.solve(&r);
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(ModelError::SingularFit);
    }
    let mut coeffs = ShVector::zeros();
    coeffs.0[..k].copy_from_slice(sol.as_slice());
    Ok((coeffs, degree))
}

/// The built model together with the RCS normalization of every Gaussian.
#[derive(Debug, Clone)]
pub struct BuildReport {
    pub model: GaussianModel,
    pub rcs_stats: Vec<RcsStats>,
}

fn build_cell(
    members: &[usize],
    merged: &[MergedPoint],
    poses: &[Pose],
    config: &ModelConfig,
) -> Option<(Gaussian, RcsStats)> {
    if members.len() < config.min_points_per_gaussian {
        return None;
    }
    let positions: Vec<_> = members.iter().map(|&i| merged[i].position).collect();
    let (mean, cov) = fit_gaussian(&positions, config.eigen_floor).ok()?;
    let raw: Vec<_> = members.iter().map(|&i| merged[i].rcs).collect();
    let stats = rcs_statistics(&raw);

    let mut dirs = Vec::new();
    let mut values = Vec::new();
    let inliers = members.iter().zip(&stats.inlier_mask).filter(|(_, k)| **k);
    for ((&i, _), y) in inliers.zip(&stats.normalized) {
        let p = &merged[i];
        if let Ok(d) = sh::incidence_direction(&p.position, &mean, &poses[p.pose_index]) {
            dirs.push(d);
            values.push(*y);
        }
    }
    let (coeffs, degree) = if dirs.is_empty() {
        (ShVector::zeros(), 0)
    } else {
        fit_sh_coefficients(&dirs, &values, config.max_degree).ok()?
    };
    let g = Gaussian::new(mean, cov, members.len(), stats.median, stats.scale, coeffs, degree);
    Some((g, stats))
}

/// Merges scans under their poses, fits one Gaussian per sufficiently
/// populated voxel and attaches the SH RCS model. Output is sorted by cell.
pub fn build_model_report(scans: &[Scan], poses: &[Pose], config: &ModelConfig) -> Result<BuildReport, ModelError> {
    config.validate()?;
    let merged = merge_scans(scans, poses)?;
    let positions: Vec<_> = merged.iter().map(|p| p.position).collect();
    let cells: Vec<Vec<usize>> = voxel_partition(&positions, config.voxel_size).into_values().collect();

    #[cfg(feature = "parallel")]
    let fitted: Vec<_> = {
        use rayon::prelude::*;
        cells.par_iter().map(|m| build_cell(m, &merged, poses, config)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fitted: Vec<_> = cells.iter().map(|m| build_cell(m, &merged, poses, config)).collect();

    let (gaussians, rcs_stats): (Vec<_>, Vec<_>) = fitted.into_iter().flatten().unzip();
    if gaussians.is_empty() {
        return Err(ModelError::EmptyModel);
    }
    Ok(BuildReport { model: GaussianModel::new(gaussians, config.voxel_size), rcs_stats })
}

pub fn build_model(scans: &[Scan], poses: &[Pose], config: &ModelConfig) -> Result<GaussianModel, ModelError> {
    build_model_report(scans, poses, config).map(|r| r.model)
}
