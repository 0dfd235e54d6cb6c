//! Scan-to-model registration with a combined geometric and RCS cost.
//!
//! The geometric term is the point-to-Gaussian squared Mahalanobis distance.
//! The RCS term compares the measured (normalized) RCS of each return with
//! the prediction of its Gaussian's SH model along the current incidence
//! direction, robustified with a Cauchy loss. Both are scaled by their
//! contributor counts and mixed with `w_rcs`:
//!
//! ```text
//! f = (1 − w_rcs)/N_geo · f_geo + w_rcs/N_rcs · f_rcs
//! ```
//!
//! The RCS term only drives rotation: its translation rows and columns of
//! the Hessian are replaced by the identity and its translation gradient is
//! zeroed. Steps come from Levenberg–Marquardt damped Gauss–Newton,
//! `(H + λ·diag(H)) δ = −g`, and are applied on the right, `T ← T ∘ exp(δ)`,
//! so a step with zero translational part leaves the sensor position
//! untouched.

use crate::model::{Gaussian, GaussianModel};
use crate::scan::{RadarPoint, Scan};
use crate::se3::{hat, Pose, Twist};
use crate::sh::{self, IncidenceDirection, NUM_COEFFS};
use nalgebra::{Matrix3x6, Matrix6, RowVector3, SMatrix, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MatchError {
    #[error("no scan point has a model Gaussian within the association radius")]
    NoCorrespondences,
    #[error("damped normal equations stayed singular up to the maximum damping")]
    SolverFailed,
    #[error("invalid match parameters: {0}")]
    InvalidParams(&'static str),
}

/// Where the identity is imposed on the translation block of the RCS
/// Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TranslationForcing {
    /// Force after dividing by `N_rcs`, so the translation diagonal of the
    /// combined system receives exactly `w_rcs`.
    #[default]
    AfterNormalization,
    /// Force on the raw sum, so the translation diagonal receives
    /// `w_rcs / N_rcs`.
    BeforeNormalization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub w_rcs: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the step norm.
    pub convergence_eps: f64,
    /// Cauchy scale for RCS residuals, in normalized RCS units.
    pub cauchy_c: f64,
    /// Meters.
    pub association_radius: f64,
    pub lm_lambda_init: f64,
    pub lm_lambda_max: f64,
    /// Cauchy scale applied to the geometric Mahalanobis distance; `None`
    /// keeps the geometric cost quadratic.
    pub geometric_cauchy_c: Option<f64>,
    pub forcing: TranslationForcing,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            w_rcs: 0.0,
            max_iterations: 50,
            convergence_eps: 1e-6,
            cauchy_c: 1.0,
            association_radius: 2.0,
            lm_lambda_init: 1e-4,
            lm_lambda_max: 1e4,
            geometric_cauchy_c: None,
            forcing: TranslationForcing::AfterNormalization,
        }
    }
}

impl MatchParams {
    /// Defaults with the association radius set to twice the model voxel.
    pub fn for_model(model: &GaussianModel) -> Self {
        Self { association_radius: 2.0 * model.voxel_size(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if !(0.0..=1.0).contains(&self.w_rcs) {
            return Err(MatchError::InvalidParams("w_rcs must be in [0, 1]"));
        }
        let positive =
            [self.convergence_eps, self.cauchy_c, self.association_radius, self.lm_lambda_init, self.lm_lambda_max];
        if positive.iter().any(|v| !(*v > 0.0)) || self.geometric_cauchy_c.is_some_and(|c| !(c > 0.0)) {
            return Err(MatchError::InvalidParams("scales, radius and damping must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(MatchError::InvalidParams("max_iterations must be positive"));
        }
        Ok(())
    }
}

/// Accumulated Gauss–Newton system, ordered `[translation, rotation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub h: Matrix6<f64>,
    pub g: Vector6<f64>,
    pub cost: f64,
    pub n_geo: usize,
    pub n_rcs: usize,
    /// Sum of squared Mahalanobis distances.
    pub geo_sq_sum: f64,
    /// Sum of squared RCS residuals.
    pub rcs_sq_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    pub final_cost: f64,
    /// RMS Mahalanobis distance at the final pose.
    pub geo_rms: f64,
    /// RMS RCS residual at the final pose, normalized units.
    pub rcs_rms: f64,
}

/// One pass through the optimization loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pose: Pose,
    pub cost: f64,
    pub lambda: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

/// Per-point contribution to a least-squares system.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    /// Squared residual before the robust loss (Mahalanobis² or RCS²).
    pub r_sq: f64,
    /// Robustified cost, `½·ρ(r_sq)`.
    pub cost: f64,
    /// Gradient of `cost` with respect to the twist.
    pub gradient: Vector6<f64>,
    /// Gauss–Newton Hessian approximation.
    pub hessian: Matrix6<f64>,
}

/// Cauchy loss `c²·ln(1 + s/c²)` for squared residual `s`, with its IRLS
/// weight `1/(1 + s/c²)`.
pub fn cauchy(s: f64, c: f64) -> (f64, f64) {
    let c2 = c * c;
    (c2 * (s / c2).ln_1p(), 1.0 / (1.0 + s / c2))
}

/// Nearest Gaussian mean within `radius` of a world point.
pub fn associate(point_world: &Vector3<f64>, model: &GaussianModel, radius: f64) -> Option<usize> {
    model.nearest(point_world, radius)
}

/// Jacobian of the world point `T·exp(δ)·p` with respect to `δ` at zero.
pub fn point_jacobian(position: &Vector3<f64>, pose: &Pose) -> Matrix3x6<f64> {
    let r = pose.rotation_matrix();
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * hat(position)));
    j
}

/// Mahalanobis residual of one return against its associated Gaussian.
pub fn geometric_residual(point: &RadarPoint, gaussian: &Gaussian, pose: &Pose, cauchy_c: Option<f64>) -> Contribution {
    let e = pose.transform_point(&point.position) - gaussian.mean;
    let info = gaussian.information();
    let info_e = info * e;
    let r_sq = e.dot(&info_e);
    let (rho, w) = match cauchy_c {
        Some(c) => cauchy(r_sq, c),
        None => (r_sq, 1.0),
    };
    let j = point_jacobian(&point.position, pose);
    Contribution { r_sq, cost: 0.5 * rho, gradient: w * j.transpose() * info_e, hessian: w * j.transpose() * info * j }
}

/// Offset of a return from a Gaussian mean, in the sensor frame.
fn sensor_offset(point: &RadarPoint, gaussian: &Gaussian, pose: &Pose) -> Vector3<f64> {
    point.position - pose.inverse_transform_point(&gaussian.mean)
}

/// Signed RCS prediction error of one return. `flip` fixes the hemisphere
/// fold; `None` applies the usual `x > 0` rule. Returns `None` for RCS
/// outliers and degenerate directions.
pub fn rcs_prediction_error(
    point: &RadarPoint,
    gaussian: &Gaussian,
    pose: &Pose,
    flip: Option<bool>,
) -> Option<(f64, IncidenceDirection)> {
    let y = gaussian.normalize_rcs(point.rcs);
    if !(y.abs() <= 1.0) {
        return None;
    }
    let offset = sensor_offset(point, gaussian, pose);
    let dir = match flip {
        Some(f) => IncidenceDirection::with_flip(&offset, f),
        None => IncidenceDirection::from_sensor_offset(&offset),
    }
    .ok()?;
    Some((gaussian.predict(&dir) - y, dir))
}

/// Gradient of the RCS prediction error with respect to the twist, before
/// any forcing: `[∂r/∂ρ, ∂r/∂φ]`.
pub fn rcs_jacobian(point: &RadarPoint, gaussian: &Gaussian, pose: &Pose, dir: &IncidenceDirection) -> Vector6<f64> {
    let offset = sensor_offset(point, gaussian, pose);
    let sign = if dir.flipped { -1.0 } else { 1.0 };
    // ∂r/∂v for the unnormalized sensor-frame offset v
    let coeffs = SMatrix::<f64, 1, NUM_COEFFS>::from_row_slice(&gaussian.sh_coeffs.0);
    let dr_dv: RowVector3<f64> = (sign / offset.norm()) * (coeffs * sh::basis_gradient(&dir.dir));
    // v = p + Rᵀ(t − μ); under T∘exp(δ): ∂v/∂ρ = I, ∂v/∂φ = [Rᵀ(t − μ)]ₓ
    let a = offset - point.position;
    let rot = dr_dv * hat(&a);
    Vector6::new(dr_dv[0], dr_dv[1], dr_dv[2], rot[0], rot[1], rot[2])
}

/// Cauchy-weighted RCS term of one return with its translation components
/// forced to zero. `None` when the return is an RCS outlier or its incidence
/// direction is degenerate.
pub fn rcs_residual(point: &RadarPoint, gaussian: &Gaussian, pose: &Pose, cauchy_c: f64) -> Option<Contribution> {
    let (r, dir) = rcs_prediction_error(point, gaussian, pose, None)?;
    let mut j = rcs_jacobian(point, gaussian, pose, &dir);
    j.fixed_rows_mut::<3>(0).fill(0.0);
    let r_sq = r * r;
    let (rho, w) = cauchy(r_sq, cauchy_c);
    Some(Contribution { r_sq, cost: 0.5 * rho, gradient: w * r * j, hessian: w * j * j.transpose() })
}

/// Replaces the translation rows/columns with the identity and zeroes the
/// translation gradient.
fn force_translation_identity(h: &mut Matrix6<f64>, g: &mut Vector6<f64>) {
    h.fixed_view_mut::<3, 6>(0, 0).fill(0.0);
    h.fixed_view_mut::<6, 3>(0, 0).fill(0.0);
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    g.fixed_rows_mut::<3>(0).fill(0.0);
}

/// Associates every return at `pose` and builds the combined normal
/// equations.
pub fn accumulate_system(
    scan: &Scan,
    model: &GaussianModel,
    pose: &Pose,
    params: &MatchParams,
) -> Result<NormalSystem, MatchError> {
    let mut h_geo = Matrix6::zeros();
    let mut g_geo = Vector6::zeros();
    let mut f_geo = 0.0;
    let mut geo_sq = 0.0;
    let mut n_geo = 0usize;
    let mut h_rcs = Matrix6::zeros();
    let mut g_rcs = Vector6::zeros();
    let mut f_rcs = 0.0;
    let mut rcs_sq = 0.0;
    let mut n_rcs = 0usize;

    for point in &scan.points {
        let world = pose.transform_point(&point.position);
        let Some(idx) = associate(&world, model, params.association_radius) else {
            continue;
        };
        let gaussian = &model.gaussians()[idx];
        let geo = geometric_residual(point, gaussian, pose, params.geometric_cauchy_c);
        h_geo += geo.hessian;
        g_geo += geo.gradient;
        f_geo += geo.cost;
        geo_sq += geo.r_sq;
        n_geo += 1;
        if let Some(rcs) = rcs_residual(point, gaussian, pose, params.cauchy_c) {
            h_rcs += rcs.hessian;
            g_rcs += rcs.gradient;
            f_rcs += rcs.cost;
            rcs_sq += rcs.r_sq;
            n_rcs += 1;
        }
    }
    if n_geo == 0 {
        return Err(MatchError::NoCorrespondences);
    }

    let (w_geo, w_rcs) = if n_rcs == 0 {
        if params.w_rcs >= 1.0 {
            return Err(MatchError::NoCorrespondences);
        }
        (1.0, 0.0)
    } else {
        (1.0 - params.w_rcs, params.w_rcs)
    };

    let scale_geo = w_geo / n_geo as f64;
    let mut h = h_geo * scale_geo;
    let mut g = g_geo * scale_geo;
    let mut cost = f_geo * scale_geo;
    if n_rcs > 0 {
        let nr = n_rcs as f64;
        let (h_r, g_r) = match params.forcing {
            TranslationForcing::AfterNormalization => {
                let (mut hn, mut gn) = (h_rcs / nr, g_rcs / nr);
                force_translation_identity(&mut hn, &mut gn);
                (hn * w_rcs, gn * w_rcs)
            }
            TranslationForcing::BeforeNormalization => {
                let (mut hr, mut gr) = (h_rcs, g_rcs);
                force_translation_identity(&mut hr, &mut gr);
                (hr * (w_rcs / nr), gr * (w_rcs / nr))
            }
        };
        h += h_r;
        g += g_r;
        cost += f_rcs * (w_rcs / nr);
    }
    // exact symmetry regardless of summation order
    let h = (h + h.transpose()) * 0.5;
    Ok(NormalSystem { h, g, cost, n_geo, n_rcs, geo_sq_sum: geo_sq, rcs_sq_sum: rcs_sq })
}

/// Solves `(H + λ·diag(H)) δ = −g`.
fn solve_damped(sys: &NormalSystem, lambda: f64) -> Option<Vector6<f64>> {
    let mut a = sys.h;
    for i in 0..6 {
        a[(i, i)] += lambda * sys.h[(i, i)];
    }
    let delta = a.cholesky()?.solve(&-sys.g);
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

fn result_from(pose: Pose, sys: &NormalSystem, converged: bool, iterations: usize) -> MatchResult {
    MatchResult {
        pose,
        converged,
        iterations,
        final_cost: sys.cost,
        geo_rms: (sys.geo_sq_sum / sys.n_geo as f64).sqrt(),
        rcs_rms: if sys.n_rcs > 0 { (sys.rcs_sq_sum / sys.n_rcs as f64).sqrt() } else { 0.0 },
    }
}

fn run(
    scan: &Scan,
    model: &GaussianModel,
    initial: &Pose,
    params: &MatchParams,
    mut trace: Option<&mut Vec<IterationRecord>>,
) -> Result<MatchResult, MatchError> {
    params.validate()?;
    let mut pose = *initial;
    let mut sys = accumulate_system(scan, model, &pose, params)?;
    let mut lambda = params.lm_lambda_init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        iterations += 1;
        let Some(delta) = solve_damped(&sys, lambda) else {
            lambda *= 10.0;
            if lambda > params.lm_lambda_max {
                return Err(MatchError::SolverFailed);
            }
            continue;
        };
        let step_norm = delta.norm();
        if step_norm < params.convergence_eps {
            converged = true;
            break;
        }
        let candidate = pose.compose(&Pose::exp(&Twist::from_vector(&delta)));
        let accepted = match accumulate_system(scan, model, &candidate, params) {
            Ok(next) if next.cost < sys.cost => {
                pose = candidate;
                sys = next;
                true
            }
            _ => false,
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(IterationRecord { iteration: iterations, pose, cost: sys.cost, lambda, step_norm, accepted });
        }
        if accepted {
            lambda = (lambda / 10.0).max(f64::MIN_POSITIVE);
        } else {
            lambda *= 10.0;
            if lambda > params.lm_lambda_max {
                break;
            }
        }
    }
    Ok(result_from(pose, &sys, converged, iterations))
}

/// Registers `scan` against `model` starting from `initial`.
pub fn match_scan(
    scan: &Scan,
    model: &GaussianModel,
    initial: &Pose,
    params: &MatchParams,
) -> Result<MatchResult, MatchError> {
    run(scan, model, initial, params, None)
}

/// As [`match_scan`], also returning one record per evaluated step.
pub fn match_scan_traced(
    scan: &Scan,
    model: &GaussianModel,
    initial: &Pose,
    params: &MatchParams,
) -> Result<(MatchResult, Vec<IterationRecord>), MatchError> {
    let mut trace = Vec::new();
    let result = run(scan, model, initial, params, Some(&mut trace))?;
    Ok((result, trace))
}

/// Combined cost with associations and hemisphere folds held fixed, as seen
/// by one linearization. The RCS term follows only the
/// rotational part of `delta`, matching the forced translation block.
/// Used to check gradients numerically.
#[derive(Debug, Clone)]
pub struct FrozenLinearization {
    base: Pose,
    /// (point index, gaussian index, flip for RCS or None if excluded)
    links: Vec<(usize, usize, Option<bool>)>,
    n_geo: usize,
    n_rcs: usize,
}

impl FrozenLinearization {
    pub fn new(scan: &Scan, model: &GaussianModel, pose: &Pose, params: &MatchParams) -> Self {
        let mut links = Vec::new();
        let (mut n_geo, mut n_rcs) = (0, 0);
        for (i, point) in scan.points.iter().enumerate() {
            let world = pose.transform_point(&point.position);
            if let Some(idx) = associate(&world, model, params.association_radius) {
                let flip = rcs_prediction_error(point, &model.gaussians()[idx], pose, None).map(|(_, d)| d.flipped);
                n_geo += 1;
                n_rcs += flip.is_some() as usize;
                links.push((i, idx, flip));
            }
        }
        Self { base: *pose, links, n_geo, n_rcs }
    }

    pub fn cost(&self, scan: &Scan, model: &GaussianModel, params: &MatchParams, delta: &Vector6<f64>) -> f64 {
        let full = self.base.compose(&Pose::exp(&Twist::from_vector(delta)));
        let rot_only =
            self.base.compose(&Pose::exp(&Twist::new(Vector3::zeros(), Vector3::new(delta[3], delta[4], delta[5]))));
        let (w_geo, w_rcs) = if self.n_rcs == 0 { (1.0, 0.0) } else { (1.0 - params.w_rcs, params.w_rcs) };
        let mut f_geo = 0.0;
        let mut f_rcs = 0.0;
        for &(i, g, flip) in &self.links {
            let point = &scan.points[i];
            let gaussian = &model.gaussians()[g];
            f_geo += geometric_residual(point, gaussian, &full, params.geometric_cauchy_c).cost;
            if let Some(f) = flip {
                if let Some((r, _)) = rcs_prediction_error(point, gaussian, &rot_only, Some(f)) {
                    f_rcs += 0.5 * cauchy(r * r, params.cauchy_c).0;
                }
            }
        }
        let mut cost = f_geo * w_geo / self.n_geo.max(1) as f64;
        if self.n_rcs > 0 {
            cost += f_rcs * w_rcs / self.n_rcs as f64;
        }
        cost
    }
}
