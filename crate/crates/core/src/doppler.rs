//! Ego-velocity estimation from per-point Doppler with RANSAC followed by a
//! least-squares refinement, and removal of the returns that do not fit it.
//!
//! For a static target at bearing `b` seen from a sensor moving with
//! velocity `v`, the measured Doppler is `−b·v`.

use crate::scan::Scan;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DopplerError {
    #[error("need at least 3 returns, got {0}")]
    TooFewPoints(usize),
    #[error("bearings do not span 3D; ego-velocity is unobservable")]
    DegenerateBearings,
    #[error("best consensus ratio {best:.3} is below the required {required:.3}")]
    EstimationFailed { best: f64, required: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Maximum Doppler residual of an inlier, m/s.
    pub inlier_threshold: f64,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 100, inlier_threshold: 0.2, min_inlier_ratio: 0.3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgoVelocityEstimate {
    /// Sensor velocity in the sensor frame, m/s.
    pub velocity: Vector3<f64>,
    pub inlier_mask: Vec<bool>,
    pub inlier_ratio: f64,
}

/// Relative conditioning below which a bearing system is treated as rank
/// deficient.
const RANK_TOL: f64 = 1e-9;

fn is_well_conditioned(normal: &Matrix3<f64>) -> bool {
    let eig = normal.symmetric_eigenvalues();
    let max = eig.max();
    max > 0.0 && eig.min() > RANK_TOL * max
}

/// Least-squares velocity over the selected returns: minimizes
/// `Σ (dᵢ + bᵢ·v)²`.
fn least_squares_velocity(bearings: &[Vector3<f64>], dopplers: &[f64], select: &[bool]) -> Option<Vector3<f64>> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for ((b, d), _) in bearings.iter().zip(dopplers).zip(select).filter(|(_, s)| **s) {
        normal += b * b.transpose();
        rhs -= b * *d;
    }
    if !is_well_conditioned(&normal) {
        return None;
    }
    normal.cholesky().map(|c| c.solve(&rhs))
}

fn residual(b: &Vector3<f64>, d: f64, v: &Vector3<f64>) -> f64 {
    (d + b.dot(v)).abs()
}

fn consensus(bearings: &[Vector3<f64>], dopplers: &[f64], v: &Vector3<f64>, threshold: f64) -> Vec<bool> {
    bearings.iter().zip(dopplers).map(|(b, d)| residual(b, *d, v) < threshold).collect()
}

/// Best RANSAC hypothesis and its consensus set, before refinement.
pub(crate) fn ransac_candidate(
    bearings: &[Vector3<f64>],
    dopplers: &[f64],
    params: &RansacParams,
) -> Option<(Vector3<f64>, Vec<bool>)> {
    let n = bearings.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Vector3<f64>, Vec<bool>, usize)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for lo in [i.min(j), i.max(j)] {
            if k >= lo {
                k += 1;
            }
        }
        let a = Matrix3::from_rows(&[bearings[i].transpose(), bearings[j].transpose(), bearings[k].transpose()]);
        if !is_well_conditioned(&(a.transpose() * a)) {
            continue;
        }
        let Some(v) = a.lu().solve(&-Vector3::new(dopplers[i], dopplers[j], dopplers[k])) else {
            continue;
        };
        let mask = consensus(bearings, dopplers, &v, params.inlier_threshold);
        let count = mask.iter().filter(|m| **m).count();
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            best = Some((v, mask, count));
        }
    }
    best.map(|(v, m, _)| (v, m))
}

/// Estimates the sensor's ego-velocity from the Doppler of its static
/// returns.
pub fn estimate_ego_velocity(scan: &Scan, params: &RansacParams) -> Result<EgoVelocityEstimate, DopplerError> {
    let n = scan.len();
    if n < 3 {
        return Err(DopplerError::TooFewPoints(n));
    }
    let bearings: Vec<_> = scan.points.iter().map(|p| p.bearing()).collect();
    let dopplers: Vec<_> = scan.points.iter().map(|p| p.doppler).collect();
    let all = vec![true; n];
    let mut normal = Matrix3::zeros();
    for b in &bearings {
        normal += b * b.transpose();
    }
    if !is_well_conditioned(&normal) {
        return Err(DopplerError::DegenerateBearings);
    }

    let failed = |best: f64| DopplerError::EstimationFailed { best, required: params.min_inlier_ratio };
    let (_, support) = ransac_candidate(&bearings, &dopplers, params).ok_or(failed(0.0))?;
    let support_ratio = support.iter().filter(|m| **m).count() as f64 / n as f64;
    if support_ratio < params.min_inlier_ratio {
        return Err(failed(support_ratio));
    }
    let velocity = least_squares_velocity(&bearings, &dopplers, &support)
        .or_else(|| least_squares_velocity(&bearings, &dopplers, &all))
        .ok_or(failed(support_ratio))?;
    let inlier_mask = consensus(&bearings, &dopplers, &velocity, params.inlier_threshold);
    let inlier_ratio = inlier_mask.iter().filter(|m| **m).count() as f64 / n as f64;
    if inlier_ratio < params.min_inlier_ratio {
        return Err(failed(inlier_ratio));
    }
    Ok(EgoVelocityEstimate { velocity, inlier_mask, inlier_ratio })
}

/// Keeps the returns marked as inliers, in their original order.
pub fn filter_dynamic(scan: &Scan, est: &EgoVelocityEstimate) -> Scan {
    let points = scan.points.iter().zip(&est.inlier_mask).filter(|(_, keep)| **keep).map(|(p, _)| *p).collect();
    Scan::new(points, scan.timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::RadarPoint;
    use rand_distr::{Distribution, Normal};

    fn random_position(rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::new(rng.random_range(2.0..40.0), rng.random_range(-20.0..20.0), rng.random_range(-3.0..5.0))
    }

    /// Static returns obey the Doppler model; dynamic ones get a ±[1, 2]
    /// offset on top. Returns the scan and the dynamic labels.
    fn synthetic_scan(v: Vector3<f64>, n: usize, dynamic_fraction: f64, sigma: f64, seed: u64) -> (Scan, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let n_dyn = (dynamic_fraction * n as f64).round() as usize;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let p = random_position(&mut rng);
            let mut d = -(p / p.norm()).dot(&v);
            if sigma > 0.0 {
                d += noise.sample(&mut rng);
            }
            let dynamic = i < n_dyn;
            if dynamic {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                d += sign * rng.random_range(1.0..2.0);
            }
            points.push(RadarPoint::new(p, d, 0.0).unwrap());
            labels.push(dynamic);
        }
        (Scan::new(points, 0.0), labels)
    }

    #[test]
    fn exact_static_scan() {
        let v = Vector3::new(1.0, 0.0, 0.0);
        let (scan, _) = synthetic_scan(v, 200, 0.0, 0.0, 1);
        let est = estimate_ego_velocity(&scan, &RansacParams::default()).unwrap();
        assert!((est.velocity - v).norm() < 1e-9);
        assert_eq!(est.inlier_ratio, 1.0);
    }

    #[test]
    fn stationary_sensor() {
        let (scan, _) = synthetic_scan(Vector3::zeros(), 50, 0.0, 0.0, 2);
        let est = estimate_ego_velocity(&scan, &RansacParams::default()).unwrap();
        assert!(est.velocity.norm() < 1e-12);
        assert!(est.inlier_mask.iter().all(|m| *m));
    }

    #[test]
    fn contaminated_scan() {
        let v = Vector3::new(2.0, 0.5, 0.0);
        let (scan, labels) = synthetic_scan(v, 300, 0.2, 0.05, 3);
        let est = estimate_ego_velocity(&scan, &RansacParams::default()).unwrap();
        assert!((est.velocity - v).norm() < 0.05, "{}", est.velocity);
        let n_dyn = labels.iter().filter(|l| **l).count();
        let excluded = labels.iter().zip(&est.inlier_mask).filter(|(l, m)| **l && !**m).count();
        assert!(excluded as f64 >= 0.95 * n_dyn as f64);
    }

    #[test]
    fn error_paths() {
        let p = |x, y, z| RadarPoint::new(Vector3::new(x, y, z), 0.0, 0.0).unwrap();
        let two = Scan::new(vec![p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0)], 0.0);
        assert_eq!(estimate_ego_velocity(&two, &RansacParams::default()), Err(DopplerError::TooFewPoints(2)));
        let planar = Scan::new((1..20).map(|i| p(i as f64, (i % 5) as f64, 0.0)).collect(), 0.0);
        assert_eq!(estimate_ego_velocity(&planar, &RansacParams::default()), Err(DopplerError::DegenerateBearings));

        // dopplers drawn at random: no hypothesis explains 90% of them
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy = Scan::new(
            (0..100)
                .map(|_| RadarPoint::new(random_position(&mut rng), rng.random_range(-20.0..20.0), 0.0).unwrap())
                .collect(),
            0.0,
        );
        let strict = RansacParams { min_inlier_ratio: 0.9, ..Default::default() };
        assert!(matches!(estimate_ego_velocity(&noisy, &strict), Err(DopplerError::EstimationFailed { .. })));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (scan, _) = synthetic_scan(Vector3::new(3.0, -1.0, 0.2), 150, 0.3, 0.05, 5);
        let params = RansacParams { seed: 99, ..Default::default() };
        assert_eq!(estimate_ego_velocity(&scan, &params), estimate_ego_velocity(&scan, &params));
    }

    #[test]
    fn scale_equivariance() {
        let (scan, _) = synthetic_scan(Vector3::new(1.5, 0.3, -0.1), 120, 0.2, 0.05, 6);
        let scaled = Scan::new(
            scan.points.iter().map(|p| RadarPoint::new(p.position * 7.5, p.doppler, p.rcs).unwrap()).collect(),
            0.0,
        );
        let a = estimate_ego_velocity(&scan, &RansacParams::default()).unwrap();
        let b = estimate_ego_velocity(&scaled, &RansacParams::default()).unwrap();
        assert!((a.velocity - b.velocity).norm() < 1e-9);
    }

    #[test]
    fn refinement_does_not_increase_consensus_residual() {
        for seed in 0..20 {
            let (scan, _) = synthetic_scan(Vector3::new(2.0, 0.5, 0.0), 200, 0.2, 0.05, 100 + seed);
            let bearings: Vec<_> = scan.points.iter().map(|p| p.bearing()).collect();
            let dopplers: Vec<_> = scan.points.iter().map(|p| p.doppler).collect();
            let params = RansacParams::default();
            let (cand, support) = ransac_candidate(&bearings, &dopplers, &params).unwrap();
            let refined = least_squares_velocity(&bearings, &dopplers, &support).unwrap();
            let rms = |v: &Vector3<f64>| {
                let (s, c) = bearings
                    .iter()
                    .zip(&dopplers)
                    .zip(&support)
                    .filter(|(_, s)| **s)
                    .fold((0.0, 0), |(s, c), ((b, d), _)| (s + residual(b, *d, v).powi(2), c + 1));
                (s / c as f64).sqrt()
            };
            assert!(rms(&refined) <= rms(&cand) + 1e-15);
        }
    }

    #[test]
    fn filter_examples() {
        let (scan, _) = synthetic_scan(Vector3::new(1.0, 0.0, 0.0), 30, 0.0, 0.0, 7);
        let keep_all =
            EgoVelocityEstimate { velocity: Vector3::zeros(), inlier_mask: vec![true; 30], inlier_ratio: 1.0 };
        assert_eq!(filter_dynamic(&scan, &keep_all), scan);

        let drop_all = EgoVelocityEstimate { inlier_mask: vec![false; 30], inlier_ratio: 0.0, ..keep_all.clone() };
        assert!(filter_dynamic(&scan, &drop_all).is_empty());

        let mask: Vec<bool> = (0..30).map(|i| i % 3 != 1).collect();
        let mixed = EgoVelocityEstimate { inlier_mask: mask.clone(), inlier_ratio: 20.0 / 30.0, ..keep_all };
        let out = filter_dynamic(&scan, &mixed);
        let expected: Vec<_> = (0..30).filter(|i| mask[*i]).map(|i| scan.points[i]).collect();
        assert_eq!(out.points, expected);
    }
}
