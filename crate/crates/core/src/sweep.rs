//! Noise-injection experiment: perturb ground-truth poses, match each scan
//! back against the model for several RCS weights, and aggregate the errors.

use crate::matcher::{match_scan, MatchParams};
use crate::model::GaussianModel;
use crate::scan::Scan;
use crate::se3::{pose_error, Pose};
use crate::seed::derive_seed;
use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("{scans} scans but {poses} poses")]
    LengthMismatch { scans: usize, poses: usize },
    #[error("invalid sweep settings: {0}")]
    Invalid(String),
}

/// One matched trial. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scan_index: usize,
    pub seed: u64,
    pub w_rcs: f64,
    /// m.
    pub init_trans_err: f64,
    /// Degrees.
    pub init_rot_err: f64,
    pub final_trans_err: f64,
    pub final_rot_err: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// m.
    pub max_trans: f64,
    /// Degrees.
    pub max_rot: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { max_trans: 2.0, max_rot: 5.0 }
    }
}

/// Translation offset of uniform length in `[0, max_trans]` along a uniform
/// direction, and a rotation of uniform angle in `[0, max_rot]` degrees about
/// a uniform axis. The rotation is applied in the body frame and the offset
/// is added to the translation, so `pose_error(result, truth)` returns the
/// two sampled magnitudes.
pub fn perturb_pose(truth: &Pose, max_trans: f64, max_rot: f64, seed: u64) -> Pose {
    assert!(max_trans >= 0.0 && max_rot >= 0.0, "perturbation maxima must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = Vector3::from(<UnitSphere as Distribution<[f64; 3]>>::sample(&UnitSphere, &mut rng));
    let magnitude = if max_trans > 0.0 { rng.random_range(0.0..=max_trans) } else { 0.0 };
    let axis = Vector3::from(<UnitSphere as Distribution<[f64; 3]>>::sample(&UnitSphere, &mut rng));
    let angle = if max_rot > 0.0 { rng.random_range(0.0..=max_rot) } else { 0.0 };
    if magnitude == 0.0 && angle == 0.0 {
        return *truth;
    }
    let delta = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle.to_radians());
    Pose::from_rotation(truth.rotation() * delta, truth.translation() + dir * magnitude)
}

/// Seed of the perturbation for `(scan, trial)`; shared by every weight.
pub fn trial_seed(master: u64, scan_index: usize, trial: usize) -> u64 {
    derive_seed(master, &[scan_index as u64, trial as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub w_values: Vec<f64>,
    pub trials_per_scan: usize,
    pub noise: NoiseSpec,
    /// `w_rcs` is overwritten per row.
    pub match_params: MatchParams,
    pub seed: u64,
}

fn run_trial(
    scan: &Scan,
    truth: &Pose,
    model: &GaussianModel,
    cfg: &SweepConfig,
    s: usize,
    wi: usize,
    t: usize,
) -> TrialRecord {
    let seed = trial_seed(cfg.seed, s, t);
    let w = cfg.w_values[wi];
    let initial = perturb_pose(truth, cfg.noise.max_trans, cfg.noise.max_rot, seed);
    let (init_trans_err, init_rot_err) = pose_error(&initial, truth);
    let params = MatchParams { w_rcs: w, ..cfg.match_params };
    let (pose, iterations, converged) = match match_scan(scan, model, &initial, &params) {
        Ok(r) => (r.pose, r.iterations, r.converged),
        Err(_) => (initial, 0, false),
    };
    let (final_trans_err, final_rot_err) = pose_error(&pose, truth);
    TrialRecord {
        scan_index: s,
        seed,
        w_rcs: w,
        init_trans_err,
        init_rot_err,
        final_trans_err,
        final_rot_err,
        iterations,
        converged,
    }
}

/// Every scan × weight × trial, ordered in that nesting. Match failures are
/// recorded as unconverged rows with the initial pose as the result.
pub fn run_sweep(
    scans: &[Scan],
    poses: &[Pose],
    model: &GaussianModel,
    cfg: &SweepConfig,
) -> Result<Vec<TrialRecord>, SweepError> {
    if scans.len() != poses.len() {
        return Err(SweepError::LengthMismatch { scans: scans.len(), poses: poses.len() });
    }
    if cfg.w_values.is_empty() || cfg.w_values.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(SweepError::Invalid("w values must be non-empty and lie in [0, 1]".into()));
    }
    if !(cfg.noise.max_trans >= 0.0 && cfg.noise.max_rot >= 0.0) {
        return Err(SweepError::Invalid("noise maxima must be non-negative".into()));
    }
    let nw = cfg.w_values.len();
    let nt = cfg.trials_per_scan;
    let job = |i: usize| {
        let (s, rest) = (i / (nw * nt), i % (nw * nt));
        run_trial(&scans[s], &poses[s], model, cfg, s, rest / nt, rest % nt)
    };
    let total = scans.len() * nw * nt;
    #[cfg(feature = "parallel")]
    let rows = {
        use rayon::prelude::*;
        (0..total).into_par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows = (0..total).map(job).collect();
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

impl ErrorStats {
    /// Mean, midpoint median and nearest-rank 90th percentile. Values are
    /// sorted first so the result does not depend on input order.
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "statistics of an empty set");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let rank = ((0.9 * n as f64).ceil() as usize).clamp(1, n);
        Self { mean: v.iter().sum::<f64>() / n as f64, median, p90: v[rank - 1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSummary {
    pub w_rcs: f64,
    pub trials: usize,
    pub trans: ErrorStats,
    pub rot: ErrorStats,
    pub convergence_rate: f64,
}

/// Per-weight aggregates in ascending `w_rcs`.
pub fn summarize(records: &[TrialRecord]) -> Vec<WeightSummary> {
    assert!(!records.is_empty(), "summarize needs at least one record");
    let mut weights: Vec<f64> = records.iter().map(|r| r.w_rcs).collect();
    weights.sort_by(f64::total_cmp);
    weights.dedup_by(|a, b| a.total_cmp(b).is_eq());
    weights
        .into_iter()
        .map(|w| {
            let group: Vec<_> = records.iter().filter(|r| r.w_rcs.total_cmp(&w).is_eq()).collect();
            let trans: Vec<f64> = group.iter().map(|r| r.final_trans_err).collect();
            let rot: Vec<f64> = group.iter().map(|r| r.final_rot_err).collect();
            let converged = group.iter().filter(|r| r.converged).count();
            WeightSummary {
                w_rcs: w,
                trials: group.len(),
                trans: ErrorStats::from_values(&trans),
                rot: ErrorStats::from_values(&rot),
                convergence_rate: converged as f64 / group.len() as f64,
            }
        })
        .collect()
}

/// Fraction of records whose final error is below both thresholds.
pub fn success_rate(records: &[TrialRecord], max_trans: f64, max_rot: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let ok = records.iter().filter(|r| r.final_trans_err < max_trans && r.final_rot_err < max_rot).count();
    ok as f64 / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::se3::Twist;
    use crate::synth::{render_scan, SceneSpec, Surface, SurfaceKind};
    use rand_distr::StandardNormal;

    #[test]
    fn zero_perturbation_is_identity() {
        let truth = Pose::exp(&Twist::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.1, -0.2, 0.3)));
        for seed in 0..20 {
            assert_eq!(perturb_pose(&truth, 0.0, 0.0, seed), truth);
        }
    }

    /// Kolmogorov–Smirnov statistic against `U[0, max]`.
    fn ks_uniform(mut v: Vec<f64>, max: f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = x / max;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn perturbation_magnitudes_are_uniform() {
        let truth = Pose::identity();
        let (mut trans, mut rot) = (Vec::new(), Vec::new());
        let mut mean_dir = Vector3::zeros();
        for seed in 0..10_000 {
            let p = perturb_pose(&truth, 2.0, 5.0, seed);
            let (dt, dr) = pose_error(&p, &truth);
            trans.push(dt);
            rot.push(dr);
            mean_dir += p.translation() / dt.max(1e-300);
        }
        assert!(ks_uniform(trans, 2.0) < 0.02);
        assert!(ks_uniform(rot, 5.0) < 0.02);
        // isotropic directions average out
        assert!((mean_dir / 10_000.0).norm() < 0.05);
    }

    #[test]
    fn pose_error_measures_the_sampled_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..2000 {
            let truth = Pose::exp(&Twist::new(
                Vector3::from_fn(|_, _| 50.0 * rng.sample::<f64, _>(StandardNormal)),
                Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)),
            ));
            // replay the draws made inside perturb_pose
            let mut draw = ChaCha8Rng::seed_from_u64(seed);
            let _: [f64; 3] = UnitSphere.sample(&mut draw);
            let magnitude = draw.random_range(0.0..=2.0);
            let _: [f64; 3] = UnitSphere.sample(&mut draw);
            let angle = draw.random_range(0.0..=5.0);

            let (dt, dr) = pose_error(&perturb_pose(&truth, 2.0, 5.0, seed), &truth);
            assert!((dt - magnitude).abs() < 1e-9, "{dt} vs {magnitude}");
            assert!((dr - angle).abs() < 1e-9, "{dr} vs {angle}");
        }
    }

    fn record(w: f64, t: f64, r: f64, converged: bool) -> TrialRecord {
        TrialRecord {
            scan_index: 0,
            seed: 0,
            w_rcs: w,
            init_trans_err: 1.0,
            init_rot_err: 1.0,
            final_trans_err: t,
            final_rot_err: r,
            iterations: 3,
            converged,
        }
    }

    #[test]
    fn single_record_summary() {
        let s = summarize(&[record(0.5, 0.3, 1.2, true)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].trans, ErrorStats { mean: 0.3, median: 0.3, p90: 0.3 });
        assert_eq!(s[0].rot.p90, 1.2);
        assert_eq!(s[0].convergence_rate, 1.0);
    }

    #[test]
    fn hand_computed_summary() {
        let records = [
            record(0.0, 0.5, 2.0, true),
            record(0.0, 0.1, 4.0, true),
            record(0.0, 0.4, 1.0, false),
            record(0.0, 0.2, 5.0, true),
            record(0.0, 0.3, 3.0, false),
            record(1.0, 7.0, 7.0, false),
            record(1.0, 8.0, 9.0, true),
        ];
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        // sorted 0.1..0.5: mean 0.3, median 0.3, p90 rank ceil(4.5) = 5
        assert!((s[0].trans.mean - 0.3).abs() < 1e-15);
        assert_eq!(s[0].trans.median, 0.3);
        assert_eq!(s[0].trans.p90, 0.5);
        assert_eq!(s[0].rot.mean, 3.0);
        assert_eq!(s[0].rot.p90, 5.0);
        assert_eq!(s[0].convergence_rate, 0.6);
        assert_eq!(s[0].trials, 5);
        // two values: midpoint median, p90 rank ceil(1.8) = 2
        assert_eq!(s[1].trans.median, 7.5);
        assert_eq!(s[1].trans.p90, 8.0);
        assert_eq!(s[1].convergence_rate, 0.5);
    }

    #[test]
    fn summary_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut records: Vec<_> = (0..200)
            .map(|i| record([0.0, 0.25, 1.0][i % 3], rng.random(), rng.random::<f64>() * 5.0, rng.random_bool(0.7)))
            .collect();
        let before = summarize(&records);
        for _ in 0..5 {
            rand::seq::SliceRandom::shuffle(records.as_mut_slice(), &mut rng);
            assert_eq!(summarize(&records), before);
        }
    }

    /// Four separated spheres; a model built from the scans it is matched
    /// against.
    fn sphere_scene() -> SceneSpec {
        let centers = [(9.0, 1.0, 1.0), (15.0, -7.0, -1.0), (21.0, 5.0, 3.0), (27.0, -1.0, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let surfaces = centers
            .iter()
            .map(|&(x, y, z)| Surface {
                kind: SurfaceKind::Sphere { center: Vector3::new(x, y, z), radius: 0.7 },
                rcs_field: crate::synth::random_field(&mut rng, 5.0, [3.0, 2.0, 1.0]),
                rcs_noise_sigma: 0.5,
            })
            .collect();
        SceneSpec::new(surfaces, 60.0)
    }

    fn fixture(noise_free: bool) -> (Vec<Scan>, Vec<Pose>, GaussianModel) {
        let mut scene = sphere_scene();
        if noise_free {
            scene.sigma_pos = 0.0;
        }
        let pose = Pose::exp(&Twist::new(Vector3::new(0.5, 0.2, 0.0), Vector3::new(0.0, 0.0, 0.05)));
        let (scan, _) = render_scan(&scene, &pose, &Vector3::new(1.0, 0.0, 0.0), 400, 0.0, 3).unwrap();
        let config = ModelConfig { voxel_size: 2.0, ..Default::default() };
        let model = build_model(std::slice::from_ref(&scan), &[pose], &config).unwrap();
        (vec![scan], vec![pose], model)
    }

    fn config(model: &GaussianModel, w: Vec<f64>, trials: usize, noise: NoiseSpec) -> SweepConfig {
        SweepConfig {
            w_values: w,
            trials_per_scan: trials,
            noise,
            match_params: MatchParams::for_model(model),
            seed: 17,
        }
    }

    #[test]
    fn noise_free_trials_stay_at_truth() {
        let (scans, poses, model) = fixture(true);
        let noise = NoiseSpec { max_trans: 0.0, max_rot: 0.0 };
        let rows = run_sweep(&scans, &poses, &model, &config(&model, vec![0.0], 3, noise)).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.converged);
            assert!(r.iterations <= 2);
            assert!(r.final_trans_err < 1e-6 && r.final_rot_err < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn weights_share_perturbations() {
        let (scans, poses, model) = fixture(false);
        let cfg = config(&model, vec![0.0, 0.25, 1.0], 4, NoiseSpec::default());
        let rows = run_sweep(&scans, &poses, &model, &cfg).unwrap();
        assert_eq!(rows.len(), 12);
        for t in 0..4 {
            let same: Vec<_> = rows.iter().skip(t).step_by(4).collect();
            assert_eq!(same.len(), 3);
            for r in &same {
                assert_eq!(r.seed, same[0].seed);
                assert_eq!(r.init_trans_err, same[0].init_trans_err);
                assert_eq!(r.init_rot_err, same[0].init_rot_err);
            }
        }
        for r in rows.iter().filter(|r| r.w_rcs == 1.0) {
            assert!(r.final_trans_err >= r.init_trans_err - 1e-9);
        }
        assert_eq!(run_sweep(&scans, &poses, &model, &cfg).unwrap(), rows);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn thread_count_does_not_change_rows() {
        let (scans, poses, model) = fixture(false);
        let cfg = config(&model, vec![0.0, 0.5], 6, NoiseSpec::default());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_sweep(&scans, &poses, &model, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn sweep_rejects_bad_input() {
        let (scans, poses, model) = fixture(false);
        let cfg = config(&model, vec![1.5], 1, NoiseSpec::default());
        assert!(matches!(run_sweep(&scans, &poses, &model, &cfg), Err(SweepError::Invalid(_))));
        let cfg = config(&model, vec![0.0], 1, NoiseSpec::default());
        assert!(matches!(run_sweep(&scans, &[], &model, &cfg), Err(SweepError::LengthMismatch { .. })));
    }
}
