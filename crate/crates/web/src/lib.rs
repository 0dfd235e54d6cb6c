//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Two views: an SH field explorer (plant a field, sample it with noise,
//! fit it back) and a scan-match convergence trace on a synthetic scene.
//! Arrays cross the boundary flat; layouts are documented per function.

use gauss_rcs::matcher::{match_scan_traced, MatchParams};
use gauss_rcs::model::{build_model, fit_sh_coefficients};
use gauss_rcs::sh::{self, IncidenceDirection, NUM_COEFFS};
use gauss_rcs::sweep::perturb_pose;
use gauss_rcs::synth::{self, corridor_scene, plaza_scene, render_sequence, Sequence, TrajectorySpec, PRESET_VOXEL};
use gauss_rcs::{pose_error, GaussianModel, ModelConfig, Pose, ShVector};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

/// Values per row of [`MatchDemo::run`].
pub const TRACE_ROW: usize = 12;

fn to_sh(coeffs: &[f64]) -> Result<ShVector, String> {
    if coeffs.len() != NUM_COEFFS {
        return Err(format!("expected {NUM_COEFFS} coefficients, got {}", coeffs.len()));
    }
    Ok(ShVector(std::array::from_fn(|k| coeffs[k])))
}

/// Hemisphere direction under pixel `(u, v)` of a Lambert equal-area disk
/// centred on −x, or `None` outside the disk.
pub fn disk_direction(u: f64, v: f64) -> Option<Vector3<f64>> {
    let rho = (u * u + v * v).sqrt();
    if rho > 1.0 {
        return None;
    }
    if rho == 0.0 {
        return Some(-Vector3::x());
    }
    let theta = 2.0 * (rho / std::f64::consts::SQRT_2).asin();
    let s = theta.sin() / rho;
    Some(Vector3::new(-theta.cos(), s * u, s * v))
}

pub fn field_grid(coeffs: &[f64], size: usize) -> Result<Vec<f64>, String> {
    let c = to_sh(coeffs)?;
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let u = 2.0 * (col as f64 + 0.5) / size as f64 - 1.0;
            let v = 1.0 - 2.0 * (row as f64 + 0.5) / size as f64;
            out.push(disk_direction(u, v).map_or(f64::NAN, |d| sh::basis(&d).dot(&c)));
        }
    }
    Ok(out)
}

/// Row-major `size × size` image of the field over the x ≤ 0 hemisphere;
/// pixels outside the disk are NaN.
#[wasm_bindgen(js_name = fieldGrid)]
pub fn field_grid_js(coeffs: &[f64], size: usize) -> Result<Vec<f64>, JsError> {
    field_grid(coeffs, size).map_err(|e| JsError::new(&e))
}

/// Random field with per-degree amplitudes shrinking as 1, 0.75, 0.5 of
/// `amplitude`.
#[wasm_bindgen(js_name = randomField)]
pub fn random_field(seed: u32, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let a = amplitude.abs();
    synth::random_field(&mut rng, 0.0, [a, 0.75 * a, 0.5 * a]).0.to_vec()
}

fn hemisphere_sample(rng: &mut impl Rng) -> IncidenceDirection {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            if let Ok(d) = IncidenceDirection::from_sensor_offset(&v) {
                return d;
            }
        }
    }
}

pub fn fit_samples(
    coeffs: &[f64],
    samples: usize,
    noise: f64,
    max_degree: usize,
    seed: u32,
) -> Result<Vec<f64>, String> {
    let planted = to_sh(coeffs)?;
    if !(noise >= 0.0) {
        return Err("noise must be non-negative".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let normal = StandardNormal;
    let mut dirs = Vec::with_capacity(samples);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let d = hemisphere_sample(&mut rng);
        let z: f64 = normal.sample(&mut rng);
        values.push(sh::predict_rcs(&planted, &d) + noise * z);
        dirs.push(d);
    }
    let (fitted, degree) =
        fit_sh_coefficients(&dirs, &values, max_degree.min(sh::MAX_DEGREE)).map_err(|e| e.to_string())?;
    let mut sq = 0.0;
    let probes = 500;
    for _ in 0..probes {
        let d = hemisphere_sample(&mut rng);
        sq += (sh::predict_rcs(&fitted, &d) - sh::predict_rcs(&planted, &d)).powi(2);
    }
    let mut out = fitted.0.to_vec();
    out.push(degree as f64);
    out.push((sq / probes as f64).sqrt());
    out.extend(dirs.iter().flat_map(|d| [d.dir.x, d.dir.y, d.dir.z]));
    Ok(out)
}

/// Samples `samples` hemisphere directions of the planted field, adds
/// Gaussian noise and fits. Layout: 16 fitted coefficients, the fitted
/// degree, the RMS error against the planted field over 500 probes, then
/// the sample directions as xyz triples.
#[wasm_bindgen(js_name = fitSamples)]
pub fn fit_samples_js(
    coeffs: &[f64],
    samples: usize,
    noise: f64,
    max_degree: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    fit_samples(coeffs, samples, noise, max_degree, seed).map_err(|e| JsError::new(&e))
}

/// A rendered synthetic sequence with its model, ready for matching.
#[wasm_bindgen]
pub struct MatchDemo {
    seq: Sequence,
    model: GaussianModel,
}

impl MatchDemo {
    pub fn create(scene: &str, seed: u32) -> Result<MatchDemo, String> {
        let (scene, trajectory) = match scene {
            "plaza" => (plaza_scene(seed as u64), TrajectorySpec::arc(30.0, 2.0, 2.0, 10.0)),
            "corridor" => (corridor_scene(seed as u64), TrajectorySpec::line(2.0, 2.0, 10.0)),
            other => return Err(format!("unknown scene {other:?}")),
        };
        let seq = render_sequence(&scene, &trajectory, 200, 0.0, seed as u64).map_err(|e| e.to_string())?;
        let config = ModelConfig { voxel_size: PRESET_VOXEL, ..ModelConfig::default() };
        let model = build_model(&seq.scans, &seq.poses, &config).map_err(|e| e.to_string())?;
        Ok(MatchDemo { seq, model })
    }

    pub fn trace(
        &self,
        scan: usize,
        w_rcs: f64,
        noise_trans: f64,
        noise_rot: f64,
        seed: u32,
    ) -> Result<Vec<f64>, String> {
        let (Some(points), Some(truth)) = (self.seq.scans.get(scan), self.seq.poses.get(scan)) else {
            return Err(format!("scan {scan} out of range"));
        };
        let initial = perturb_pose(truth, noise_trans.max(0.0), noise_rot.max(0.0), seed as u64);
        let params = MatchParams { w_rcs, ..MatchParams::for_model(&self.model) };
        let (_, records) = match_scan_traced(points, &self.model, &initial, &params).map_err(|e| e.to_string())?;
        let mut out = Vec::with_capacity((records.len() + 1) * TRACE_ROW);
        let mut push = |iteration: f64, accepted: bool, cost: f64, pose: &Pose| {
            let (te, re) = pose_error(pose, truth);
            let t = pose.translation();
            let q = pose.rotation().quaternion();
            out.extend([iteration, accepted as u8 as f64, cost, te, re, t.x, t.y, t.z, q.i, q.j, q.k, q.w]);
        };
        push(0.0, true, f64::NAN, &initial);
        for r in &records {
            push(r.iteration as f64, r.accepted, r.cost, &r.pose);
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl MatchDemo {
    /// `scene` is `"plaza"` or `"corridor"`; 20 scans of 200 returns.
    #[wasm_bindgen(constructor)]
    pub fn new(scene: &str, seed: u32) -> Result<MatchDemo, JsError> {
        Self::create(scene, seed).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = scanCount)]
    pub fn scan_count(&self) -> usize {
        self.seq.scans.len()
    }

    /// Gaussian means as xyz triples, world frame.
    pub fn means(&self) -> Vec<f64> {
        self.model.gaussians().iter().flat_map(|g| [g.mean.x, g.mean.y, g.mean.z]).collect()
    }

    /// Returns of one scan as xyz triples, sensor frame.
    pub fn points(&self, scan: usize) -> Vec<f64> {
        self.seq.scans.get(scan).map_or_else(Vec::new, |s| {
            s.points.iter().flat_map(|p| [p.position.x, p.position.y, p.position.z]).collect()
        })
    }

    /// True pose of a scan as `tx ty tz qx qy qz qw`.
    #[wasm_bindgen(js_name = truePose)]
    pub fn true_pose(&self, scan: usize) -> Vec<f64> {
        self.seq.poses.get(scan).map_or_else(Vec::new, |p| {
            let t = p.translation();
            let q = p.rotation().quaternion();
            vec![t.x, t.y, t.z, q.i, q.j, q.k, q.w]
        })
    }

    /// Perturbs the true pose of `scan` and matches from there. One row of
    /// [`TRACE_ROW`] values per step, the first being the start:
    /// `iteration, accepted, cost, trans_err (m), rot_err (deg), tx, ty, tz,
    /// qx, qy, qz, qw`.
    pub fn run(
        &self,
        scan: usize,
        w_rcs: f64,
        noise_trans: f64,
        noise_rot: f64,
        seed: u32,
    ) -> Result<Vec<f64>, JsError> {
        self.trace(scan, w_rcs, noise_trans, noise_rot, seed).map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen(js_name = traceRowLength)]
pub fn trace_row_length() -> usize {
    TRACE_ROW
}
