//! Synthetic radar scenes: simple surfaces carrying planted SH RCS fields,
//! smooth sensor trajectories, and scans with consistent Doppler and known
//! static/dynamic labels.

use crate::scan::{RadarPoint, Scan};
use crate::se3::Pose;
use crate::seed::derive_seed;
use crate::sh::{self, IncidenceDirection, ShVector, NUM_COEFFS};
use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use thiserror::Error;

/// Half of the forward field of view.
pub const HALF_FOV_DEG: f64 = 60.0;
/// Returns closer than this are not produced.
pub const MIN_RANGE: f64 = 0.5;
pub const DEFAULT_SIGMA_POS: f64 = 0.02;
pub const DEFAULT_SIGMA_DOPPLER: f64 = 0.05;
pub const DEFAULT_RCS_NOISE: f64 = 0.5;

/// Doppler noise is truncated here, in sigmas, so every static return
/// satisfies the Doppler equation to within this bound.
pub const DOPPLER_TRUNCATION: f64 = 4.0;

/// Samples used to decide whether a surface is visible at all.
const VISIBILITY_PROBES: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("no surface is visible from this pose")]
    EmptyScan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    /// Rectangle `center + a·half_u + b·half_v`, `a, b ∈ [−1, 1]`.
    Plane {
        center: Vector3<f64>,
        half_u: Vector3<f64>,
        half_v: Vector3<f64>,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Lateral surface only; `axis` is a unit vector.
    Cylinder {
        center: Vector3<f64>,
        axis: Vector3<f64>,
        radius: f64,
        half_length: f64,
    },
}

impl SurfaceKind {
    /// Reference point the RCS field is anchored at.
    pub fn anchor(&self) -> Vector3<f64> {
        match *self {
            SurfaceKind::Plane { center, .. }
            | SurfaceKind::Sphere { center, .. }
            | SurfaceKind::Cylinder { center, .. } => center,
        }
    }

    /// Area-uniform sample.
    pub fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        match *self {
            SurfaceKind::Plane { center, half_u, half_v } => {
                center + half_u * rng.random_range(-1.0..=1.0) + half_v * rng.random_range(-1.0..=1.0)
            }
            SurfaceKind::Sphere { center, radius } => {
                let u: [f64; 3] = UnitSphere.sample(rng);
                center + Vector3::from(u) * radius
            }
            SurfaceKind::Cylinder { center, axis, radius, half_length } => {
                let e1 = axis.cross(&least_aligned_axis(&axis)).normalize();
                let e2 = axis.cross(&e1);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let h = rng.random_range(-half_length..=half_length);
                center + axis * h + (e1 * theta.cos() + e2 * theta.sin()) * radius
            }
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let ok = match *self {
            SurfaceKind::Plane { center, half_u, half_v } => {
                center.iter().all(|v| v.is_finite()) && half_u.cross(&half_v).norm() > 0.0
            }
            SurfaceKind::Sphere { center, radius } => center.iter().all(|v| v.is_finite()) && radius > 0.0,
            SurfaceKind::Cylinder { center, axis, radius, half_length } => {
                center.iter().all(|v| v.is_finite())
                    && (axis.norm() - 1.0).abs() < 1e-9
                    && radius > 0.0
                    && half_length > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(format!("bad surface geometry {self:?}")))
        }
    }
}

fn least_aligned_axis(v: &Vector3<f64>) -> Vector3<f64> {
    let a = v.abs();
    if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub kind: SurfaceKind,
    /// Planted RCS field in dBsm over incidence directions.
    pub rcs_field: ShVector,
    /// dBsm.
    pub rcs_noise_sigma: f64,
}

impl Surface {
    /// Noise-free RCS of the world point `x` seen from `pose`.
    pub fn planted_rcs(&self, x: &Vector3<f64>, pose: &Pose) -> Option<f64> {
        sh::incidence_direction(x, &self.kind.anchor(), pose).ok().map(|d| self.field_at(&d))
    }

    pub fn field_at(&self, dir: &IncidenceDirection) -> f64 {
        sh::predict_rcs(&self.rcs_field, dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub surfaces: Vec<Surface>,
    /// Maximum sensing range, m.
    pub extent: f64,
    pub sigma_pos: f64,
    pub sigma_doppler: f64,
}

impl SceneSpec {
    pub fn new(surfaces: Vec<Surface>, extent: f64) -> Self {
        Self { surfaces, extent, sigma_pos: DEFAULT_SIGMA_POS, sigma_doppler: DEFAULT_SIGMA_DOPPLER }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.surfaces.is_empty() {
            return Err(SynthError::InvalidSpec("scene has no surfaces".into()));
        }
        if !(self.extent > MIN_RANGE) {
            return Err(SynthError::InvalidSpec(format!("extent {} too small", self.extent)));
        }
        if !(self.sigma_pos >= 0.0 && self.sigma_doppler >= 0.0) {
            return Err(SynthError::InvalidSpec("noise sigmas must be non-negative".into()));
        }
        for s in &self.surfaces {
            s.kind.validate()?;
            if !(s.rcs_noise_sigma >= 0.0) || !s.rcs_field.is_finite() {
                return Err(SynthError::InvalidSpec("bad RCS field or noise".into()));
            }
        }
        Ok(())
    }

    /// Index of the surface whose anchor is closest to `x`.
    pub fn closest_surface(&self, x: &Vector3<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, s) in self.surfaces.iter().enumerate() {
            let d = (s.kind.anchor() - x).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    /// Straight along the start pose's x axis.
    Line,
    /// Constant-rate left turn of the given radius.
    Arc { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// m/s.
    pub speed: f64,
    /// s.
    pub duration: f64,
    /// Hz.
    pub scan_rate: f64,
    pub start: Pose,
}

impl TrajectorySpec {
    pub fn line(speed: f64, duration: f64, scan_rate: f64) -> Self {
        Self { kind: TrajectoryKind::Line, speed, duration, scan_rate, start: Pose::identity() }
    }

    pub fn arc(radius: f64, speed: f64, duration: f64, scan_rate: f64) -> Self {
        Self { kind: TrajectoryKind::Arc { radius }, ..Self::line(speed, duration, scan_rate) }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.scan_rate > 0.0 && self.scan_rate.is_finite()) {
            return Err(SynthError::InvalidSpec("scan_rate must be positive".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite() && self.speed.is_finite()) {
            return Err(SynthError::InvalidSpec("duration and speed must be finite".into()));
        }
        if let TrajectoryKind::Arc { radius } = self.kind {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(SynthError::InvalidSpec("arc radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Scan times `k / scan_rate` that fall before `duration`.
    pub fn times(&self) -> Vec<f64> {
        let n = (self.duration * self.scan_rate - 1e-9).ceil().max(0.0) as usize;
        (0..n).map(|k| k as f64 / self.scan_rate).collect()
    }

    /// Pose and sensor-frame velocity at time `t`.
    pub fn state_at(&self, t: f64) -> (Pose, Vector3<f64>) {
        let local = match self.kind {
            TrajectoryKind::Line => Pose::from_translation(Vector3::new(self.speed * t, 0.0, 0.0)),
            TrajectoryKind::Arc { radius } => {
                let theta = self.speed * t / radius;
                Pose::from_rotation(
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta),
                    Vector3::new(radius * theta.sin(), radius * (1.0 - theta.cos()), 0.0),
                )
            }
        };
        // both paths move along the sensor's own x axis
        (self.start.compose(&local), Vector3::new(self.speed, 0.0, 0.0))
    }
}

/// Poses sampled at the scan rate with their sensor-frame ego velocities.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<(Pose, Vector3<f64>)>, SynthError> {
    spec.validate()?;
    Ok(spec.times().into_iter().map(|t| spec.state_at(t)).collect())
}

fn is_visible(p: &Vector3<f64>, extent: f64) -> bool {
    let r = p.norm();
    r >= MIN_RANGE && r <= extent && p.x >= r * HALF_FOV_DEG.to_radians().cos()
}

/// Renders one scan. Surfaces are chosen uniformly among those with any
/// visible part, then a visible point is drawn from the chosen surface.
/// RCS follows the planted field at the true incidence direction; Doppler
/// follows the reported bearing.
///
/// Labels are `true` for dynamic returns. Exactly
/// `round(dynamic_fraction · n)` returns are dynamic; their Doppler carries
/// an extra offset of magnitude `U[1, 3]` m/s with random sign.
pub fn render_scan(
    scene: &SceneSpec,
    pose: &Pose,
    ego_velocity: &Vector3<f64>,
    n_points: usize,
    dynamic_fraction: f64,
    seed: u64,
) -> Result<(Scan, Vec<bool>), SynthError> {
    scene.validate()?;
    if !(0.0..=1.0).contains(&dynamic_fraction) {
        return Err(SynthError::InvalidSpec("dynamic_fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visible: Vec<usize> = (0..scene.surfaces.len())
        .filter(|&i| {
            let kind = &scene.surfaces[i].kind;
            (0..VISIBILITY_PROBES)
                .any(|_| is_visible(&pose.inverse_transform_point(&kind.sample(&mut rng)), scene.extent))
        })
        .collect();
    if visible.is_empty() {
        return Err(SynthError::EmptyScan);
    }

    let pos_noise = Normal::new(0.0, scene.sigma_pos).expect("validated sigma");
    let doppler_noise = Normal::new(0.0, scene.sigma_doppler).expect("validated sigma");
    let mut points = Vec::with_capacity(n_points);
    while points.len() < n_points {
        let surface = &scene.surfaces[visible[rng.random_range(0..visible.len())]];
        let world = surface.kind.sample(&mut rng);
        let p = pose.inverse_transform_point(&world);
        if !is_visible(&p, scene.extent) {
            continue;
        }
        let Some(field) = surface.planted_rcs(&world, pose) else {
            continue;
        };
        let rcs = field + surface.rcs_noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let noisy = p + Vector3::from_fn(|_, _| pos_noise.sample(&mut rng));
        let doppler = -noisy.normalize().dot(ego_velocity) + truncated(&doppler_noise, scene.sigma_doppler, &mut rng);
        if let Ok(pt) = RadarPoint::new(noisy, doppler, rcs) {
            points.push(pt);
        }
    }

    let n_dynamic = (dynamic_fraction * n_points as f64).round() as usize;
    let mut labels = vec![false; n_points];
    labels[..n_dynamic].iter_mut().for_each(|l| *l = true);
    labels.shuffle(&mut rng);
    for (pt, _) in points.iter_mut().zip(&labels).filter(|(_, d)| **d) {
        let magnitude = rng.random_range(1.0..=3.0);
        pt.doppler += if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }
    Ok((Scan::new(points, 0.0), labels))
}

/// Gaussian draw redrawn until it lies within `DOPPLER_TRUNCATION` sigmas.
fn truncated(dist: &Normal<f64>, sigma: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let v = dist.sample(rng);
        if v.abs() <= DOPPLER_TRUNCATION * sigma {
            return v;
        }
    }
}

/// A rendered sequence with its ground truth.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub scans: Vec<Scan>,
    pub poses: Vec<Pose>,
    pub velocities: Vec<Vector3<f64>>,
    pub labels: Vec<Vec<bool>>,
}

/// Renders one scan per trajectory sample; scan `k` uses a seed derived from
/// `(seed, k)` and carries timestamp `k / scan_rate`.
pub fn render_sequence(
    scene: &SceneSpec,
    trajectory: &TrajectorySpec,
    n_points: usize,
    dynamic_fraction: f64,
    seed: u64,
) -> Result<Sequence, SynthError> {
    let states = generate_trajectory(trajectory)?;
    let times = trajectory.times();
    let render = |k: usize| {
        let (pose, v) = &states[k];
        render_scan(scene, pose, v, n_points, dynamic_fraction, derive_seed(seed, &[k as u64])).map(
            |(mut scan, labels)| {
                scan.timestamp = times[k];
                (scan, labels)
            },
        )
    };
    #[cfg(feature = "parallel")]
    let rendered: Vec<_> = {
        use rayon::prelude::*;
        (0..states.len()).into_par_iter().map(render).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rendered: Vec<_> = (0..states.len()).map(render).collect();

    let mut seq = Sequence {
        scans: Vec::new(),
        poses: states.iter().map(|s| s.0).collect(),
        velocities: states.iter().map(|s| s.1).collect(),
        labels: Vec::new(),
    };
    for r in rendered {
        let (scan, labels) = r?;
        seq.scans.push(scan);
        seq.labels.push(labels);
    }
    Ok(seq)
}

/// Random field with mean level `base` (dBsm) and per-degree coefficient
/// standard deviations `amplitude[l−1]`.
pub fn random_field(rng: &mut impl Rng, base: f64, amplitude: [f64; 3]) -> ShVector {
    let mut field = ShVector::constant(base);
    for l in 1..=3usize {
        let dist = Normal::new(0.0, amplitude[l - 1]).expect("finite amplitude");
        for m in -(l as i32)..=(l as i32) {
            field.0[sh::index(l, m)] = dist.sample(rng);
        }
    }
    debug_assert_eq!(field.0.len(), NUM_COEFFS);
    field
}

/// Voxel size the presets are laid out for: every surface sits inside one
/// cell of this size.
pub const PRESET_VOXEL: f64 = 2.0;

fn cell_center(i: i64, j: i64, k: i64) -> Vector3<f64> {
    Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * PRESET_VOXEL
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

/// Sparse field of mixed landmarks ahead of the origin, one per cell on a
/// three-cell lattice, at several heights.
pub fn plaza_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut surfaces = Vec::new();
    for i in (3..20).step_by(3) {
        for j in (-7..7).step_by(3) {
            let center = cell_center(i, j, rng.random_range(-1..=1));
            let kind = match rng.random_range(0..3) {
                0 => {
                    let n = random_unit(&mut rng);
                    let u = n.cross(&least_aligned_axis(&n)).normalize();
                    let v = n.cross(&u);
                    SurfaceKind::Plane {
                        center,
                        half_u: u * rng.random_range(0.4..0.65),
                        half_v: v * rng.random_range(0.4..0.65),
                    }
                }
                1 => SurfaceKind::Sphere { center, radius: rng.random_range(0.3..0.6) },
                _ => SurfaceKind::Cylinder {
                    center,
                    axis: random_unit(&mut rng),
                    radius: rng.random_range(0.15..0.3),
                    half_length: rng.random_range(0.4..0.6),
                },
            };
            let base = rng.random_range(-5.0..15.0);
            surfaces.push(Surface {
                kind,
                rcs_field: random_field(&mut rng, base, [4.0, 3.0, 2.0]),
                rcs_noise_sigma: DEFAULT_RCS_NOISE,
            });
        }
    }
    SceneSpec::new(surfaces, 60.0)
}

/// Two rows of spherical reflectors lining the x axis at y = ±3, two
/// heights each, with strongly view-dependent RCS. Each sphere only pins a
/// point and its returns spread over the whole ball, so the geometry holds
/// rotation loosely.
pub fn corridor_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut surfaces = Vec::new();
    for i in 2..24 {
        for j in [-2, 1] {
            for k in -1..=0 {
                let center = cell_center(i, j, k);
                let base = rng.random_range(0.0..10.0);
                surfaces.push(Surface {
                    kind: SurfaceKind::Sphere { center, radius: rng.random_range(0.5..0.8) },
                    rcs_field: random_field(&mut rng, base, [6.0, 5.0, 4.0]),
                    rcs_noise_sigma: DEFAULT_RCS_NOISE,
                });
            }
        }
    }
    SceneSpec::new(surfaces, 50.0)
}

/// Spheres scattered through the field of view of a sensor at the origin
/// looking along x, from 6 to 30 m. Returns span the full elevation range,
/// which keeps every component of the ego-velocity observable.
pub fn scatter_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_max = 50f64.to_radians().cos();
    let surfaces = (0..40)
        .map(|_| {
            let cos_t: f64 = rng.random_range(cos_max..1.0);
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = Vector3::new(cos_t, sin_t * phi.cos(), sin_t * phi.sin());
            let center = dir * rng.random_range(6.0..30.0);
            let base = rng.random_range(-5.0..15.0);
            Surface {
                kind: SurfaceKind::Sphere { center, radius: rng.random_range(0.3..0.8) },
                rcs_field: random_field(&mut rng, base, [4.0, 3.0, 2.0]),
                rcs_noise_sigma: DEFAULT_RCS_NOISE,
            }
        })
        .collect();
    SceneSpec::new(surfaces, 60.0)
}
