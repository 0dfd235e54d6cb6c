//! End-to-end acceptance checks. Runs without the test harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use gauss_rcs::doppler::{estimate_ego_velocity, RansacParams};
use gauss_rcs::matcher::{
    accumulate_system, geometric_residual, match_scan_traced, point_jacobian, rcs_jacobian, rcs_prediction_error,
    rcs_residual, FrozenLinearization, MatchParams,
};
use gauss_rcs::model::{build_model, build_model_report, fit_sh_coefficients, rcs_statistics, ModelConfig};
use gauss_rcs::sh::{self, IncidenceDirection, NUM_COEFFS};
use gauss_rcs::sweep::{run_sweep, success_rate, summarize, NoiseSpec, SweepConfig, TrialRecord, WeightSummary};
use gauss_rcs::synth::{
    corridor_scene, plaza_scene, render_scan, render_sequence, scatter_scene, Sequence, TrajectorySpec, PRESET_VOXEL,
};
use gauss_rcs::{Gaussian, GaussianModel, Pose, RadarPoint, Scan, ShVector, Twist};
use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn relative_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Associated Legendre `P_l^m(x)` with the Condon–Shortley phase, m ≥ 0.
fn legendre(l: usize, m: usize, x: f64) -> f64 {
    let mut pmm = 1.0;
    let s = (1.0 - x * x).max(0.0).sqrt();
    for k in 0..m {
        pmm *= -((2 * k + 1) as f64) * s;
    }
    if l == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = x * (2 * m + 1) as f64 * pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * x * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

/// Real spherical harmonic from its textbook definition in polar angles
/// about z.
fn real_sh(l: usize, m: i32, d: &Vector3<f64>) -> f64 {
    let am = m.unsigned_abs() as usize;
    let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let phi = d.y.atan2(d.x);
    let p = legendre(l, am, d.z.clamp(-1.0, 1.0));
    match m.signum() {
        0 => k * p,
        1 => 2f64.sqrt() * k * (am as f64 * phi).cos() * p,
        _ => 2f64.sqrt() * k * (am as f64 * phi).sin() * p,
    }
}

fn hemisphere_dir(rng: &mut impl Rng) -> IncidenceDirection {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return IncidenceDirection::from_sensor_offset(&v).unwrap();
        }
    }
}

fn sh_plant_and_recover() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let planted: Vec<f64> = (0..NUM_COEFFS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dirs: Vec<_> = (0..200).map(|_| hemisphere_dir(&mut rng)).collect();
    let values: Vec<f64> = dirs
        .iter()
        .map(|d| {
            let mut y = 0.0;
            for l in 0..=3usize {
                for m in -(l as i32)..=(l as i32) {
                    y += planted[sh::index(l, m)] * real_sh(l, m, &d.dir);
                }
            }
            y
        })
        .collect();
    let (fitted, degree) = fit_sh_coefficients(&dirs, &values, 3).map_err(|e| e.to_string())?;
    let err = fitted.0.iter().zip(&planted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(degree == 3 && err < 1e-6, format!("degree {degree}, max coefficient error {err:.2e}"))
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    Pose::exp(&Twist::new(
        Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
        Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
    ))
}

fn random_gaussian(rng: &mut impl Rng, mean: Vector3<f64>) -> Gaussian {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    let cov = a * a.transpose() + Matrix3::identity() * 0.01;
    let coeffs = ShVector(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
    Gaussian::new(mean, cov, 20, rng.random_range(-5.0..5.0), rng.random_range(0.5..3.0), coeffs, 3)
}

/// A return near `g` with in-range RCS, clear of the hemisphere fold.
fn random_return(rng: &mut impl Rng, g: &Gaussian, pose: &Pose) -> RadarPoint {
    loop {
        let world = g.mean + Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8));
        let p = pose.inverse_transform_point(&world);
        let offset = pose.rotation().inverse_transform_vector(&(world - g.mean));
        if offset.norm() < 0.1 || (offset.x / offset.norm()).abs() < 0.05 || p.norm() < 1.0 {
            continue;
        }
        let rcs = g.rcs_median + g.rcs_scale * rng.random_range(-0.95..0.95);
        return RadarPoint::new(p, 0.0, rcs).unwrap();
    }
}

fn nudged(pose: &Pose, k: usize, h: f64) -> Pose {
    let mut d = Vector6::zeros();
    d[k] = h;
    pose.compose(&Pose::exp(&Twist::from_vector(&d)))
}

fn jacobian_suite() -> Outcome {
    const CONFIGS: usize = 1000;
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_geo, mut worst_rcs, mut worst_combined) = (0.0f64, 0.0f64, 0.0f64);

    for _ in 0..CONFIGS {
        let pose = random_pose(&mut rng);
        let mean = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let g = random_gaussian(&mut rng, mean);
        let p = random_return(&mut rng, &g, &pose);

        // geometric: point Jacobian columns and the Mahalanobis cost gradient
        let j = point_jacobian(&p.position, &pose);
        let analytic = geometric_residual(&p, &g, &pose, None).gradient;
        let mut fd_cost = [0.0; 6];
        for k in 0..6 {
            let (plus, minus) = (nudged(&pose, k, H), nudged(&pose, k, -H));
            let fd_point = (plus.transform_point(&p.position) - minus.transform_point(&p.position)) / (2.0 * H);
            worst_geo = worst_geo.max(relative_err(j.column(k).into_owned().as_slice(), fd_point.as_slice()));
            fd_cost[k] = (geometric_residual(&p, &g, &plus, None).cost - geometric_residual(&p, &g, &minus, None).cost)
                / (2.0 * H);
        }
        worst_geo = worst_geo.max(relative_err(analytic.as_slice(), &fd_cost));

        // RCS: rotational block of the prediction-error gradient, fold frozen
        let (_, dir) = rcs_prediction_error(&p, &g, &pose, None).ok_or("return rejected")?;
        let jr = rcs_jacobian(&p, &g, &pose, &dir);
        let mut fd = [0.0; 3];
        for (k, v) in fd.iter_mut().enumerate() {
            let plus = rcs_prediction_error(&p, &g, &nudged(&pose, k + 3, H), Some(dir.flipped)).ok_or("rejected")?;
            let minus = rcs_prediction_error(&p, &g, &nudged(&pose, k + 3, -H), Some(dir.flipped)).ok_or("rejected")?;
            *v = (plus.0 - minus.0) / (2.0 * H);
        }
        worst_rcs = worst_rcs.max(relative_err(&jr.as_slice()[3..], &fd));
        let forced = rcs_residual(&p, &g, &pose, 1.0).ok_or("return rejected")?;
        if forced.gradient.fixed_rows::<3>(0).iter().any(|v| *v != 0.0) {
            return Err("RCS translation gradient is not forced to zero".into());
        }
    }

    for _ in 0..CONFIGS {
        let pose = random_pose(&mut rng);
        let mut gaussians = Vec::new();
        for i in 0..4 {
            for j in 0..3 {
                let mean = Vector3::new(6.0 + 3.0 * i as f64, -3.0 + 3.0 * j as f64, rng.random_range(-1.0..1.0));
                gaussians.push(random_gaussian(&mut rng, mean));
            }
        }
        let model = GaussianModel::new(gaussians, 1.0);
        let points = (0..24).map(|k| random_return(&mut rng, &model.gaussians()[k % model.len()], &pose)).collect();
        let scan = Scan::new(points, 0.0);
        let params = MatchParams {
            w_rcs: rng.random_range(0.0..=1.0),
            cauchy_c: rng.random_range(0.2..2.0),
            ..MatchParams::default()
        };
        let sys = accumulate_system(&scan, &model, &pose, &params).map_err(|e| e.to_string())?;
        let frozen = FrozenLinearization::new(&scan, &model, &pose, &params);
        let mut fd = [0.0; 6];
        for (k, v) in fd.iter_mut().enumerate() {
            let mut d = Vector6::zeros();
            d[k] = H;
            *v = (frozen.cost(&scan, &model, &params, &d) - frozen.cost(&scan, &model, &params, &-d)) / (2.0 * H);
        }
        worst_combined = worst_combined.max(relative_err(sys.g.as_slice(), &fd));
        if (sys.h - sys.h.transpose()).amax() >= 1e-12 {
            return Err("combined Hessian is not symmetric".into());
        }
    }
    let worst = worst_geo.max(worst_rcs).max(worst_combined);
    check(
        worst < 1e-4,
        format!("{CONFIGS} configs each; worst relative error geometric {worst_geo:.1e}, RCS rotation {worst_rcs:.1e}, combined {worst_combined:.1e}"),
    )
}

fn plaza_sequence() -> Sequence {
    let trajectory = TrajectorySpec::arc(30.0, 2.0, 2.0, 10.0);
    render_sequence(&plaza_scene(1), &trajectory, 200, 0.0, 1).expect("plaza renders")
}

fn preset_model(seq: &Sequence) -> GaussianModel {
    let cfg = ModelConfig { voxel_size: PRESET_VOXEL, ..ModelConfig::default() };
    build_model(&seq.scans, &seq.poses, &cfg).expect("model builds")
}

fn sweep_config(model: &GaussianModel, w_values: Vec<f64>, trials: usize, seed: u64) -> SweepConfig {
    SweepConfig {
        w_values,
        trials_per_scan: trials,
        noise: NoiseSpec::default(),
        match_params: MatchParams::for_model(model),
        seed,
    }
}

fn identity_forcing() -> Outcome {
    let seq = plaza_sequence();
    let model = preset_model(&seq);
    let params = MatchParams { w_rcs: 1.0, ..MatchParams::for_model(&model) };
    let mut steps = 0;
    for (k, (scan, truth)) in seq.scans.iter().zip(&seq.poses).enumerate().step_by(4) {
        let initial =
            truth.compose(&Pose::exp(&Twist::new(Vector3::new(0.6, -0.4, 0.3), Vector3::new(0.02, -0.03, 0.04))));
        let (result, trace) = match_scan_traced(scan, &model, &initial, &params).map_err(|e| e.to_string())?;
        for rec in &trace {
            if rec.pose.translation() != initial.translation() {
                return Err(format!("scan {k}: translation moved at iteration {}", rec.iteration));
            }
        }
        if result.pose.translation() != initial.translation() {
            return Err(format!("scan {k}: final translation moved"));
        }
        steps += trace.len();
    }
    let rows =
        run_sweep(&seq.scans, &seq.poses, &model, &sweep_config(&model, vec![1.0], 5, 3)).map_err(|e| e.to_string())?;
    let bad = rows.iter().filter(|r| r.final_trans_err < r.init_trans_err - 1e-9).count();
    check(
        bad == 0,
        format!(
            "{steps} traced steps with unchanged translation; {bad} of {} sweep rows improved translation",
            rows.len()
        ),
    )
}

fn weight_rows(rows: &[TrialRecord], w: f64) -> Vec<TrialRecord> {
    rows.iter().filter(|r| r.w_rcs == w).cloned().collect()
}

fn baseline_convergence() -> Outcome {
    let seq = plaza_sequence();
    let model = preset_model(&seq);
    let cfg = sweep_config(&model, vec![0.0], 5, 1);
    let rows = run_sweep(&seq.scans, &seq.poses, &model, &cfg).map_err(|e| e.to_string())?;
    let rate = success_rate(&rows, 0.1, 0.5);
    check(
        seq.scans.len() >= 20 && rows.len() == 100 && rate >= 0.9,
        format!(
            "{} scans x 200 points, {} trials, {:.0}% within 0.1 m and 0.5 deg",
            seq.scans.len(),
            rows.len(),
            100.0 * rate
        ),
    )
}

fn summary_for(summary: &[WeightSummary], w: f64) -> &WeightSummary {
    summary.iter().find(|s| s.w_rcs == w).expect("weight present")
}

fn directional_rcs_benefit() -> Outcome {
    let seq = render_sequence(&corridor_scene(1), &TrajectorySpec::line(2.0, 2.0, 10.0), 200, 0.0, 1)
        .map_err(|e| e.to_string())?;
    let model = preset_model(&seq);
    let cfg = sweep_config(&model, vec![0.0, 0.25, 1.0], 10, 1);
    let rows = run_sweep(&seq.scans, &seq.poses, &model, &cfg).map_err(|e| e.to_string())?;
    let paired = weight_rows(&rows, 0.25).len();
    let summary = summarize(&rows);
    let (s0, s25, s1) = (summary_for(&summary, 0.0), summary_for(&summary, 0.25), summary_for(&summary, 1.0));
    let rotation_ok = s25.rot.median <= s0.rot.median;
    let worst_translation = [s0, s25].iter().all(|s| s1.trans.median > s.trans.median && s1.trans.mean > s.trans.mean);
    check(
        paired >= 200 && rotation_ok && worst_translation,
        format!(
            "{paired} paired trials; median rotation {:.4} deg (w=0) vs {:.4} deg (w=0.25); median translation w=0 {:.3} m, w=0.25 {:.3} m, w=1 {:.3} m",
            s0.rot.median, s25.rot.median, s0.trans.median, s25.trans.median, s1.trans.median
        ),
    )
}

fn doppler_filter() -> Outcome {
    let scene = scatter_scene(2);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut correct, mut total) = (0usize, 0usize);
    let mut worst_velocity = 0.0f64;
    for k in 0..50u64 {
        let speed: f64 = rng.random_range(0.5..10.0);
        let heading: f64 = rng.random_range(-0.4..0.4);
        let v = Vector3::new(heading.cos(), heading.sin(), rng.random_range(-0.05..0.05)) * speed;
        let (scan, labels) =
            render_scan(&scene, &Pose::identity(), &v, 200, 0.2, 1000 + k).map_err(|e| e.to_string())?;
        let est = estimate_ego_velocity(&scan, &RansacParams { seed: k, ..RansacParams::default() })
            .map_err(|e| format!("scan {k}: {e}"))?;
        worst_velocity = worst_velocity.max((est.velocity - v).norm());
        for (inlier, dynamic) in est.inlier_mask.iter().zip(&labels) {
            correct += (*inlier != *dynamic) as usize;
            total += 1;
        }
    }
    let accuracy = correct as f64 / total as f64;
    check(
        worst_velocity <= 0.05 && accuracy >= 0.95,
        format!(
            "50 scans, worst velocity error {worst_velocity:.4} m/s, classification accuracy {:.2}%",
            100.0 * accuracy
        ),
    )
}

fn normalization_invariant() -> Outcome {
    let s = rcs_statistics(&[1.0, 2.0, 3.0, 10.0]);
    if s.median != 2.5 || s.scale != 1.5 || s.inlier_mask != [true, true, true, false] {
        return Err(format!("worked example gave median {} scale {} mask {:?}", s.median, s.scale, s.inlier_mask));
    }
    let plaza = plaza_sequence();
    let corridor = render_sequence(&corridor_scene(1), &TrajectorySpec::line(2.0, 2.0, 10.0), 200, 0.0, 2)
        .map_err(|e| e.to_string())?;
    let contaminated = render_sequence(&plaza_scene(3), &TrajectorySpec::line(3.0, 1.0, 10.0), 300, 0.2, 4)
        .map_err(|e| e.to_string())?;
    let (mut models, mut values) = (0, 0);
    for seq in [&plaza, &corridor, &contaminated] {
        for voxel in [0.5, 1.0, 2.0, 4.0] {
            let cfg = ModelConfig { voxel_size: voxel, ..ModelConfig::default() };
            let report = build_model_report(&seq.scans, &seq.poses, &cfg).map_err(|e| e.to_string())?;
            for stats in &report.rcs_stats {
                if let Some(v) = stats.normalized.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                    return Err(format!("normalized value {v} outside [-1, 1]"));
                }
                values += stats.normalized.len();
            }
            models += 1;
        }
    }
    check(true, format!("worked example exact; {values} normalized values in {models} models inside [-1, 1]"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gauss-rcs")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let data = data.to_str().ok_or("non-UTF-8 temp path")?;
    run_cli(&["synth", "--scene", "plaza", "--trajectory", "arc", "--duration", "0.6", "--output", data])?;
    let mut outputs = Vec::new();
    for (threads, name) in [("1", "a.csv"), ("1", "b.csv"), ("4", "c.csv")] {
        let out = dir.path().join(name);
        run_cli(&[
            "--threads",
            threads,
            "sweep",
            "--input",
            data,
            "--voxel-size",
            "2",
            "--trials",
            "3",
            "--w-rcs",
            "0",
            "--w-rcs",
            "0.25",
            "--w-rcs",
            "1",
            "--seed",
            "42",
            "--output",
            out.to_str().unwrap(),
        ])?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let rows = outputs[0].iter().filter(|b| **b == b'\n').count() - 1;
    check(
        rows == 6 * 3 * 3 && outputs[0] == outputs[1] && outputs[0] == outputs[2],
        format!(
            "{rows} rows, {} bytes; identical across repeat and 1 vs 4 threads: {}",
            outputs[0].len(),
            outputs[0] == outputs[1] && outputs[0] == outputs[2]
        ),
    )
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "SH plant-and-recover", budget: Some(Duration::from_secs(1)), run: sh_plant_and_recover },
        Criterion { name: "Jacobian suite", budget: Some(Duration::from_secs(30)), run: jacobian_suite },
        Criterion { name: "identity forcing", budget: Some(Duration::from_secs(10)), run: identity_forcing },
        Criterion { name: "baseline convergence", budget: Some(Duration::from_secs(120)), run: baseline_convergence },
        Criterion {
            name: "directional RCS benefit",
            budget: Some(Duration::from_secs(300)),
            run: directional_rcs_benefit,
        },
        Criterion { name: "Doppler filter", budget: Some(Duration::from_secs(10)), run: doppler_filter },
        Criterion { name: "normalization invariant", budget: None, run: normalization_invariant },
        Criterion { name: "sweep determinism", budget: None, run: sweep_determinism },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (pass, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget.unwrap())),
            Err(d) => (false, d),
        };
        failed += !pass as usize;
        println!(
            "{} {}. {}: {} [{:.2} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            c.name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
