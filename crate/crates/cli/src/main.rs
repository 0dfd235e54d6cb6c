use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gauss_rcs::doppler::{estimate_ego_velocity, filter_dynamic, RansacParams};
use gauss_rcs::io;
use gauss_rcs::matcher::{match_scan, MatchParams};
use gauss_rcs::model::build_model;
use gauss_rcs::sweep::{perturb_pose, run_sweep, summarize, NoiseSpec, SweepConfig, WeightSummary};
use gauss_rcs::synth::{corridor_scene, plaza_scene, render_sequence, scatter_scene, TrajectorySpec};
use gauss_rcs::{pose_error, GaussianModel, ModelConfig, Pose, Scan};
use nalgebra::{Quaternion, Vector3};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

const POSE_FILE: &str = "poses.txt";

/// Gaussian radar maps with view-dependent RCS, and scan matching against them.
#[derive(Parser)]
#[command(name = "gauss-rcs", version)]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into scan files and a pose file.
    Synth(SynthArgs),
    /// Drop moving returns from every scan using the Doppler ego-velocity fit.
    Filter(FilterArgs),
    /// Build a Gaussian model from scans and their poses.
    Build(BuildArgs),
    /// Register one scan against a model.
    Match(MatchArgs),
    /// Perturb every scan's true pose, match under each w_rcs and write one
    /// CSV row per trial.
    Sweep(SweepArgs),
    /// Per-w_rcs statistics of a sweep CSV.
    Summarize(SummarizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Plaza,
    Corridor,
    Scatter,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathKind {
    Line,
    Arc,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "plaza")]
    scene: SceneKind,
    /// Seed of the scene layout and planted fields.
    #[arg(long, default_value_t = 1)]
    scene_seed: u64,
    /// Seed of the sampled returns.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "line")]
    trajectory: PathKind,
    /// Turning radius of an arc trajectory, m.
    #[arg(long, default_value_t = 30.0)]
    arc_radius: f64,
    /// m/s
    #[arg(long, default_value_t = 2.0)]
    speed: f64,
    /// s
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Hz
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    /// Returns per scan.
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = 0.0)]
    dynamic_fraction: f64,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// Directory of scan files.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; the pose file is copied along.
    #[arg(long)]
    output: PathBuf,
    /// Inlier Doppler threshold, m/s.
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    ransac_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    /// m
    #[arg(long, default_value_t = 1.0)]
    voxel_size: f64,
    #[arg(long, default_value_t = 10)]
    min_points: usize,
    #[arg(long, default_value_t = 3)]
    max_degree: usize,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            voxel_size: self.voxel_size,
            min_points_per_gaussian: self.min_points,
            max_degree: self.max_degree,
            ..ModelConfig::default()
        }
    }
}

#[derive(Args)]
struct MatcherArgs {
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Cauchy scale of the RCS residuals.
    #[arg(long, default_value_t = 1.0)]
    cauchy_c: f64,
    /// Association radius, m (default: twice the model voxel size).
    #[arg(long)]
    radius: Option<f64>,
}

impl MatcherArgs {
    fn params(&self, model: &GaussianModel, w_rcs: f64) -> MatchParams {
        let base = MatchParams::for_model(model);
        MatchParams {
            w_rcs,
            max_iterations: self.max_iters,
            cauchy_c: self.cauchy_c,
            association_radius: self.radius.unwrap_or(base.association_radius),
            ..base
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Directory of scan files.
    #[arg(long)]
    input: PathBuf,
    /// Pose file, one line per scan index (default: poses.txt in the input).
    #[arg(long)]
    poses: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Model file to write.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    /// Largest initial translation offset, m.
    #[arg(long, default_value_t = 2.0)]
    noise_trans: f64,
    /// Largest initial rotation offset, degrees.
    #[arg(long, default_value_t = 5.0)]
    noise_rot: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MatchArgs {
    /// Scan file.
    #[arg(long)]
    scan: PathBuf,
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Pose file holding the true pose of the scan.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Line of the pose file to use (default: the index in the scan name).
    #[arg(long)]
    index: Option<usize>,
    /// Initial pose `tx ty tz qx qy qz qw`. Without it the true pose is
    /// perturbed, or the identity is used when no pose file is given.
    #[arg(long, num_args = 7, allow_negative_numbers = true)]
    init: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    w_rcs: f64,
    #[command(flatten)]
    matcher: MatcherArgs,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Prebuilt model; otherwise one is built from all input scans.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    model_config: ModelArgs,
    #[command(flatten)]
    matcher: MatcherArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long = "w-rcs", default_values_t = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0])]
    w_rcs: Vec<f64>,
    /// Perturbation trials per scan and weight.
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// CSV to write (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Sweep CSV.
    input: PathBuf,
    /// Also write the per-weight aggregates as CSV.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Filter(a) => filter(a),
        Command::Build(a) => build(a),
        Command::Match(a) => run_match(a),
        Command::Sweep(a) => sweep(a),
        Command::Summarize(a) => run_summarize(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let scene = match a.scene {
        SceneKind::Plaza => plaza_scene(a.scene_seed),
        SceneKind::Corridor => corridor_scene(a.scene_seed),
        SceneKind::Scatter => scatter_scene(a.scene_seed),
    };
    let trajectory = match a.trajectory {
        PathKind::Line => TrajectorySpec::line(a.speed, a.duration, a.rate),
        PathKind::Arc => TrajectorySpec::arc(a.arc_radius, a.speed, a.duration, a.rate),
    };
    let seq = render_sequence(&scene, &trajectory, a.points, a.dynamic_fraction, a.seed)?;
    fs::create_dir_all(&a.output)?;
    for (k, scan) in seq.scans.iter().enumerate() {
        io::save_scan(&a.output.join(io::scan_file_name(k)), scan)?;
    }
    let stamped: Vec<_> = seq.scans.iter().map(|s| s.timestamp).zip(seq.poses.iter().copied()).collect();
    io::save_poses(&a.output.join(POSE_FILE), &stamped)?;
    eprintln!("wrote {} scans to {}", seq.scans.len(), a.output.display());
    Ok(())
}

fn filter(a: FilterArgs) -> Result<()> {
    let params = RansacParams {
        iterations: a.ransac_iters,
        inlier_threshold: a.threshold,
        seed: a.seed,
        ..RansacParams::default()
    };
    fs::create_dir_all(&a.output)?;
    println!("scan vx vy vz inlier_ratio kept total");
    let files = io::list_scans(&a.input).with_context(|| format!("listing {}", a.input.display()))?;
    for (k, path) in files {
        let scan = io::load_scan(&path, 0.0)?;
        let est = estimate_ego_velocity(&scan, &params).with_context(|| format!("{}", path.display()))?;
        let kept = filter_dynamic(&scan, &est);
        let v = est.velocity;
        println!("{k} {:.4} {:.4} {:.4} {:.3} {} {}", v.x, v.y, v.z, est.inlier_ratio, kept.len(), scan.len());
        io::save_scan(&a.output.join(io::scan_file_name(k)), &kept)?;
    }
    let poses = a.input.join(POSE_FILE);
    if poses.exists() {
        fs::copy(&poses, a.output.join(POSE_FILE))?;
    }
    Ok(())
}

/// Scans of a directory with their poses; pose line `i` belongs to
/// `scan_<i>.csv`.
fn load_dataset(data: &DataArgs) -> Result<(Vec<Scan>, Vec<Pose>)> {
    let pose_path = data.poses.clone().unwrap_or_else(|| data.input.join(POSE_FILE));
    let stamped = io::load_poses(&pose_path).with_context(|| format!("reading {}", pose_path.display()))?;
    let files = io::list_scans(&data.input).with_context(|| format!("listing {}", data.input.display()))?;
    ensure!(!files.is_empty(), "no scan files in {}", data.input.display());
    let mut scans = Vec::with_capacity(files.len());
    let mut poses = Vec::with_capacity(files.len());
    for (k, path) in files {
        let Some(&(ts, pose)) = stamped.get(k) else {
            bail!("{} has no pose line {k} for {}", pose_path.display(), path.display());
        };
        scans.push(io::load_scan(&path, ts)?);
        poses.push(pose);
    }
    Ok((scans, poses))
}

fn build(a: BuildArgs) -> Result<()> {
    let (scans, poses) = load_dataset(&a.data)?;
    let model = build_model(&scans, &poses, &a.model.config())?;
    io::save_model(&a.output, &model)?;
    eprintln!("{} gaussians from {} scans", model.len(), scans.len());
    Ok(())
}

fn scan_index(path: &Path) -> Option<usize> {
    path.file_name()?.to_str()?.strip_prefix("scan_")?.strip_suffix(".csv")?.parse().ok()
}

fn pose_line(p: &Pose) -> String {
    let t = p.translation();
    let q = p.rotation().quaternion();
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)
}

fn run_match(a: MatchArgs) -> Result<()> {
    let model = io::load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let truth = match &a.poses {
        Some(path) => {
            let k = a
                .index
                .or_else(|| scan_index(&a.scan))
                .context("pass --index for a scan file not named scan_<index>.csv")?;
            let poses = io::load_poses(path).with_context(|| format!("reading {}", path.display()))?;
            Some(*poses.get(k).with_context(|| format!("{} has no line {k}", path.display()))?)
        }
        None => None,
    };
    let timestamp = truth.map_or(0.0, |(ts, _)| ts);
    let scan = io::load_scan(&a.scan, timestamp).with_context(|| format!("reading {}", a.scan.display()))?;
    let initial = match (&a.init, truth) {
        (Some(v), _) => {
            let q = Quaternion::new(v[6], v[3], v[4], v[5]);
            ensure!(q.norm() > 1e-12, "initial quaternion is zero");
            Pose::new(q, Vector3::new(v[0], v[1], v[2]))
        }
        (None, Some((_, t))) => perturb_pose(&t, a.noise.noise_trans, a.noise.noise_rot, a.noise.seed),
        (None, None) => Pose::identity(),
    };
    let params = a.matcher.params(&model, a.w_rcs);
    let r = match_scan(&scan, &model, &initial, &params)?;
    println!("converged   {}", r.converged);
    println!("iterations  {}", r.iterations);
    println!("final_cost  {:.6e}", r.final_cost);
    println!("geo_rms     {:.6}", r.geo_rms);
    println!("rcs_rms     {:.6}", r.rcs_rms);
    println!("initial     {}", pose_line(&initial));
    println!("pose        {}", pose_line(&r.pose));
    if let Some((_, t)) = truth {
        let (it, ir) = pose_error(&initial, &t);
        let (ft, fr) = pose_error(&r.pose, &t);
        println!("init_error  {it:.6} m {ir:.6} deg");
        println!("final_error {ft:.6} m {fr:.6} deg");
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (scans, poses) = load_dataset(&a.data)?;
    let model = match &a.model {
        Some(path) => io::load_model(path).with_context(|| format!("reading {}", path.display()))?,
        None => build_model(&scans, &poses, &a.model_config.config())?,
    };
    let cfg = SweepConfig {
        w_values: a.w_rcs.clone(),
        trials_per_scan: a.trials,
        noise: NoiseSpec { max_trans: a.noise.noise_trans, max_rot: a.noise.noise_rot },
        match_params: a.matcher.params(&model, 0.0),
        seed: a.noise.seed,
    };
    let rows = run_sweep(&scans, &poses, &model, &cfg)?;
    match &a.output {
        Some(path) => {
            let mut f = std::io::BufWriter::new(fs::File::create(path)?);
            io::write_records(&mut f, &rows)?;
            f.flush()?;
            eprintln!("{} rows to {}", rows.len(), path.display());
        }
        None => io::write_records(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

const AGGREGATE_HEADER: &str =
    "w_rcs,trials,trans_mean,trans_median,trans_p90,rot_mean,rot_median,rot_p90,convergence_rate";

fn aggregate_row(s: &WeightSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        s.w_rcs,
        s.trials,
        s.trans.mean,
        s.trans.median,
        s.trans.p90,
        s.rot.mean,
        s.rot.median,
        s.rot.p90,
        s.convergence_rate
    )
}

fn run_summarize(a: SummarizeArgs) -> Result<()> {
    let file = fs::File::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let records = io::read_records(file)?;
    ensure!(!records.is_empty(), "{} holds no rows", a.input.display());
    let summary = summarize(&records);
    println!(
        "{:>6} {:>6} | {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} | {:>5}",
        "w_rcs", "trials", "t_mean", "t_median", "t_p90", "r_mean", "r_median", "r_p90", "conv"
    );
    println!("{:>6} {:>6} | {:>29} | {:>29} |", "", "", "translation error (m)", "rotation error (deg)");
    for s in &summary {
        println!(
            "{:>6.3} {:>6} | {:>9.4} {:>9.4} {:>9.4} | {:>9.4} {:>9.4} {:>9.4} | {:>5.3}",
            s.w_rcs,
            s.trials,
            s.trans.mean,
            s.trans.median,
            s.trans.p90,
            s.rot.mean,
            s.rot.median,
            s.rot.p90,
            s.convergence_rate
        );
    }
    if let Some(path) = &a.output {
        let mut text = String::from(AGGREGATE_HEADER);
        text.push('\n');
        for s in &summary {
            text.push_str(&aggregate_row(s));
            text.push('\n');
        }
        fs::write(path, text)?;
    }
    Ok(())
}
