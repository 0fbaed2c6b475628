//! `floc`: command-line access to correspondence mining, the training losses,
//! the scenario simulator, ray-based localization and the evaluation harness.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use floc::contrastive::{self, FeatureMap, FeatureOrigin, MatchSet, NceConfig, NegativePool};
use floc::eval::{self, ExperimentConfig, LocalizationRecord, MetricReport, Mode, Pipeline};
use floc::filter::{self, RayLikelihood, ScanCache};
use floc::floorplan::OccupancyGrid;
use floc::geom::{DepthImage, RigidPose3};
use floc::io;
use floc::mining::{self, MatchParams, MineParams};
use floc::obsmodel::{self, OracleParams, ShapeTerm};
use floc::sim::{self, RgbdParams, ScenarioSpec, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "floc", version, about = "Floorplan localization from ray scans")]
struct Cli {
    /// Seed for every generator; overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` config (scenario spec or experiment config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine overlapping frame pairs from an RGB-D sequence.
    Mine(MineArgs),
    /// Crop frustum chunks from a surface cloud and associate pixels with chunk points.
    Chunks(ChunkArgs),
    /// Evaluate a training loss.
    Loss(LossArgs),
    /// Compare the analytic PointInfoNCE gradient with central differences.
    GradCheck(GradCheckArgs),
    /// Generate a floorplan, clutter, trajectory and (optionally) RGB-D frames.
    Simulate(SimulateArgs),
    /// Single-frame localization of one scan.
    Localize(LocalizeArgs),
    /// Histogram-filter tracking along a trajectory.
    Track(TrackArgs),
    /// Tracking with noiseless 72-ray full-circle scans of the floorplan.
    Mcl(TrackArgs),
    /// Run an experiment, or summarize an existing records file.
    Eval(EvalArgs),
    /// Convert a posterior dump to a PGM heatmap.
    Render(RenderArgs),
}

#[derive(Args)]
struct SequenceArgs {
    /// Directory holding `depth_*.png`, `intrinsics.txt` and `poses.txt`.
    #[arg(long)]
    sequence: PathBuf,
}

impl SequenceArgs {
    fn load(&self) -> Result<(floc::geom::CameraIntrinsics, Vec<(DepthImage, RigidPose3)>)> {
        let k = io::read_intrinsics(&self.sequence.join("intrinsics.txt"))?;
        let poses = io::read_poses(&self.sequence.join("poses.txt"))?;
        let mut depth_paths: Vec<PathBuf> = fs::read_dir(&self.sequence)
            .with_context(|| format!("reading {}", self.sequence.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("depth_") && n.ends_with(".png")))
            .collect();
        depth_paths.sort();
        if depth_paths.len() != poses.len() {
            bail!("{} depth images but {} poses", depth_paths.len(), poses.len());
        }
        let frames = depth_paths.iter().zip(poses).map(|(p, pose)| Ok((io::read_depth_png(p)?, pose))).collect::<Result<Vec<_>>>()?;
        Ok((k, frames))
    }
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    seq: SequenceArgs,
    #[arg(long, default_value_t = mining::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = mining::DEFAULT_PIXEL_STRIDE)]
    stride: u32,
    #[arg(long, default_value_t = mining::DEFAULT_MIN_RATIO)]
    min_ratio: f64,
    /// Also write `corr_A_B.csv` for every mined pair.
    #[arg(long)]
    correspondences: bool,
}

#[derive(Args)]
struct ChunkArgs {
    #[command(flatten)]
    seq: SequenceArgs,
    /// Reconstructed surface as an XYZ cloud (defaults to `surface.xyz` in the sequence).
    #[arg(long)]
    surface: Option<PathBuf>,
    #[arg(long, default_value_t = mining::DEFAULT_CHUNK_RESOLUTION)]
    resolution: f64,
    #[arg(long, default_value_t = mining::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = mining::DEFAULT_PIXEL_STRIDE)]
    stride: u32,
}

#[derive(Args)]
struct LossArgs {
    #[command(subcommand)]
    kind: LossKind,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Matched,
    ExcludeSelf,
    All,
}

impl From<PoolArg> for NegativePool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Matched => NegativePool::Matched,
            PoolArg::ExcludeSelf => NegativePool::MatchedExcludingSelf,
            PoolArg::All => NegativePool::AllTargets,
        }
    }
}

#[derive(Subcommand)]
enum LossKind {
    /// PointInfoNCE between two feature dumps (`FEAT` files) and a match list.
    Nce {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// CSV `a,b` of matched row indices.
        #[arg(long)]
        matches: PathBuf,
        #[arg(long, default_value_t = contrastive::DEFAULT_TEMPERATURE)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = PoolArg::Matched)]
        pool: PoolArg,
    },
    /// Ray loss between a predicted and a target scan CSV.
    Floc {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Add the cosine instead of subtracting it from one.
        #[arg(long)]
        loss_literal: bool,
    },
}

#[derive(Args)]
struct GradCheckArgs {
    /// Feature dumps and matches; a random instance is drawn when omitted.
    #[arg(long, requires_all = ["b", "matches"])]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    matches: Option<PathBuf>,
    #[arg(long, default_value_t = contrastive::DEFAULT_TEMPERATURE)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = PoolArg::Matched)]
    pool: PoolArg,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    /// Random instances to check when no files are given.
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

#[derive(Args, Clone, Copy)]
struct NoiseArgs {
    /// Gaussian range noise in meters.
    #[arg(long)]
    sigma_m: Option<f64>,
    /// Probability that a ray drops out to max range.
    #[arg(long)]
    dropout: Option<f64>,
}

impl NoiseArgs {
    fn apply(&self, p: &mut OracleParams) {
        if let Some(s) = self.sigma_m {
            p.sigma = s;
        }
        if let Some(d) = self.dropout {
            p.dropout = d;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    noise: NoiseArgs,
    /// Also render depth frames, intrinsics, poses and the surface cloud.
    #[arg(long)]
    rgbd: bool,
}

#[derive(Args)]
struct MapArgs {
    /// Floorplan raster (PGM or PNG); the sidecar defaults to the same stem with `.txt`.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    map_meta: Option<PathBuf>,
    #[arg(long, default_value_t = filter::DEFAULT_ORIENTATIONS)]
    orientations: usize,
    #[arg(long, default_value_t = filter::DEFAULT_LAMBDA_DEPTH)]
    lambda_depth: f64,
    #[arg(long, default_value_t = filter::DEFAULT_LAMBDA_SHAPE)]
    lambda_shape: f64,
    #[arg(long, default_value_t = floc::floorplan::DEFAULT_MAX_RANGE)]
    max_range: f64,
}

impl MapArgs {
    fn load(&self) -> Result<OccupancyGrid> {
        let meta = self.map_meta.clone().unwrap_or_else(|| self.map.with_extension("txt"));
        let mask = self.map.with_extension("unknown.pgm");
        Ok(io::read_floorplan(&self.map, &meta, mask.exists().then_some(mask.as_path()))?)
    }

    fn likelihood(&self) -> RayLikelihood {
        RayLikelihood { lambda_depth: self.lambda_depth, lambda_shape: self.lambda_shape }
    }
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    map: MapArgs,
    /// Scan CSV `angle_rad,depth_m`.
    #[arg(long)]
    scan: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    map: MapArgs,
    /// `trajectory.csv` as written by `simulate`.
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    sigma_trans: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_rot: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Tracking,
    Mcl,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Oracle,
    Fused,
    Single,
}

#[derive(Args)]
struct EvalArgs {
    /// Summarize this records CSV instead of running an experiment.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pipeline: Option<PipelineArg>,
    /// Fusion weight of the single-frame prediction.
    #[arg(long)]
    omega: Option<f64>,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    posterior: PathBuf,
    /// Output PGM (defaults to `heatmap.pgm` in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Mine(a) => mine(&cli, a),
        Command::Chunks(a) => chunks(&cli, a),
        Command::Loss(a) => loss(a),
        Command::GradCheck(a) => grad_check(&cli, a),
        Command::Simulate(a) => simulate(&cli, a),
        Command::Localize(a) => localize(&cli, a),
        Command::Track(a) => track(&cli, a, false),
        Command::Mcl(a) => track(&cli, a, true),
        Command::Eval(a) => evaluate(&cli, a),
        Command::Render(a) => render(&cli, a),
    }
}

fn mine(cli: &Cli, a: &MineArgs) -> Result<()> {
    let (k, frames) = a.seq.load()?;
    let matching = MatchParams { threshold: a.threshold, stride: a.stride };
    let pairs = mining::mine_pairs(&frames, &k, &MineParams { matching, min_ratio: a.min_ratio, frame_stride: 1 })?;
    io::write_pairs(&cli.out_dir.join("pairs.csv"), &pairs)?;
    if a.correspondences {
        for p in &pairs {
            let (fa, fb) = (&frames[p.frame_a], &frames[p.frame_b]);
            let mut set = mining::find_correspondences(&fa.0, &fb.0, &k, &fa.1, &fb.1, &matching)?;
            set.frames = (p.frame_a, p.frame_b);
            io::write_correspondences(&cli.out_dir.join(format!("corr_{:04}_{:04}.csv", p.frame_a, p.frame_b)), &set)?;
        }
    }
    println!("{} frames, {} pairs with ratio >= {}", frames.len(), pairs.len(), a.min_ratio);
    Ok(())
}

fn chunks(cli: &Cli, a: &ChunkArgs) -> Result<()> {
    let (k, frames) = a.seq.load()?;
    let surface_path = a.surface.clone().unwrap_or_else(|| a.seq.sequence.join("surface.xyz"));
    let surface = floc::geom::PointCloud::from_points(io::read_xyz(&surface_path)?);
    let params = MatchParams { threshold: a.threshold, stride: a.stride };
    for (i, (depth, pose)) in frames.iter().enumerate() {
        let chunk = mining::crop_frustum_chunk(&surface, &k, pose, depth, a.resolution)?;
        io::write_xyz(&cli.out_dir.join(format!("chunk_{i:04}.xyz")), &chunk.points.points)?;
        let assoc = mining::associate_pixels_points(depth, &k, pose, &chunk, &params)?;
        let mut csv = String::from("u,v,point\n");
        for ((u, v), j) in &assoc.pairs {
            csv.push_str(&format!("{u},{v},{j}\n"));
        }
        io::write_text(&cli.out_dir.join(format!("assoc_{i:04}.csv")), &csv)?;
        println!("frame {i}: {} chunk points, {} associations", chunk.points.len(), assoc.pairs.len());
    }
    Ok(())
}

fn loss(a: &LossArgs) -> Result<()> {
    match &a.kind {
        LossKind::Nce { a, b, matches, tau, pool } => {
            let fa = io::read_features(a, FeatureOrigin::Pixel)?;
            let fb = io::read_features(b, FeatureOrigin::Point)?;
            let m = io::read_matches(matches)?;
            let cfg = NceConfig { temperature: *tau, pool: (*pool).into() };
            println!("{}", contrastive::point_info_nce(&fa, &fb, &m, &cfg)?);
        }
        LossKind::Floc { pred, target, loss_literal } => {
            let shape = if *loss_literal { ShapeTerm::Literal } else { ShapeTerm::Corrected };
            let l = obsmodel::floc_loss(&io::read_scan(pred)?, &io::read_scan(target)?, obsmodel::DEFAULT_EPSILON, shape)?;
            println!("l1 {}\nshape {}\ntotal {}", l.l1, l.shape, l.total());
        }
    }
    Ok(())
}

fn random_instance(rng: &mut ChaCha8Rng) -> Result<(FeatureMap, FeatureMap, MatchSet)> {
    let dim = rng.random_range(2..9);
    let (na, nb) = (rng.random_range(2..12), rng.random_range(2..12));
    let mut rows = |n: usize| -> Vec<f64> { (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let a = FeatureMap::new(dim, rows(na), FeatureOrigin::Pixel)?.normalized();
    let b = FeatureMap::new(dim, rows(nb), FeatureOrigin::Point)?.normalized();
    let mut targets: Vec<usize> = (0..nb).collect();
    let m = rng.random_range(1..=na.min(nb));
    for i in 0..m {
        let j = rng.random_range(i..nb);
        targets.swap(i, j);
    }
    let pairs = (0..m).map(|n| (rng.random_range(0..na), targets[n])).collect();
    Ok((a, b, MatchSet::new(pairs)))
}

/// Norm-wise relative gap between analytic and numeric gradients.
fn gradient_gap(a: &FeatureMap, b: &FeatureMap, m: &MatchSet, cfg: &NceConfig, h: f64) -> Result<f64> {
    let (ga, gb) = contrastive::point_info_nce_grad(a, b, m, cfg)?;
    let split = a.data().len();
    let mut x: Vec<f64> = a.data().iter().chain(b.data()).copied().collect();
    let f = |x: &[f64]| -> Result<f64> {
        let pa = FeatureMap::new(a.dim(), x[..split].to_vec(), FeatureOrigin::Pixel)?;
        let pb = FeatureMap::new(b.dim(), x[split..].to_vec(), FeatureOrigin::Point)?;
        Ok(contrastive::point_info_nce(&pa, &pb, m, cfg)?)
    };
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (i, g) in ga.iter().chain(&gb).enumerate() {
        let x0 = x[i];
        x[i] = x0 + h;
        let up = f(&x)?;
        x[i] = x0 - h;
        let down = f(&x)?;
        x[i] = x0;
        let numeric = (up - down) / (2.0 * h);
        diff = diff.max((g - numeric).abs());
        norm = norm.max(numeric.abs());
    }
    Ok(diff / norm.max(1e-12))
}

fn grad_check(cli: &Cli, a: &GradCheckArgs) -> Result<()> {
    let cfg = NceConfig { temperature: a.tau, pool: a.pool.into() };
    let worst = match (&a.a, &a.b, &a.matches) {
        (Some(pa), Some(pb), Some(pm)) => {
            let fa = io::read_features(pa, FeatureOrigin::Pixel)?;
            let fb = io::read_features(pb, FeatureOrigin::Point)?;
            gradient_gap(&fa, &fb, &io::read_matches(pm)?, &cfg, a.step)?
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let mut worst = 0.0f64;
            for _ in 0..a.instances {
                let (fa, fb, m) = random_instance(&mut rng)?;
                worst = worst.max(gradient_gap(&fa, &fb, &m, &cfg, a.step)?);
            }
            worst
        }
    };
    let verdict = if worst < 1e-4 { "ok" } else { "MISMATCH" };
    println!("max relative gradient error {worst:.3e} ({verdict})");
    if worst >= 1e-4 {
        bail!("gradient check failed");
    }
    Ok(())
}

fn read_config_kv(cli: &Cli) -> Result<(BTreeMap<String, String>, PathBuf)> {
    match &cli.config {
        Some(p) => Ok((io::read_kv(p)?, p.clone())),
        None => Ok((BTreeMap::new(), PathBuf::from("<defaults>"))),
    }
}

/// Scenario keys may sit at top level or under `[scenario]`.
fn scenario_spec(cli: &Cli) -> Result<ScenarioSpec> {
    let (kv, path) = read_config_kv(cli)?;
    let mut spec = ScenarioSpec::default();
    io::apply_scenario_kv(&mut spec, &kv, &path)?;
    let nested: BTreeMap<String, String> = kv.iter().filter_map(|(k, v)| k.strip_prefix("scenario.").map(|k| (k.to_string(), v.clone()))).collect();
    io::apply_scenario_kv(&mut spec, &nested, &path)?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let spec = scenario_spec(cli)?;
    let mut obs = OracleParams::default();
    a.noise.apply(&mut obs);
    let sc = sim::gen_scenario(&spec, &obs)?;
    let out = &cli.out_dir;
    io::write_floorplan(&out.join("floorplan.pgm"), &out.join("floorplan.txt"), &sc.grid)?;
    io::write_floorplan(&out.join("cluttered.pgm"), &out.join("cluttered.txt"), &sc.cluttered)?;
    io::write_trajectory(out, &sc.trajectory)?;
    io::write_text(&out.join("scenario.cfg"), &io::scenario_spec_text(&spec))?;
    if a.rgbd {
        let params = RgbdParams::default();
        let seq = sim::gen_rgbd_sequence(&spec, &params)?;
        for (i, (d, _)) in seq.frames.iter().enumerate() {
            io::write_depth_png(&out.join(format!("depth_{i:04}.png")), d)?;
        }
        let poses: Vec<RigidPose3> = seq.frames.iter().map(|f| f.1).collect();
        io::write_poses(&out.join("poses.txt"), &poses)?;
        io::write_intrinsics(&out.join("intrinsics.txt"), &seq.intrinsics)?;
        io::write_xyz(&out.join("surface.xyz"), &seq.surface.points)?;
    }
    println!("scenario seed {}: {}x{} cells, {} steps -> {}", spec.seed, sc.grid.width(), sc.grid.height(), sc.trajectory.len(), out.display());
    Ok(())
}

fn localize(cli: &Cli, a: &LocalizeArgs) -> Result<()> {
    let grid = a.map.load()?;
    let scan = io::read_scan(&a.scan)?;
    let res = filter::single_frame_localize(&grid, &scan, a.map.orientations, &a.map.likelihood(), a.map.max_range)?;
    io::write_posterior(&cli.out_dir.join("posterior.post"), &res.volume)?;
    io::write_heatmap_pgm(&cli.out_dir.join("posterior.pgm"), &res.volume)?;
    println!("x {:.4} y {:.4} phi {:.4}", res.best.x, res.best.y, res.best.phi);
    Ok(())
}

fn summarize(records: &[LocalizationRecord], out: &Path) -> Result<()> {
    let report = MetricReport::from_records(records, &eval::default_thresholds())?;
    io::write_text(&out.join("report.csv"), &report.to_csv())?;
    io::write_text(&out.join("report.txt"), &report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn track(cli: &Cli, a: &TrackArgs, mcl: bool) -> Result<()> {
    let grid = a.map.load()?;
    let traj: Trajectory = io::read_trajectory(&a.trajectory)?;
    let cfg = ExperimentConfig {
        orientations: a.map.orientations,
        likelihood: a.map.likelihood(),
        sigma_trans: a.sigma_trans,
        sigma_rot: a.sigma_rot,
        obs: OracleParams { max_range: a.map.max_range, ..Default::default() },
        ..Default::default()
    };
    let res = if mcl {
        eval::mcl_baseline(&grid, &traj, eval::MCL_RAYS, &cfg, 0)?
    } else {
        let cache = ScanCache::new(Arc::new(grid.clone()), cfg.orientations);
        let out = filter::track_cached(&cache, &traj.track_inputs(cfg.sigma_trans, cfg.sigma_rot), &cfg.likelihood, cfg.obs.max_range)?;
        let records = out.steps.iter().enumerate().map(|(k, s)| LocalizationRecord { seq: 0, step: k, estimate: s.estimate, gt: traj.poses[k] }).collect();
        eval::SequenceResult { records, posterior: out.posterior }
    };
    io::write_records(&cli.out_dir.join("records.csv"), &res.records)?;
    io::write_posterior(&cli.out_dir.join("posterior.post"), &res.posterior)?;
    io::write_heatmap_pgm(&cli.out_dir.join("posterior.pgm"), &res.posterior)?;
    summarize(&res.records, &cli.out_dir)
}

fn evaluate(cli: &Cli, a: &EvalArgs) -> Result<()> {
    if let Some(path) = &a.records {
        let records = io::read_records(path)?;
        summarize(&records, &cli.out_dir)?;
        let mut csv = String::from("step,sr_1m\n");
        for (k, v) in eval::success_curve(&records, 1.0) {
            csv.push_str(&format!("{k},{v}\n"));
        }
        io::write_text(&cli.out_dir.join("curve.csv"), &csv)?;
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => io::read_experiment_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.scenario.seed = s;
    }
    if let Some(n) = a.scenarios {
        cfg.scenarios = n;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Single => Mode::SingleFrame,
            ModeArg::Tracking => Mode::Tracking,
            ModeArg::Mcl => Mode::Mcl,
        };
    }
    let omega = a.omega.or(match cfg.pipeline {
        Pipeline::Fused { omega } => Some(omega),
        _ => None,
    });
    match a.pipeline {
        Some(PipelineArg::Oracle) => cfg.pipeline = Pipeline::Oracle,
        Some(PipelineArg::Single) => cfg.pipeline = Pipeline::SingleOnly,
        Some(PipelineArg::Fused) => cfg.pipeline = Pipeline::Fused { omega: omega.unwrap_or(0.5) },
        None => {
            if let Some(omega) = a.omega {
                cfg.pipeline = Pipeline::Fused { omega };
            }
        }
    }
    a.noise.apply(&mut cfg.obs);
    cfg.out_dir = Some(cli.out_dir.clone());
    let res = eval::run_experiment(&cfg)?;
    print!("{}", res.report.to_text());
    Ok(())
}

fn render(cli: &Cli, a: &RenderArgs) -> Result<()> {
    let dump = io::read_posterior(&a.posterior)?;
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("heatmap.pgm"));
    io::write_pgm(&out, dump.width, dump.height, &io::heatmap_bytes(&dump))?;
    println!("{}x{} heatmap -> {}", dump.width, dump.height, out.display());
    Ok(())
}
