//! Localization metrics and experiment orchestration.
//!
//! Reports take success rates from each sequence's final-step record;
//! `success_rate` itself counts whatever records it is given.
//! `RMSE (Succ)` averages squared positional errors over successful sequences
//! only, starting at each sequence's first step inside the success radius.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::filter::{self, FilterError, PosteriorGrid, RayLikelihood, ScanCache, TrackInput};
use crate::floorplan::{self, OccupancyGrid, Pose2, RayScan};
use crate::obsmodel::{self, DistributionObserver, FusionMode, ObsError, ObservationSource, OracleObserver, OracleParams};
use crate::sim::{self, Scenario, ScenarioSpec, SimError, Trajectory};

pub const MCL_RAYS: usize = 72;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records")]
    EmptyRecords,
    #[error("no successful sequences")]
    NoSuccesses,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationRecord {
    pub seq: usize,
    pub step: usize,
    pub estimate: Pose2,
    pub gt: Pose2,
}

impl LocalizationRecord {
    pub fn position_error(&self) -> f64 {
        self.estimate.distance(&self.gt)
    }

    /// Absolute heading error in `[0, pi]`.
    pub fn angle_error(&self) -> f64 {
        self.estimate.angle_error(&self.gt)
    }
}

/// The last-step record of every sequence, ordered by sequence id.
pub fn final_records(records: &[LocalizationRecord]) -> Vec<LocalizationRecord> {
    let mut last: BTreeMap<usize, LocalizationRecord> = BTreeMap::new();
    for r in records {
        match last.get(&r.seq) {
            Some(prev) if prev.step >= r.step => {}
            _ => {
                last.insert(r.seq, *r);
            }
        }
    }
    last.into_values().collect()
}

pub fn success_rate(records: &[LocalizationRecord], radius: f64, max_angle: Option<f64>) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let hits = records
        .iter()
        .filter(|r| r.position_error() <= radius && max_angle.is_none_or(|a| r.angle_error() <= a))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmseMode {
    Succ,
    All,
}

pub fn rmse(records: &[LocalizationRecord], mode: RmseMode, success_radius: f64) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut by_seq: BTreeMap<usize, Vec<&LocalizationRecord>> = BTreeMap::new();
    for r in records {
        by_seq.entry(r.seq).or_default().push(r);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for seq in by_seq.values_mut() {
        seq.sort_by_key(|r| r.step);
        let errs: Vec<f64> = seq.iter().map(|r| r.position_error()).collect();
        let window = match mode {
            RmseMode::All => &errs[..],
            RmseMode::Succ => {
                if *errs.last().expect("nonempty") > success_radius {
                    continue;
                }
                let first = errs.iter().position(|e| *e <= success_radius).expect("final step succeeds");
                &errs[first..]
            }
        };
        sum += window.iter().map(|e| e * e).sum::<f64>();
        n += window.len();
    }
    if n == 0 {
        return Err(EvalError::NoSuccesses);
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub radius: f64,
    pub max_angle: Option<f64>,
}

impl Threshold {
    pub fn label(&self) -> String {
        match self.max_angle {
            Some(a) => format!("SR@{}m{}deg", self.radius, (a.to_degrees() * 1e6).round() / 1e6),
            None => format!("SR@{}m", self.radius),
        }
    }
}

pub fn default_thresholds() -> Vec<Threshold> {
    let mut t: Vec<Threshold> = [0.1, 0.2, 0.5, 1.0].iter().map(|&radius| Threshold { radius, max_angle: None }).collect();
    t.push(Threshold { radius: 1.0, max_angle: Some(PI / 6.0) });
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub success: Vec<(Threshold, f64)>,
    pub rmse_succ: Option<f64>,
    pub rmse_all: f64,
    pub sequences: usize,
    pub records: usize,
}

impl MetricReport {
    pub fn from_records(records: &[LocalizationRecord], thresholds: &[Threshold]) -> Result<Self, EvalError> {
        let finals = final_records(records);
        let success = thresholds.iter().map(|t| Ok((*t, success_rate(&finals, t.radius, t.max_angle)?))).collect::<Result<Vec<_>, EvalError>>()?;
        let rmse_succ = match rmse(records, RmseMode::Succ, 1.0) {
            Ok(v) => Some(v),
            Err(EvalError::NoSuccesses) => None,
            Err(e) => return Err(e),
        };
        let report = Self { success, rmse_succ, rmse_all: rmse(records, RmseMode::All, 1.0)?, sequences: finals.len(), records: records.len() };
        debug_assert!(report.is_monotone());
        Ok(report)
    }

    pub fn rate(&self, radius: f64, max_angle: Option<f64>) -> Option<f64> {
        self.success.iter().find(|(t, _)| t.radius == radius && t.max_angle == max_angle).map(|(_, v)| *v)
    }

    /// SR grows with the radius and shrinks when an angle limit is added.
    pub fn is_monotone(&self) -> bool {
        self.success.iter().all(|(a, ra)| {
            self.success.iter().all(|(b, rb)| {
                let looser = b.radius >= a.radius && (b.max_angle.is_none() || a.max_angle.is_some_and(|x| b.max_angle.is_some_and(|y| y >= x)));
                !looser || rb >= ra
            })
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (t, v) in &self.success {
            let _ = writeln!(s, "{},{}", t.label(), v);
        }
        let _ = writeln!(s, "RMSE_succ,{}", self.rmse_succ.map_or("NA".to_string(), |v| v.to_string()));
        let _ = writeln!(s, "RMSE_all,{}", self.rmse_all);
        let _ = writeln!(s, "sequences,{}", self.sequences);
        let _ = writeln!(s, "records,{}", self.records);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} sequences, {} records\n", self.sequences, self.records);
        for (t, v) in &self.success {
            let _ = writeln!(s, "  {:<16} {:6.1}%", t.label(), 100.0 * v);
        }
        match self.rmse_succ {
            Some(v) => {
                let _ = writeln!(s, "  RMSE (Succ)      {v:.4} m");
            }
            None => s.push_str("  RMSE (Succ)      n/a\n"),
        }
        let _ = writeln!(s, "  RMSE (All)       {:.4} m", self.rmse_all);
        s
    }
}

/// Fraction of sequences whose estimate is within `radius` at every step from `k` on.
pub fn held_from(records: &[LocalizationRecord], k: usize, radius: f64) -> f64 {
    let mut ok: BTreeMap<usize, bool> = BTreeMap::new();
    for r in records {
        let e = ok.entry(r.seq).or_insert(true);
        if r.step >= k && r.position_error() > radius {
            *e = false;
        }
    }
    ok.values().filter(|v| **v).count() as f64 / ok.len().max(1) as f64
}

/// Success rate per step index over sequences that reach it.
pub fn success_curve(records: &[LocalizationRecord], radius: f64) -> Vec<(usize, f64)> {
    let mut by_step: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = by_step.entry(r.step).or_default();
        e.0 += (r.position_error() <= radius) as usize;
        e.1 += 1;
    }
    by_step.into_iter().map(|(k, (hit, n))| (k, hit as f64 / n as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SingleFrame,
    Tracking,
    Mcl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pipeline {
    /// Direct rays from the cluttered world with noise and dropout.
    Oracle,
    /// Simulated coarse and fine depth predictors fused with weight `omega`.
    Fused { omega: f64 },
    /// The coarse predictor alone.
    SingleOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub scenarios: usize,
    pub mode: Mode,
    pub pipeline: Pipeline,
    pub obs: OracleParams,
    /// Rays of the coarse predictor in the fused pipelines.
    pub single_rays: usize,
    /// Noise of the coarse predictor in the fused pipelines.
    pub single_sigma: f64,
    pub spread: f64,
    pub orientations: usize,
    pub likelihood: RayLikelihood,
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub thresholds: Vec<Threshold>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            scenarios: 1,
            mode: Mode::Tracking,
            pipeline: Pipeline::Oracle,
            obs: OracleParams::default(),
            single_rays: obsmodel::SINGLE_FRAME_RAYS,
            single_sigma: 0.3,
            spread: 0.2,
            orientations: filter::DEFAULT_ORIENTATIONS,
            likelihood: RayLikelihood::default(),
            sigma_trans: 0.1,
            sigma_rot: 0.1,
            thresholds: default_thresholds(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Spec of scenario `i`: the base spec with its seed offset by `i`.
    pub fn scenario_spec(&self, i: usize) -> ScenarioSpec {
        ScenarioSpec { seed: self.scenario.seed.wrapping_add(i as u64), ..self.scenario.clone() }
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.scenarios == 0 || self.orientations == 0 || self.thresholds.is_empty() {
            return Err(EvalError::InvalidConfig("scenarios, orientations and thresholds must be nonempty".into()));
        }
        if let Pipeline::Fused { omega } = self.pipeline {
            if !(0.0..=1.0).contains(&omega) {
                return Err(EvalError::InvalidConfig(format!("omega {omega} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn observer(&self, scenario: &Scenario, seq: usize) -> Box<dyn ObservationSource> {
        let seed = obsmodel::mix_seed(self.scenario_spec(seq).seed, 0x0B5);
        let world = scenario.grid.union_blocked(&scenario.cluttered);
        let oracle = |params: OracleParams, stream: u64| OracleObserver { grid: scenario.grid.clone(), clutter: world.clone(), params, seed: obsmodel::mix_seed(seed, stream) };
        match self.pipeline {
            Pipeline::Oracle => Box::new(oracle(self.obs, 0)),
            Pipeline::Fused { .. } | Pipeline::SingleOnly => {
                let mode = match self.pipeline {
                    Pipeline::Fused { omega } => FusionMode::Fused { omega },
                    _ => FusionMode::SingleOnly,
                };
                let single = OracleParams { rays: self.single_rays, sigma: self.single_sigma, ..self.obs };
                Box::new(DistributionObserver { single: oracle(single, 1), multi: oracle(self.obs, 2), depth_grid: obsmodel::default_depth_grid(), spread: self.spread, mode })
            }
        }
    }
}

/// Output of one sequence.
#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub records: Vec<LocalizationRecord>,
    pub posterior: PosteriorGrid,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: MetricReport,
    pub records: Vec<LocalizationRecord>,
    pub curve: Vec<(usize, f64)>,
}

fn observations(cfg: &ExperimentConfig, scenario: &Scenario, seq: usize) -> Result<Vec<RayScan>, EvalError> {
    let source = cfg.observer(scenario, seq);
    Ok(scenario.trajectory.poses.iter().enumerate().map(|(k, p)| source.observe(p, k)).collect::<Result<Vec<_>, _>>()?)
}

fn run_sequence(cfg: &ExperimentConfig, seq: usize) -> Result<(Scenario, SequenceResult), EvalError> {
    let spec = cfg.scenario_spec(seq);
    let scenario = sim::gen_scenario(&spec, &cfg.obs)?;
    let result = match cfg.mode {
        Mode::Mcl => mcl_baseline(&scenario.grid, &scenario.trajectory, MCL_RAYS, cfg, seq)?,
        Mode::SingleFrame => {
            let obs = observations(cfg, &scenario, seq)?;
            let cache = ScanCache::new(Arc::new(scenario.grid.clone()), cfg.orientations);
            let mut records = Vec::with_capacity(obs.len());
            let mut posterior = None;
            for (k, o) in obs.iter().enumerate() {
                let sf = filter::single_frame_localize_cached(&cache, o, &cfg.likelihood, cfg.obs.max_range)?;
                records.push(LocalizationRecord { seq, step: k, estimate: sf.best, gt: scenario.trajectory.poses[k] });
                posterior = Some(sf.volume);
            }
            SequenceResult { records, posterior: posterior.expect("nonempty trajectory") }
        }
        Mode::Tracking => {
            let obs = observations(cfg, &scenario, seq)?;
            let traj = Trajectory { scans: obs, ..scenario.trajectory.clone() };
            track_sequence(&scenario.grid, &traj, cfg, seq)?
        }
    };
    Ok((scenario, result))
}

fn track_sequence(grid: &OccupancyGrid, traj: &Trajectory, cfg: &ExperimentConfig, seq: usize) -> Result<SequenceResult, EvalError> {
    let inputs: Vec<TrackInput> = traj.track_inputs(cfg.sigma_trans, cfg.sigma_rot);
    let cache = ScanCache::new(Arc::new(grid.clone()), cfg.orientations);
    let res = filter::track_cached(&cache, &inputs, &cfg.likelihood, cfg.obs.max_range)?;
    let records = res
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| LocalizationRecord { seq, step: k, estimate: s.estimate, gt: traj.poses[k] })
        .collect();
    Ok(SequenceResult { records, posterior: res.posterior })
}

/// The histogram filter fed with noiseless full-circle scans of the clean
/// floorplan instead of camera observations.
pub fn mcl_baseline(grid: &OccupancyGrid, traj: &Trajectory, rays: usize, cfg: &ExperimentConfig, seq: usize) -> Result<SequenceResult, EvalError> {
    let scans = traj
        .poses
        .iter()
        .map(|p| floorplan::render_scan(grid, p, rays, std::f64::consts::TAU, cfg.obs.max_range))
        .collect::<Result<Vec<_>, _>>()
        .map_err(FilterError::from)?;
    track_sequence(grid, &Trajectory { scans, ..traj.clone() }, cfg, seq)
}

/// Runs every scenario and aggregates. When `out_dir` is set, writes
/// `records.csv`, `report.csv`, `report.txt`, `curve.csv` and per-sequence
/// final posteriors (`posterior_XXX.post`) with heatmaps (`posterior_XXX.pgm`).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, EvalError> {
    cfg.validate()?;
    let results: Vec<Result<(Scenario, SequenceResult), EvalError>> = (0..cfg.scenarios).into_par_iter().map(|i| run_sequence(cfg, i)).collect();
    let mut records = Vec::new();
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((_, seq)) => {
                if let Some(dir) = &cfg.out_dir {
                    crate::io::write_posterior(&dir.join(format!("posterior_{i:03}.post")), &seq.posterior)?;
                    crate::io::write_heatmap_pgm(&dir.join(format!("posterior_{i:03}.pgm")), &seq.posterior)?;
                }
                records.extend(seq.records);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(dir) = &cfg.out_dir {
        crate::io::write_records(&dir.join("records.csv"), &records)?;
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let report = MetricReport::from_records(&records, &cfg.thresholds)?;
    let curve = success_curve(&records, 1.0);
    if let Some(dir) = &cfg.out_dir {
        crate::io::write_text(&dir.join("report.csv"), &report.to_csv())?;
        crate::io::write_text(&dir.join("report.txt"), &report.to_text())?;
        let mut c = String::from("step,sr_1m\n");
        for (k, v) in &curve {
            let _ = writeln!(c, "{k},{v}");
        }
        crate::io::write_text(&dir.join("curve.csv"), &c)?;
    }
    Ok(ExperimentResult { report, records, curve })
}
