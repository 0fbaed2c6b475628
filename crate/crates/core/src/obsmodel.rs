//! Observation model outputs: per-ray depth distributions, their fusion and
//! expectation, the ray-scan training loss, and simulated observation sources
//! standing in for a learned depth predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::floorplan::{self, equiangular, FloorplanError, OccupancyGrid, Pose2, RayScan};

pub const DEFAULT_HYPOTHESES: usize = 64;
pub const DEFAULT_DEPTH_MIN: f64 = 0.1;
pub const DEFAULT_DEPTH_MAX: f64 = 10.0;
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Ray counts of the single-frame and multi-frame predictors.
pub const SINGLE_FRAME_RAYS: usize = 40;
pub const MULTI_FRAME_RAYS: usize = 160;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObsError {
    #[error("cannot resample {from} rays down to {to}")]
    DownsampleNotSupported { from: usize, to: usize },
    #[error("fusion weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("depth hypothesis grids differ")]
    HypothesisMismatch,
    #[error("scan shapes differ: {0} vs {1} rays")]
    ScanShapeMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid observation parameters: {0}")]
    InvalidParams(String),
    #[error("ground-truth pose ({x}, {y}) is not in free space")]
    PoseNotFree { x: f64, y: f64 },
    #[error(transparent)]
    Floorplan(#[from] FloorplanError),
}

/// Row-stochastic `rays x hypotheses` matrix over a shared depth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    depth_grid: Vec<f64>,
    probs: Vec<f64>,
    rays: usize,
}

pub fn default_depth_grid() -> Vec<f64> {
    uniform_depth_grid(DEFAULT_DEPTH_MIN, DEFAULT_DEPTH_MAX, DEFAULT_HYPOTHESES)
}

pub fn uniform_depth_grid(min: f64, max: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![min];
    }
    (0..k).map(|i| min + (max - min) * i as f64 / (k - 1) as f64).collect()
}

impl DepthDistribution {
    pub fn new(depth_grid: Vec<f64>, probs: Vec<f64>) -> Result<Self, ObsError> {
        let k = depth_grid.len();
        let bad = |m: String| Err(ObsError::InvalidDistribution(m));
        if k == 0 {
            return bad("empty depth grid".into());
        }
        if depth_grid.iter().any(|d| !d.is_finite()) || depth_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("depth grid must be finite and strictly increasing".into());
        }
        if probs.is_empty() || probs.len() % k != 0 {
            return bad(format!("{} probabilities for {k} hypotheses", probs.len()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("probabilities must be finite and non-negative".into());
        }
        for (r, row) in probs.chunks(k).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("row {r} sums to {s}"));
            }
        }
        let rays = probs.len() / k;
        Ok(Self { depth_grid, probs, rays })
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn hypotheses(&self) -> usize {
        self.depth_grid.len()
    }

    pub fn depth_grid(&self) -> &[f64] {
        &self.depth_grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.hypotheses();
        &self.probs[r * k..(r + 1) * k]
    }
}

/// Linear interpolation of rows onto `v_target` rays covering the same field
/// of view (edge rays stay on the edges), followed by row renormalization.
pub fn upsample_rays(p: &DepthDistribution, v_target: usize) -> Result<DepthDistribution, ObsError> {
    let v = p.rays;
    if v_target < v {
        return Err(ObsError::DownsampleNotSupported { from: v, to: v_target });
    }
    if v_target == v {
        return Ok(p.clone());
    }
    let k = p.hypotheses();
    let mut probs = Vec::with_capacity(v_target * k);
    for i in 0..v_target {
        if v == 1 {
            probs.extend_from_slice(p.row(0));
            continue;
        }
        let pos = (i * (v - 1)) as f64 / (v_target - 1) as f64;
        let lo = (pos.floor() as usize).min(v - 2);
        let frac = pos - lo as f64;
        let (a, b) = (p.row(lo), p.row(lo + 1));
        let start = probs.len();
        probs.extend(a.iter().zip(b).map(|(x, y)| (1.0 - frac) * x + frac * y));
        let row = &mut probs[start..];
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(DepthDistribution { depth_grid: p.depth_grid.clone(), probs, rays: v_target })
}

/// `omega * upsample(single) + (1 - omega) * multi`, row by row.
pub fn fuse(single: &DepthDistribution, multi: &DepthDistribution, omega: f64) -> Result<DepthDistribution, ObsError> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(ObsError::InvalidWeight(omega));
    }
    if single.depth_grid != multi.depth_grid {
        return Err(ObsError::HypothesisMismatch);
    }
    let up = upsample_rays(single, multi.rays)?;
    let probs = up.probs.iter().zip(&multi.probs).map(|(s, m)| omega * s + (1.0 - omega) * m).collect();
    Ok(DepthDistribution { depth_grid: multi.depth_grid.clone(), probs, rays: multi.rays })
}

/// Per-ray expected depth.
pub fn expected_scan(p: &DepthDistribution, fov: f64) -> Result<RayScan, ObsError> {
    let depths: Vec<f64> = (0..p.rays).map(|r| p.row(r).iter().zip(&p.depth_grid).map(|(w, d)| w * d).sum()).collect();
    Ok(RayScan::new(fov, depths)?)
}

/// A discretized Gaussian of width `spread` around each ray depth.
pub fn scan_to_distribution(scan: &RayScan, depth_grid: &[f64], spread: f64) -> Result<DepthDistribution, ObsError> {
    if !(spread > 0.0) {
        return Err(ObsError::InvalidParams(format!("spread {spread} must be positive")));
    }
    let k = depth_grid.len();
    let mut probs = Vec::with_capacity(scan.len() * k);
    for &d in &scan.depths {
        let start = probs.len();
        probs.extend(depth_grid.iter().map(|g| (-0.5 * ((g - d) / spread).powi(2)).exp()));
        let row = &mut probs[start..];
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        } else {
            let nearest = depth_grid
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - d).abs().total_cmp(&(b.1 - d).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            row[nearest] = 1.0;
        }
    }
    DepthDistribution::new(depth_grid.to_vec(), probs)
}

/// `d . d* / max(|d| |d*|, eps)`.
pub fn cosine_similarity(d: &[f64], d_star: &[f64], eps: f64) -> f64 {
    let dot: f64 = d.iter().zip(d_star).map(|(a, b)| a * b).sum();
    let na2: f64 = d.iter().map(|a| a * a).sum();
    let nb2: f64 = d_star.iter().map(|b| b * b).sum();
    // one square root keeps cos(d, d) at exactly 1
    dot / (na2 * nb2).sqrt().max(eps)
}

pub fn mean_abs_error(d: &[f64], d_star: &[f64]) -> f64 {
    d.iter().zip(d_star).map(|(a, b)| (a - b).abs()).sum::<f64>() / d.len() as f64
}

/// Sign of the shape term in the ray loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShapeTerm {
    /// `1 - cos(d, d*)`: zero for identical shapes.
    #[default]
    Corrected,
    /// `+cos(d, d*)`; minimizing it rewards dissimilar shapes.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlocLoss {
    pub l1: f64,
    pub shape: f64,
}

impl FlocLoss {
    pub fn total(&self) -> f64 {
        self.l1 + self.shape
    }
}

/// Mean absolute ray error plus a cosine shape term.
pub fn floc_loss(d: &RayScan, d_star: &RayScan, epsilon: f64, shape: ShapeTerm) -> Result<FlocLoss, ObsError> {
    if d.len() != d_star.len() {
        return Err(ObsError::ScanShapeMismatch(d.len(), d_star.len()));
    }
    let l1 = mean_abs_error(&d.depths, &d_star.depths);
    let cos = cosine_similarity(&d.depths, &d_star.depths, epsilon);
    let shape = match shape {
        ShapeTerm::Corrected => (1.0 - cos).max(0.0),
        ShapeTerm::Literal => cos,
    };
    Ok(FlocLoss { l1, shape })
}

/// Source of ray-scan observations at ground-truth poses.
pub trait ObservationSource: Send + Sync {
    fn observe(&self, gt: &Pose2, step: usize) -> Result<RayScan, ObsError>;
    fn rays(&self) -> usize;
    fn fov(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub rays: usize,
    pub fov: f64,
    pub max_range: f64,
    pub sigma: f64,
    pub dropout: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            rays: SINGLE_FRAME_RAYS,
            fov: floorplan::DEFAULT_FOV,
            max_range: floorplan::DEFAULT_MAX_RANGE,
            sigma: 0.0,
            dropout: 0.0,
        }
    }
}

impl OracleParams {
    fn validate(&self) -> Result<(), ObsError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ObsError::InvalidParams(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(ObsError::InvalidParams(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        Ok(())
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders on the cluttered twin, adds clamped Gaussian noise, then drops rays to `max_range`.
pub fn observe_oracle(grid: &OccupancyGrid, clutter: &OccupancyGrid, gt: &Pose2, params: &OracleParams, seed: u64) -> Result<RayScan, ObsError> {
    params.validate()?;
    if !grid.is_free_at(gt.x, gt.y) {
        return Err(ObsError::PoseNotFree { x: gt.x, y: gt.y });
    }
    let mut scan = floorplan::render_scan(clutter, gt, params.rays, params.fov, params.max_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in scan.depths.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        let drop = rng.random::<f64>() < params.dropout;
        *d = (*d + params.sigma * n).clamp(0.0, params.max_range);
        if drop {
            *d = params.max_range;
        }
    }
    Ok(scan)
}

/// Direct ray observations from a (possibly cluttered) world.
#[derive(Debug, Clone)]
pub struct OracleObserver {
    pub grid: OccupancyGrid,
    pub clutter: OccupancyGrid,
    pub params: OracleParams,
    pub seed: u64,
}

impl ObservationSource for OracleObserver {
    fn observe(&self, gt: &Pose2, step: usize) -> Result<RayScan, ObsError> {
        observe_oracle(&self.grid, &self.clutter, gt, &self.params, mix_seed(self.seed, step as u64))
    }

    fn rays(&self) -> usize {
        self.params.rays
    }

    fn fov(&self) -> f64 {
        self.params.fov
    }
}

/// How a [`DistributionObserver`] combines its two predictors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode {
    Fused { omega: f64 },
    /// Upsampled single-frame prediction only, skipping fusion.
    SingleOnly,
}

/// Simulates a coarse single-frame and a fine multi-frame depth predictor,
/// fuses their distributions and reports the expected rays.
#[derive(Debug, Clone)]
pub struct DistributionObserver {
    pub single: OracleObserver,
    pub multi: OracleObserver,
    pub depth_grid: Vec<f64>,
    pub spread: f64,
    pub mode: FusionMode,
}

impl DistributionObserver {
    pub fn distributions(&self, gt: &Pose2, step: usize) -> Result<(DepthDistribution, DepthDistribution), ObsError> {
        let s = self.single.observe(gt, step)?;
        let m = self.multi.observe(gt, step)?;
        Ok((scan_to_distribution(&s, &self.depth_grid, self.spread)?, scan_to_distribution(&m, &self.depth_grid, self.spread)?))
    }
}

impl ObservationSource for DistributionObserver {
    fn observe(&self, gt: &Pose2, step: usize) -> Result<RayScan, ObsError> {
        let (ps, pm) = self.distributions(gt, step)?;
        let p = match self.mode {
            FusionMode::Fused { omega } => fuse(&ps, &pm, omega)?,
            FusionMode::SingleOnly => upsample_rays(&ps, pm.rays())?,
        };
        expected_scan(&p, self.multi.params.fov)
    }

    fn rays(&self) -> usize {
        self.multi.params.rays
    }

    fn fov(&self) -> f64 {
        self.multi.params.fov
    }
}

/// Angles of the rays a distribution with `rays` rows describes.
pub fn ray_angles(rays: usize, fov: f64) -> Vec<f64> {
    equiangular(rays, fov)
}
