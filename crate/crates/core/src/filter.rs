//! Pose estimation on a floorplan by ray-scan matching.
//!
//! Pose hypotheses sit at the centers of free floorplan cells, combined with
//! `O` orientation bins whose centers are at headings `o * 2pi / O` (bin 0
//! looks along `+x`). The histogram filter keeps a discrete belief over all
//! `(cell, bin)` hypotheses:
//!
//! * **predict** moves the mass of each bin by the odometry delta rotated into
//!   that bin's heading, blurs it with a truncated Gaussian, then shifts and
//!   blurs the orientation axis circularly;
//! * **update** multiplies each hypothesis by the likelihood of the observed
//!   scan given the scan rendered from that hypothesis.
//!
//! Map scans are rendered lazily and memoized in a [`ScanCache`].

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock, RwLock};

use rayon::prelude::*;
use thiserror::Error;

use crate::floorplan::{self, wrap_angle, FloorplanError, OccupancyGrid, Pose2, RayScan};
use crate::obsmodel::{cosine_similarity, mean_abs_error, DEFAULT_EPSILON};

pub const DEFAULT_ORIENTATIONS: usize = 36;
pub const DEFAULT_LAMBDA_DEPTH: f64 = 3.0;
pub const DEFAULT_LAMBDA_SHAPE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("floorplan has no free cells")]
    EmptyHypothesisSpace,
    #[error("all belief mass vanished")]
    BeliefCollapsed,
    #[error("scan shapes differ: {0} vs {1} rays")]
    ScanShapeMismatch(usize, usize),
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error("empty observation sequence")]
    EmptySequence,
    #[error(transparent)]
    Floorplan(#[from] FloorplanError),
}

/// `exp(-lambda_depth * meanL1) * exp(-lambda_shape * (1 - cos))`, in `(0, 1]`.
pub fn likelihood(obs: &RayScan, map_scan: &RayScan, lambda_depth: f64, lambda_shape: f64) -> Result<f64, FilterError> {
    if obs.len() != map_scan.len() {
        return Err(FilterError::ScanShapeMismatch(obs.len(), map_scan.len()));
    }
    Ok(likelihood_depths(&obs.depths, &map_scan.depths, lambda_depth, lambda_shape))
}

fn likelihood_depths(obs: &[f64], map: &[f64], lambda_depth: f64, lambda_shape: f64) -> f64 {
    let l1 = mean_abs_error(obs, map);
    let shape = (1.0 - cosine_similarity(obs, map, DEFAULT_EPSILON)).max(0.0);
    (-lambda_depth * l1 - lambda_shape * shape).exp()
}

/// Scores an observation against the scan expected at a hypothesis.
pub trait Scorer: Sync {
    fn score(&self, obs: &RayScan, map_depths: &[f64]) -> f64;

    /// Scorers that ignore the map scan let the filter skip rendering.
    fn uses_map(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayLikelihood {
    pub lambda_depth: f64,
    pub lambda_shape: f64,
}

impl Default for RayLikelihood {
    fn default() -> Self {
        Self { lambda_depth: DEFAULT_LAMBDA_DEPTH, lambda_shape: DEFAULT_LAMBDA_SHAPE }
    }
}

impl Scorer for RayLikelihood {
    fn score(&self, obs: &RayScan, map_depths: &[f64]) -> f64 {
        likelihood_depths(&obs.depths, map_depths, self.lambda_depth, self.lambda_shape)
    }
}

/// Constant likelihood; an update with it leaves the belief unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatScorer(pub f64);

impl Scorer for FlatScorer {
    fn score(&self, _obs: &RayScan, _map: &[f64]) -> f64 {
        self.0
    }

    fn uses_map(&self) -> bool {
        false
    }
}

pub fn bin_heading(o: usize, orientations: usize) -> f64 {
    wrap_angle(o as f64 * TAU / orientations as f64)
}

/// Orientation bin whose center is closest to `phi`.
pub fn heading_bin(phi: f64, orientations: usize) -> usize {
    let b = (phi.rem_euclid(TAU) / (TAU / orientations as f64)).round() as usize;
    b % orientations
}

/// Belief over `(cell, orientation bin)`, stored as `probs[cell * O + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    width: usize,
    height: usize,
    orientations: usize,
    resolution: f64,
    origin: (f64, f64),
    free: Arc<Vec<bool>>,
    probs: Vec<f64>,
}

impl PosteriorGrid {
    /// Wraps raw probabilities over `grid`'s hypotheses; they are masked and normalized.
    pub fn from_probs(grid: &OccupancyGrid, orientations: usize, mut probs: Vec<f64>) -> Result<Self, FilterError> {
        let free: Vec<bool> = (0..grid.width() * grid.height()).map(|i| !grid.is_blocked_index(i)).collect();
        if orientations == 0 || probs.len() != free.len() * orientations {
            return Err(FilterError::InvalidParams(format!("{} probabilities for {} hypotheses", probs.len(), free.len() * orientations)));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FilterError::InvalidParams("probabilities must be finite and >= 0".into()));
        }
        mask_and_normalize(&mut probs, &free, orientations)?;
        Ok(Self {
            width: grid.width(),
            height: grid.height(),
            orientations,
            resolution: grid.resolution(),
            origin: grid.origin(),
            free: Arc::new(free),
            probs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_free(&self, cell: usize) -> bool {
        self.free[cell]
    }

    #[inline]
    pub fn get(&self, cell: usize, o: usize) -> f64 {
        self.probs[cell * self.orientations + o]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    pub fn pose_of(&self, cell: usize, o: usize) -> Pose2 {
        let (ix, iy) = (cell % self.width, cell / self.width);
        Pose2::new(
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
            bin_heading(o, self.orientations),
        )
    }

    /// Index `(cell, bin)` of the largest entry; ties go to the lowest linear index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        (best / self.orientations, best % self.orientations)
    }

    /// Per-cell maximum over orientation bins, row-major.
    pub fn max_over_orientations(&self) -> Vec<f64> {
        self.probs.chunks(self.orientations).map(|c| c.iter().copied().fold(0.0, f64::max)).collect()
    }

    /// Number of hypotheses that are strict local maxima over their spatial
    /// 8-neighbourhood and adjacent headings (circularly), counting only those
    /// with at least `min_fraction` of the peak mass. Plateaus count once.
    pub fn count_modes(&self, min_fraction: f64) -> usize {
        let top = self.probs.iter().copied().fold(0.0, f64::max);
        let (w, h, no) = (self.width as i64, self.height as i64, self.orientations as i64);
        let idx = |x: i64, y: i64, o: i64| ((y * w + x) * no + o.rem_euclid(no)) as usize;
        let mut modes = 0;
        for y in 0..h {
            for x in 0..w {
                for o in 0..no {
                    let i = idx(x, y, o);
                    let m = self.probs[i];
                    if m <= 0.0 || m < min_fraction * top {
                        continue;
                    }
                    let mut peak = true;
                    'n: for dy in -1..=1 {
                        for dx in -1..=1 {
                            for dor in -1..=1 {
                                let (nx, ny) = (x + dx, y + dy);
                                if (dx, dy, dor) == (0, 0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                                    continue;
                                }
                                let j = idx(nx, ny, o + dor);
                                if j == i {
                                    continue;
                                }
                                let n = self.probs[j];
                                if n > m || (n == m && j < i) {
                                    peak = false;
                                    break 'n;
                                }
                            }
                        }
                    }
                    modes += peak as usize;
                }
            }
        }
        modes
    }
}

fn mask_and_normalize(probs: &mut [f64], free: &[bool], orientations: usize) -> Result<(), FilterError> {
    for (cell, chunk) in probs.chunks_mut(orientations).enumerate() {
        if !free[cell] {
            chunk.iter_mut().for_each(|p| *p = 0.0);
        }
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(FilterError::BeliefCollapsed);
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(())
}

pub fn init_uniform(grid: &OccupancyGrid, orientations: usize) -> Result<PosteriorGrid, FilterError> {
    if orientations == 0 {
        return Err(FilterError::InvalidParams("need at least one orientation bin".into()));
    }
    if floorplan::free_poses(grid).is_empty() {
        return Err(FilterError::EmptyHypothesisSpace);
    }
    PosteriorGrid::from_probs(grid, orientations, vec![1.0; grid.width() * grid.height() * orientations])
}

/// Relative motion in the previous pose's frame plus transition noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionDelta {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
    pub sigma_trans: f64,
    pub sigma_rot: f64,
}

impl MotionDelta {
    pub fn new(dx: f64, dy: f64, dphi: f64, sigma_trans: f64, sigma_rot: f64) -> Self {
        Self { dx, dy, dphi, sigma_trans, sigma_rot }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    fn validate(&self) -> Result<(), FilterError> {
        let all = [self.dx, self.dy, self.dphi, self.sigma_trans, self.sigma_rot];
        if all.iter().any(|x| !x.is_finite()) || self.sigma_trans < 0.0 || self.sigma_rot < 0.0 {
            return Err(FilterError::InvalidParams(format!("bad motion {self:?}")));
        }
        Ok(())
    }
}

/// Discrete Gaussian centered at `shift` (in cells), truncated at 3 sigma and
/// normalized. Degenerates to the nearest integer shift when no lattice point
/// lies inside the support.
pub fn shift_kernel(shift: f64, sigma: f64) -> Vec<(i64, f64)> {
    if sigma > 0.0 {
        let lo = (shift - 3.0 * sigma).ceil() as i64;
        let hi = (shift + 3.0 * sigma).floor() as i64;
        if lo <= hi {
            let w: Vec<(i64, f64)> = (lo..=hi).map(|k| (k, (-0.5 * ((k as f64 - shift) / sigma).powi(2)).exp())).collect();
            let s: f64 = w.iter().map(|(_, x)| x).sum();
            return w.into_iter().map(|(k, x)| (k, x / s)).collect();
        }
    }
    vec![(shift.round() as i64, 1.0)]
}

fn is_trivial(k: &[(i64, f64)]) -> bool {
    k.len() == 1 && k[0].0 == 0
}

/// Motion (transition) step.
pub fn predict(post: &PosteriorGrid, delta: &MotionDelta) -> Result<PosteriorGrid, FilterError> {
    delta.validate()?;
    let (w, h, no) = (post.width, post.height, post.orientations);
    let res = post.resolution;
    let bin = TAU / no as f64;
    let rot_kernel = shift_kernel(delta.dphi / bin, delta.sigma_rot / bin);
    let trans_kernels: Vec<(Vec<(i64, f64)>, Vec<(i64, f64)>)> = (0..no)
        .map(|o| {
            let (s, c) = bin_heading(o, no).sin_cos();
            let sx = (delta.dx * c - delta.dy * s) / res;
            let sy = (delta.dx * s + delta.dy * c) / res;
            (shift_kernel(sx, delta.sigma_trans / res), shift_kernel(sy, delta.sigma_trans / res))
        })
        .collect();
    if is_trivial(&rot_kernel) && trans_kernels.iter().all(|(kx, ky)| is_trivial(kx) && is_trivial(ky)) {
        return Ok(post.clone());
    }

    // translate each orientation slice
    let slices: Vec<Vec<f64>> = (0..no)
        .into_par_iter()
        .map(|o| {
            let (kx, ky) = &trans_kernels[o];
            let mut tmp = vec![0.0; w * h];
            for iy in 0..h {
                for ix in 0..w {
                    let m = post.probs[(iy * w + ix) * no + o];
                    if m == 0.0 {
                        continue;
                    }
                    for &(off, wt) in kx {
                        let tx = ix as i64 + off;
                        if (0..w as i64).contains(&tx) {
                            tmp[iy * w + tx as usize] += m * wt;
                        }
                    }
                }
            }
            let mut out = vec![0.0; w * h];
            for iy in 0..h {
                for ix in 0..w {
                    let m = tmp[iy * w + ix];
                    if m == 0.0 {
                        continue;
                    }
                    for &(off, wt) in ky {
                        let ty = iy as i64 + off;
                        if (0..h as i64).contains(&ty) {
                            out[ty as usize * w + ix] += m * wt;
                        }
                    }
                }
            }
            out
        })
        .collect();

    // rotate and blur the heading axis
    let mut probs = vec![0.0; w * h * no];
    for cell in 0..w * h {
        for (o, slice) in slices.iter().enumerate() {
            let m = slice[cell];
            if m == 0.0 {
                continue;
            }
            for &(off, wt) in &rot_kernel {
                let t = (o as i64 + off).rem_euclid(no as i64) as usize;
                probs[cell * no + t] += m * wt;
            }
        }
    }
    mask_and_normalize(&mut probs, &post.free, no)?;
    Ok(PosteriorGrid { probs, ..post.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ScanKey {
    rays: usize,
    fov_bits: u64,
    range_bits: u64,
}

#[derive(Debug)]
struct ScanTable {
    slots: Vec<OnceLock<Box<[f64]>>>,
}

/// Memoized map scans per `(cell, bin, rays, fov, max_range)`.
///
/// Rendering is deterministic, so concurrent first requests for the same slot
/// observe the same value whichever thread wins the initialization.
#[derive(Debug)]
pub struct ScanCache {
    grid: Arc<OccupancyGrid>,
    orientations: usize,
    tables: RwLock<HashMap<ScanKey, Arc<ScanTable>>>,
}

impl ScanCache {
    pub fn new(grid: Arc<OccupancyGrid>, orientations: usize) -> Self {
        Self { grid, orientations, tables: RwLock::new(HashMap::new()) }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    fn table(&self, rays: usize, fov: f64, max_range: f64) -> Arc<ScanTable> {
        let key = ScanKey { rays, fov_bits: fov.to_bits(), range_bits: max_range.to_bits() };
        if let Some(t) = self.tables.read().expect("scan cache lock").get(&key) {
            return t.clone();
        }
        let mut tables = self.tables.write().expect("scan cache lock");
        tables
            .entry(key)
            .or_insert_with(|| {
                let n = self.grid.width() * self.grid.height() * self.orientations;
                Arc::new(ScanTable { slots: (0..n).map(|_| OnceLock::new()).collect() })
            })
            .clone()
    }

    /// Rendered depths for hypothesis `(cell, o)`.
    pub fn depths(&self, cell: usize, o: usize, rays: usize, fov: f64, max_range: f64) -> Result<Box<[f64]>, FilterError> {
        let table = self.table(rays, fov, max_range);
        self.lookup(&table, cell, o, rays, fov, max_range).map(|d| d.to_vec().into_boxed_slice())
    }

    fn lookup<'t>(&self, table: &'t ScanTable, cell: usize, o: usize, rays: usize, fov: f64, max_range: f64) -> Result<&'t [f64], FilterError> {
        let slot = &table.slots[cell * self.orientations + o];
        if let Some(d) = slot.get() {
            return Ok(d);
        }
        let (x, y) = self.grid.center_of_index(cell);
        let pose = Pose2::new(x, y, bin_heading(o, self.orientations));
        let scan = floorplan::render_scan(&self.grid, &pose, rays, fov, max_range)?;
        Ok(slot.get_or_init(|| scan.depths.into_boxed_slice()))
    }

    pub fn cached_slots(&self) -> usize {
        self.tables.read().expect("scan cache lock").values().map(|t| t.slots.iter().filter(|s| s.get().is_some()).count()).sum()
    }
}

/// Measurement step: reweights every hypothesis with nonzero mass.
pub fn update(post: &PosteriorGrid, obs: &RayScan, scorer: &dyn Scorer, cache: &ScanCache, max_range: f64) -> Result<PosteriorGrid, FilterError> {
    let no = post.orientations;
    if cache.orientations != no || cache.grid.width() != post.width || cache.grid.height() != post.height {
        return Err(FilterError::InvalidParams("scan cache does not match the posterior".into()));
    }
    let table = scorer.uses_map().then(|| cache.table(obs.len(), obs.fov, max_range));
    let weighted: Vec<Result<Vec<f64>, FilterError>> = post
        .probs
        .par_chunks(no)
        .enumerate()
        .map(|(cell, prior)| {
            let mut out = vec![0.0; no];
            for (o, &p) in prior.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let l = match &table {
                    Some(t) => scorer.score(obs, cache.lookup(t, cell, o, obs.len(), obs.fov, max_range)?),
                    None => scorer.score(obs, &[]),
                };
                out[o] = p * l;
            }
            Ok(out)
        })
        .collect();
    let mut probs = Vec::with_capacity(post.probs.len());
    for chunk in weighted {
        probs.extend(chunk?);
    }
    mask_and_normalize(&mut probs, &post.free, no)?;
    Ok(PosteriorGrid { probs, ..post.clone() })
}

pub fn argmax_pose(post: &PosteriorGrid) -> Pose2 {
    let (cell, o) = post.argmax();
    post.pose_of(cell, o)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleFrameResult {
    pub best: Pose2,
    pub best_cell: usize,
    pub best_bin: usize,
    /// Raw likelihood per hypothesis (`cell * O + o`), zero at blocked cells.
    pub scores: Vec<f64>,
    /// The same scores normalized to a distribution.
    pub volume: PosteriorGrid,
}

/// Exhaustive scoring of every free-cell, orientation-bin hypothesis.
pub fn single_frame_localize(grid: &OccupancyGrid, obs: &RayScan, orientations: usize, scorer: &dyn Scorer, max_range: f64) -> Result<SingleFrameResult, FilterError> {
    let cache = ScanCache::new(Arc::new(grid.clone()), orientations);
    single_frame_localize_cached(&cache, obs, scorer, max_range)
}

pub fn single_frame_localize_cached(cache: &ScanCache, obs: &RayScan, scorer: &dyn Scorer, max_range: f64) -> Result<SingleFrameResult, FilterError> {
    let uniform = init_uniform(cache.grid(), cache.orientations())?;
    let no = cache.orientations();
    let table = cache.table(obs.len(), obs.fov, max_range);
    let scores: Vec<Result<Vec<f64>, FilterError>> = (0..uniform.width * uniform.height)
        .into_par_iter()
        .map(|cell| {
            if !uniform.free[cell] {
                return Ok(vec![0.0; no]);
            }
            (0..no).map(|o| Ok(scorer.score(obs, cache.lookup(&table, cell, o, obs.len(), obs.fov, max_range)?))).collect()
        })
        .collect();
    let mut flat = Vec::with_capacity(uniform.probs.len());
    for s in scores {
        flat.extend(s?);
    }
    let volume = PosteriorGrid::from_probs(cache.grid(), no, flat.clone())?;
    let mut best = 0;
    for (i, s) in flat.iter().enumerate() {
        if *s > flat[best] {
            best = i;
        }
    }
    let (best_cell, best_bin) = (best / no, best % no);
    Ok(SingleFrameResult { best: volume.pose_of(best_cell, best_bin), best_cell, best_bin, scores: flat, volume })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub orientations: usize,
    pub likelihood: RayLikelihood,
    pub max_range: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { orientations: DEFAULT_ORIENTATIONS, likelihood: RayLikelihood::default(), max_range: floorplan::DEFAULT_MAX_RANGE }
    }
}

/// One step of a tracked sequence: the motion since the previous frame
/// (ignored for the first frame) and the current observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackInput {
    pub delta: MotionDelta,
    pub obs: RayScan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackStep {
    pub estimate: Pose2,
    pub entropy: f64,
    pub max_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub steps: Vec<TrackStep>,
    pub posterior: PosteriorGrid,
}

pub fn track(grid: &OccupancyGrid, inputs: &[TrackInput], params: &FilterParams) -> Result<TrackResult, FilterError> {
    let cache = ScanCache::new(Arc::new(grid.clone()), params.orientations);
    track_cached(&cache, inputs, &params.likelihood, params.max_range)
}

pub fn track_cached(cache: &ScanCache, inputs: &[TrackInput], scorer: &dyn Scorer, max_range: f64) -> Result<TrackResult, FilterError> {
    if inputs.is_empty() {
        return Err(FilterError::EmptySequence);
    }
    let mut post = init_uniform(cache.grid(), cache.orientations())?;
    let mut steps = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        if k > 0 {
            post = predict(&post, &input.delta)?;
        }
        post = update(&post, &input.obs, scorer, cache, max_range)?;
        let (cell, o) = post.argmax();
        steps.push(TrackStep { estimate: post.pose_of(cell, o), entropy: post.entropy(), max_prob: post.get(cell, o) });
    }
    Ok(TrackResult { steps, posterior: post })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{render_scan, Cell, DEFAULT_FOV};

    fn checkerboard() -> OccupancyGrid {
        let cells = (0..16).map(|i| if (i % 4 + i / 4) % 2 == 0 { Cell::Free } else { Cell::Occupied }).collect();
        OccupancyGrid::new(4, 4, 0.1, (0.0, 0.0), cells).unwrap()
    }

    fn l_room() -> OccupancyGrid {
        OccupancyGrid::from_ascii(
            &[
                "############",
                "#..........#",
                "#..........#",
                "#....#######",
                "#....#.....#",
                "#..........#",
                "#.....##...#",
                "############",
            ],
            0.25,
        )
        .unwrap()
    }

    #[test]
    fn likelihood_examples() {
        let a = RayScan::new(1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(likelihood(&a, &a, 3.0, 1.0).unwrap(), 1.0);
        let b = RayScan::new(1.0, vec![2.0, 4.0]).unwrap();
        // collinear scans only pay the depth term
        let c = RayScan::new(1.0, vec![1.0, 1.0]).unwrap();
        let d = RayScan::new(1.0, vec![2.0, 2.0]).unwrap();
        let l = likelihood(&c, &d, 2.0, 1.0).unwrap();
        assert!((l - (-2f64).exp()).abs() < 1e-15);
        let l = likelihood(&a, &b, 3.0, 1.0).unwrap();
        assert!(l > 0.0 && l <= 1.0);
        let e = RayScan::new(1.0, vec![1.0]).unwrap();
        assert_eq!(likelihood(&a, &e, 1.0, 1.0), Err(FilterError::ScanShapeMismatch(2, 1)));
    }

    #[test]
    fn init_uniform_examples() {
        let one = OccupancyGrid::from_ascii(&["#.#"], 0.1).unwrap();
        let p = init_uniform(&one, 4).unwrap();
        assert_eq!(&p.probs()[4..8], &[0.25; 4]);
        assert!(p.probs()[..4].iter().chain(&p.probs()[8..]).all(|x| *x == 0.0));

        let free = OccupancyGrid::filled(2, 2, 0.1, Cell::Free);
        assert_eq!(init_uniform(&free, 1).unwrap().probs(), &[0.25; 4]);

        let board = checkerboard();
        let p = init_uniform(&board, 2).unwrap();
        let n_free = floorplan::free_poses(&board).len();
        assert_eq!(n_free * 2, 16);
        assert_eq!(p.probs().iter().filter(|x| **x == 1.0 / 16.0).count(), 16);

        let blocked = OccupancyGrid::filled(2, 2, 0.1, Cell::Occupied);
        assert_eq!(init_uniform(&blocked, 4), Err(FilterError::EmptyHypothesisSpace));
    }

    fn point_mass(grid: &OccupancyGrid, o_count: usize, cell: usize, o: usize) -> PosteriorGrid {
        let mut probs = vec![0.0; grid.width() * grid.height() * o_count];
        probs[cell * o_count + o] = 1.0;
        PosteriorGrid::from_probs(grid, o_count, probs).unwrap()
    }

    #[test]
    fn predict_identity_is_bit_exact() {
        let g = l_room();
        let mut probs: Vec<f64> = (0..g.width() * g.height() * 8).map(|i| ((i * 37) % 11) as f64).collect();
        probs[0] = 0.0;
        let p = PosteriorGrid::from_probs(&g, 8, probs).unwrap();
        assert_eq!(predict(&p, &MotionDelta::identity()).unwrap(), p);
    }

    #[test]
    fn predict_point_mass_shift() {
        let g = OccupancyGrid::filled(6, 6, 0.1, Cell::Free);
        let p = point_mass(&g, 4, g.index(2, 3), 0);
        let moved = predict(&p, &MotionDelta::new(0.1, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(moved.get(g.index(3, 3), 0), 1.0);
        // bin 1 faces +y: the same body-frame motion moves along +y
        let p = point_mass(&g, 4, g.index(2, 3), 1);
        let moved = predict(&p, &MotionDelta::new(0.1, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(moved.get(g.index(2, 4), 1), 1.0);
        // rotation by one bin
        let turned = predict(&p, &MotionDelta::new(0.0, 0.0, TAU / 4.0, 0.0, 0.0)).unwrap();
        assert_eq!(turned.get(g.index(2, 3), 2), 1.0);
    }

    #[test]
    fn predict_collapse_against_wall() {
        let g = OccupancyGrid::from_ascii(&[".#"], 0.1).unwrap();
        let p = point_mass(&g, 1, 0, 0);
        assert_eq!(predict(&p, &MotionDelta::new(0.1, 0.0, 0.0, 0.0, 0.0)), Err(FilterError::BeliefCollapsed));
    }

    #[test]
    fn predict_matches_dense_convolution() {
        let g = OccupancyGrid::filled(9, 9, 0.1, Cell::Free);
        let p = point_mass(&g, 1, g.index(4, 4), 0);
        let out = predict(&p, &MotionDelta::new(0.0, 0.0, 0.0, 0.1, 0.0)).unwrap();
        // dense 2D Gaussian with sigma = 1 cell over offsets |dx|, |dy| <= 3
        let mut dense = vec![0.0; 81];
        let mut total = 0.0;
        for iy in 0..9i64 {
            for ix in 0..9i64 {
                let (dx, dy) = ((ix - 4) as f64, (iy - 4) as f64);
                if dx.abs() <= 3.0 && dy.abs() <= 3.0 {
                    let v = (-0.5 * (dx * dx + dy * dy)).exp();
                    dense[(iy * 9 + ix) as usize] = v;
                    total += v;
                }
            }
        }
        for (a, b) in out.probs().iter().zip(&dense) {
            assert!((a - b / total).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_kernel_properties() {
        assert_eq!(shift_kernel(2.4, 0.0), vec![(2, 1.0)]);
        assert_eq!(shift_kernel(-1.6, 0.0), vec![(-2, 1.0)]);
        let k = shift_kernel(0.3, 1.0);
        assert_eq!(k.first().unwrap().0, -2);
        assert_eq!(k.last().unwrap().0, 3);
        assert!((k.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(shift_kernel(0.5, 0.1), vec![(1, 1.0)]);
    }

    #[test]
    fn update_examples() {
        let g = l_room();
        let cache = ScanCache::new(Arc::new(g.clone()), 8);
        let prior = init_uniform(&g, 8).unwrap();
        let obs = RayScan::new(DEFAULT_FOV, vec![1.0; 7]).unwrap();
        let flat = update(&prior, &obs, &FlatScorer(0.3), &cache, 10.0).unwrap();
        for (a, b) in flat.probs().iter().zip(prior.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(cache.cached_slots(), 0);

        let cell = g.index(2, 2);
        let pm = point_mass(&g, 8, cell, 5);
        let upd = update(&pm, &obs, &RayLikelihood::default(), &cache, 10.0).unwrap();
        assert_eq!(upd, pm);
        assert_eq!(cache.cached_slots(), 1);

        let (x, y) = g.cell_center(7, 5);
        let truth = Pose2::new(x, y, bin_heading(3, 8));
        let obs = render_scan(&g, &truth, 15, DEFAULT_FOV, 10.0).unwrap();
        let post = update(&prior, &obs, &RayLikelihood::default(), &cache, 10.0).unwrap();
        assert_eq!(post.argmax(), (g.index(7, 5), 3));
        let sf = single_frame_localize(&g, &obs, 8, &RayLikelihood::default(), 10.0).unwrap();
        assert_eq!((sf.best_cell, sf.best_bin), post.argmax());
        assert_eq!(sf.best, truth);
    }

    #[test]
    fn cached_and_uncached_scores_agree() {
        let g = l_room();
        let (x, y) = g.cell_center(3, 2);
        let obs = render_scan(&g, &Pose2::new(x, y, 1.0), 11, DEFAULT_FOV, 10.0).unwrap();
        let sf = single_frame_localize(&g, &obs, 6, &RayLikelihood::default(), 10.0).unwrap();
        for cell in floorplan::free_poses(&g) {
            for o in 0..6 {
                let (cx, cy) = g.center_of_index(cell);
                let direct = render_scan(&g, &Pose2::new(cx, cy, bin_heading(o, 6)), 11, DEFAULT_FOV, 10.0).unwrap();
                let l = likelihood(&obs, &direct, DEFAULT_LAMBDA_DEPTH, DEFAULT_LAMBDA_SHAPE).unwrap();
                assert_eq!(sf.scores[cell * 6 + o], l);
            }
        }
    }

    #[test]
    fn argmax_examples() {
        let g = OccupancyGrid::filled(3, 3, 0.5, Cell::Free);
        let p = point_mass(&g, 4, 7, 2);
        assert_eq!(argmax_pose(&p), Pose2::new(0.75, 1.25, bin_heading(2, 4)));
        let u = init_uniform(&g, 4).unwrap();
        assert_eq!(argmax_pose(&u), Pose2::new(0.25, 0.25, 0.0));
    }

    #[test]
    fn open_map_all_max_range() {
        let g = OccupancyGrid::filled(4, 4, 0.1, Cell::Free);
        let obs = RayScan::new(DEFAULT_FOV, vec![10.0; 5]).unwrap();
        let sf = single_frame_localize(&g, &obs, 4, &RayLikelihood::default(), 10.0).unwrap();
        assert!(sf.scores.iter().all(|s| *s == sf.scores[0]));
        assert_eq!((sf.best_cell, sf.best_bin), (0, 0));
    }

    #[test]
    fn square_room_symmetry() {
        let g = OccupancyGrid::from_ascii(&["#######", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", "#######"], 0.2).unwrap();
        let (x, y) = g.cell_center(3, 3);
        let obs = render_scan(&g, &Pose2::new(x, y, 0.0), 9, DEFAULT_FOV, 10.0).unwrap();
        let sf = single_frame_localize(&g, &obs, 4, &RayLikelihood::default(), 10.0).unwrap();
        let rot = |ix: usize, iy: usize| (6 - iy, ix);
        for iy in 0..7 {
            for ix in 0..7 {
                let (rx, ry) = rot(ix, iy);
                for o in 0..4 {
                    let a = sf.scores[g.index(ix, iy) * 4 + o];
                    let b = sf.scores[g.index(rx, ry) * 4 + (o + 1) % 4];
                    assert!((a - b).abs() < 1e-12, "({ix},{iy},{o})");
                }
            }
        }
        let c = g.index(3, 3);
        assert_eq!(sf.best_cell, c);
        assert!((0..4).all(|o| (sf.scores[c * 4 + o] - 1.0).abs() < 1e-12));
        let fine = single_frame_localize(&g, &obs, 36, &RayLikelihood::default(), 10.0).unwrap();
        assert_eq!(fine.volume.count_modes(0.5), 4);
    }

    #[test]
    fn track_single_step_is_init_plus_update() {
        let g = l_room();
        let (x, y) = g.cell_center(8, 1);
        let obs = render_scan(&g, &Pose2::new(x, y, 0.0), 9, DEFAULT_FOV, 10.0).unwrap();
        let params = FilterParams { orientations: 8, ..Default::default() };
        let res = track(&g, &[TrackInput { delta: MotionDelta::identity(), obs: obs.clone() }], &params).unwrap();
        let cache = ScanCache::new(Arc::new(g.clone()), 8);
        let direct = update(&init_uniform(&g, 8).unwrap(), &obs, &params.likelihood, &cache, 10.0).unwrap();
        assert_eq!(res.posterior, direct);
        assert_eq!(res.steps[0].estimate, argmax_pose(&direct));
        assert_eq!(track(&g, &[], &params), Err(FilterError::EmptySequence));
    }

    #[test]
    fn normalization_invariant_holds() {
        let g = l_room();
        let cache = ScanCache::new(Arc::new(g.clone()), 8);
        let mut p = init_uniform(&g, 8).unwrap();
        let obs = RayScan::new(DEFAULT_FOV, vec![0.7, 1.5, 2.0, 1.1, 0.4]).unwrap();
        for k in 0..30 {
            p = predict(&p, &MotionDelta::new(0.2, 0.05 * (k % 3) as f64, 0.3, 0.1, 0.1)).unwrap();
            assert!((p.total() - 1.0).abs() < 1e-9);
            p = update(&p, &obs, &RayLikelihood::default(), &cache, 10.0).unwrap();
            assert!((p.total() - 1.0).abs() < 1e-9);
            for cell in 0..g.width() * g.height() {
                if g.is_blocked_index(cell) {
                    assert!((0..8).all(|o| p.get(cell, o) == 0.0));
                }
            }
        }
    }

    #[test]
    fn heading_bins_round_trip() {
        for o in 0..36 {
            assert_eq!(heading_bin(bin_heading(o, 36), 36), o);
        }
        assert_eq!(heading_bin(-1e-9, 36), 0);
    }
}
