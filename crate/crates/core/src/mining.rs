//! Hard-constraint correspondence mining from posed depth images.
//!
//! Two kinds of matches are produced:
//!
//! * pixel to pixel between two frames of a sequence: both pixels project to
//!   world points closer than a threshold (2 cm by default) and are each
//!   other's nearest neighbour;
//! * pixel to point between a frame and the part of a surface reconstruction
//!   that falls inside the frame's frustum bounding box.
//!
//! Nearest-neighbour queries go through a uniform voxel hash whose cell size
//! equals the match threshold, so only the 27 surrounding cells need to be
//! scanned. Distances are compared squared; ties are broken towards the
//! smaller linear pixel (or point) index.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Point3;
use rayon::prelude::*;
use thiserror::Error;

use crate::floorplan::DEFAULT_MAX_RANGE;
use crate::geom::{self, CameraIntrinsics, DepthImage, GeomError, PointCloud, RigidPose3};

pub const DEFAULT_THRESHOLD: f64 = 0.02;
pub const DEFAULT_MIN_RATIO: f64 = 0.30;
pub const DEFAULT_CHUNK_RESOLUTION: f64 = 0.02;
pub const DEFAULT_PIXEL_STRIDE: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiningError {
    #[error("intrinsics do not match: {0}")]
    IntrinsicsMismatch(String),
    #[error("threshold {0} must be positive")]
    InvalidThreshold(f64),
    #[error("sequence needs at least two frames, got {0}")]
    SequenceTooShort(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Controls for pixel sampling and matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub threshold: f64,
    /// Pixel lattice stride; 1 uses every pixel.
    pub stride: u32,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, stride: DEFAULT_PIXEL_STRIDE }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelCorrespondenceSet {
    pub frames: (usize, usize),
    pub pairs: Vec<((u32, u32), (u32, u32))>,
    pub ratio: f64,
    pub valid_a: usize,
    pub valid_b: usize,
}

impl PixelCorrespondenceSet {
    /// Same matches seen from the other frame.
    pub fn transposed(&self) -> Self {
        let mut pairs: Vec<_> = self.pairs.iter().map(|&(a, b)| (b, a)).collect();
        pairs.sort_by_key(|&((u, v), _)| (v, u));
        Self { frames: (self.frames.1, self.frames.0), pairs, ratio: self.ratio, valid_a: self.valid_b, valid_b: self.valid_a }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedPair {
    pub frame_a: usize,
    pub frame_b: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrustumChunk {
    pub frame: usize,
    pub points: PointCloud,
    /// Axis-aligned crop region `(min, max)` in world meters.
    pub bounds: (Point3<f64>, Point3<f64>),
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelPointCorrespondenceSet {
    pub frame: usize,
    /// `((u, v), index into the chunk's points)`.
    pub pairs: Vec<((u32, u32), usize)>,
}

type VoxelKey = (i64, i64, i64);

#[inline]
fn voxel_key(p: &Point3<f64>, inv_cell: f64) -> VoxelKey {
    ((p.x * inv_cell).floor() as i64, (p.y * inv_cell).floor() as i64, (p.z * inv_cell).floor() as i64)
}

/// Uniform hash grid over a point set.
#[derive(Debug, Clone)]
pub struct VoxelHash {
    inv_cell: f64,
    buckets: HashMap<VoxelKey, Vec<u32>>,
}

impl VoxelHash {
    /// Cells are a hair larger than `cell` so that any two points within
    /// `cell` of each other always land in adjacent buckets despite rounding.
    pub fn build(points: &[Point3<f64>], cell: f64) -> Self {
        let inv_cell = 1.0 / (cell * (1.0 + 1e-9));
        let mut buckets: HashMap<VoxelKey, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(voxel_key(p, inv_cell)).or_default().push(i as u32);
        }
        Self { inv_cell, buckets }
    }

    /// Nearest point within `sqrt(max_d2)` of `q`; ties go to the lower index.
    pub fn nearest(&self, points: &[Point3<f64>], q: &Point3<f64>, max_d2: f64) -> Option<(usize, f64)> {
        let (kx, ky, kz) = voxel_key(q, self.inv_cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        let j = j as usize;
                        let d2 = (points[j] - q).norm_squared();
                        if d2 > max_d2 {
                            continue;
                        }
                        best = match best {
                            Some((bj, bd)) if bd < d2 || (bd == d2 && bj < j) => Some((bj, bd)),
                            _ => Some((j, d2)),
                        };
                    }
                }
            }
        }
        best
    }
}

/// World points of a frame's valid sampled pixels, in linear pixel order, with a hash over them.
#[derive(Debug, Clone)]
pub struct ProjectedFrame {
    pub points: Vec<Point3<f64>>,
    pub pixels: Vec<(u32, u32)>,
    hash: VoxelHash,
}

impl ProjectedFrame {
    pub fn new(depth: &DepthImage, k: &CameraIntrinsics, pose: &RigidPose3, params: &MatchParams) -> Self {
        let cloud = geom::depth_to_cloud(depth, k, pose, params.stride);
        let hash = VoxelHash::build(&cloud.points, params.threshold);
        Self { pixels: cloud.sources.unwrap_or_default(), points: cloud.points, hash }
    }

    pub fn valid(&self) -> usize {
        self.points.len()
    }
}

fn check_params(params: &MatchParams) -> Result<(), MiningError> {
    if !(params.threshold > 0.0 && params.threshold.is_finite()) {
        return Err(MiningError::InvalidThreshold(params.threshold));
    }
    Ok(())
}

fn check_frame(depth: &DepthImage, k: &CameraIntrinsics) -> Result<(), MiningError> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(MiningError::IntrinsicsMismatch(format!(
            "depth image is {}x{} but intrinsics describe {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    Ok(())
}

/// `2 |M| / (valid_a + valid_b)`, zero when neither frame has valid pixels.
pub fn overlap_ratio(matches: usize, valid_a: usize, valid_b: usize) -> f64 {
    if valid_a + valid_b == 0 {
        0.0
    } else {
        2.0 * matches as f64 / (valid_a + valid_b) as f64
    }
}

/// Mutual nearest-neighbour matching between two projected frames.
pub fn match_projected(a: &ProjectedFrame, b: &ProjectedFrame, threshold: f64) -> PixelCorrespondenceSet {
    let max_d2 = threshold * threshold;
    let a_to_b: Vec<Option<usize>> = a.points.iter().map(|p| b.hash.nearest(&b.points, p, max_d2).map(|(j, _)| j)).collect();
    let mut pairs = Vec::new();
    for (i, nb) in a_to_b.iter().enumerate() {
        let Some(j) = *nb else { continue };
        let back = a.hash.nearest(&a.points, &b.points[j], max_d2).map(|(i2, _)| i2);
        if back == Some(i) {
            pairs.push((a.pixels[i], b.pixels[j]));
        }
    }
    let ratio = overlap_ratio(pairs.len(), a.valid(), b.valid());
    PixelCorrespondenceSet { frames: (0, 1), pairs, ratio, valid_a: a.valid(), valid_b: b.valid() }
}

pub fn find_correspondences(
    da: &DepthImage,
    db: &DepthImage,
    k: &CameraIntrinsics,
    pa: &RigidPose3,
    pb: &RigidPose3,
    params: &MatchParams,
) -> Result<PixelCorrespondenceSet, MiningError> {
    check_params(params)?;
    check_frame(da, k)?;
    check_frame(db, k)?;
    let a = ProjectedFrame::new(da, k, pa, params);
    let b = ProjectedFrame::new(db, k, pb, params);
    Ok(match_projected(&a, &b, params.threshold))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MineParams {
    pub matching: MatchParams,
    pub min_ratio: f64,
    /// Only frames `0, s, 2s, ...` take part.
    pub frame_stride: usize,
}

impl Default for MineParams {
    fn default() -> Self {
        Self { matching: MatchParams::default(), min_ratio: DEFAULT_MIN_RATIO, frame_stride: 1 }
    }
}

/// All frame pairs `i < j` (on the frame stride) whose overlap ratio reaches `min_ratio`.
pub fn mine_pairs(sequence: &[(DepthImage, RigidPose3)], k: &CameraIntrinsics, params: &MineParams) -> Result<Vec<MinedPair>, MiningError> {
    if sequence.len() < 2 {
        return Err(MiningError::SequenceTooShort(sequence.len()));
    }
    check_params(&params.matching)?;
    for (d, _) in sequence {
        check_frame(d, k)?;
    }
    let ids: Vec<usize> = (0..sequence.len()).step_by(params.frame_stride.max(1)).collect();
    let projected: Vec<ProjectedFrame> = ids.par_iter().map(|&i| ProjectedFrame::new(&sequence[i].0, k, &sequence[i].1, &params.matching)).collect();
    let candidates: Vec<(usize, usize)> = (0..ids.len()).flat_map(|a| (a + 1..ids.len()).map(move |b| (a, b))).collect();
    let mined = candidates
        .par_iter()
        .filter_map(|&(a, b)| {
            let m = match_projected(&projected[a], &projected[b], params.matching.threshold);
            (m.ratio >= params.min_ratio).then_some(MinedPair { frame_a: ids[a], frame_b: ids[b], ratio: m.ratio })
        })
        .collect();
    Ok(mined)
}

/// One centroid per occupied voxel, ordered by voxel key.
pub fn voxel_downsample(points: &[Point3<f64>], resolution: f64) -> Vec<Point3<f64>> {
    let inv = 1.0 / resolution;
    let mut voxels: BTreeMap<VoxelKey, (nalgebra::Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let e = voxels.entry(voxel_key(p, inv)).or_insert((nalgebra::Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    voxels.into_values().map(|(sum, n)| Point3::from(sum / n as f64)).collect()
}

/// Depth range used for a frame's frustum: the valid min/max of the image,
/// `[0.1, max_range]` when nothing is valid, widened by one voxel when the
/// image has a single depth value.
pub fn frustum_depth_range(depth: &DepthImage, resolution: f64) -> (f64, f64) {
    match depth.valid_range() {
        None => (0.1, DEFAULT_MAX_RANGE),
        Some((lo, hi)) if hi > lo => (lo, hi),
        Some((lo, _)) => (lo, lo + resolution),
    }
}

pub fn point_in_box(p: &Point3<f64>, lo: &Point3<f64>, hi: &Point3<f64>) -> bool {
    (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
}

/// Crops `surface` to the bounding box of the frame's frustum and voxelizes it.
pub fn crop_frustum_chunk(
    surface: &PointCloud,
    k: &CameraIntrinsics,
    pose: &RigidPose3,
    depth: &DepthImage,
    resolution: f64,
) -> Result<FrustumChunk, MiningError> {
    if !(resolution > 0.0) {
        return Err(MiningError::InvalidThreshold(resolution));
    }
    check_frame(depth, k)?;
    let (d_min, d_max) = frustum_depth_range(depth, resolution);
    let frustum = geom::frustum_of(k, pose, d_min, d_max)?;
    let (lo, hi) = frustum.aabb();
    let inside: Vec<Point3<f64>> = surface.points.iter().filter(|p| point_in_box(p, &lo, &hi)).copied().collect();
    let points = voxel_downsample(&inside, resolution);
    Ok(FrustumChunk { frame: 0, points: PointCloud::from_points(points), bounds: (lo, hi), resolution })
}

/// Matches each valid sampled pixel's world point to its nearest chunk point.
pub fn associate_pixels_points(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    pose: &RigidPose3,
    chunk: &FrustumChunk,
    params: &MatchParams,
) -> Result<PixelPointCorrespondenceSet, MiningError> {
    check_params(params)?;
    check_frame(depth, k)?;
    let cloud = geom::depth_to_cloud(depth, k, pose, params.stride);
    let targets = &chunk.points.points;
    let hash = VoxelHash::build(targets, params.threshold);
    let max_d2 = params.threshold * params.threshold;
    let pixels = cloud.sources.unwrap_or_default();
    let pairs = cloud
        .points
        .iter()
        .zip(pixels)
        .filter_map(|(p, px)| hash.nearest(targets, p, max_d2).map(|(j, _)| (px, j)))
        .collect();
    Ok(PixelPointCorrespondenceSet { frame: chunk.frame, pairs })
}
