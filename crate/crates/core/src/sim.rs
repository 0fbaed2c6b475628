//! Synthetic scenarios: procedural rectilinear floorplans, clutter, trajectories
//! and perfect RGB-D sequences rendered from the extruded plan.
//!
//! Every generator is a pure function of its inputs; randomness comes from
//! ChaCha streams derived from the scenario seed.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::floorplan::{self, Cell, FloorplanError, OccupancyGrid, Pose2, RayScan};
use crate::geom::{CameraIntrinsics, DepthImage, GeomError, PointCloud, RigidPose3};
use crate::obsmodel::{self, mix_seed, ObsError, OracleParams};

pub const CEILING_HEIGHT: f64 = 2.5;
pub const CAMERA_HEIGHT: f64 = 1.2;
pub const SURFACE_SPACING: f64 = 0.02;

const FLOORPLAN_STREAM: u64 = 1;
const CLUTTER_STREAM: u64 = 2;
const TRAJECTORY_STREAM: u64 = 3;
const OBSERVATION_STREAM: u64 = 4;

const MAX_LAYOUT_ATTEMPTS: usize = 200;
const MAX_PLACEMENT_ATTEMPTS: usize = 2000;
const MAX_MOVE_ATTEMPTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scenario cannot be generated: {0}")]
    InfeasibleSpec(String),
    #[error("could not place clutter after {0} attempts")]
    PlacementFailed(usize),
    #[error("trajectory stuck at step {0}")]
    TrajectoryStuck(usize),
    #[error(transparent)]
    Floorplan(#[from] FloorplanError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Forward steps with small heading jitter.
    ForwardOnly,
    /// Forward steps mixed with in-place turns.
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub rooms: usize,
    pub room_min: f64,
    pub door_width: f64,
    pub clutter_count: usize,
    pub clutter_min: f64,
    pub clutter_max: f64,
    pub profile: Profile,
    pub steps: usize,
    pub step_length: f64,
    /// Standard deviation of in-place turns.
    pub turn_sigma: f64,
    /// Probability that a General step is an in-place turn.
    pub turn_probability: f64,
    /// Heading jitter applied to forward steps.
    pub jitter_sigma: f64,
    /// When set, every pose is snapped to its cell center and to the nearest
    /// of this many heading bins, so it coincides with a filter hypothesis.
    pub lattice_bins: Option<usize>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            resolution: floorplan::DEFAULT_RESOLUTION,
            rooms: 4,
            room_min: 1.5,
            door_width: 0.8,
            clutter_count: 0,
            clutter_min: 0.2,
            clutter_max: 0.6,
            profile: Profile::General,
            steps: 40,
            step_length: 0.3,
            turn_sigma: PI / 4.0,
            turn_probability: 0.25,
            jitter_sigma: 0.05,
            lattice_bins: None,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InfeasibleSpec(m.to_string()));
        if self.width < 3 || self.height < 3 {
            return bad("grid must be at least 3x3");
        }
        if self.rooms == 0 || self.steps == 0 {
            return bad("rooms and steps must be at least 1");
        }
        let positive = [self.resolution, self.room_min, self.door_width, self.clutter_min, self.clutter_max, self.step_length];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.clutter_min > self.clutter_max {
            return bad("sizes must be positive with clutter_min <= clutter_max");
        }
        if !(self.turn_sigma >= 0.0 && self.jitter_sigma >= 0.0 && (0.0..=1.0).contains(&self.turn_probability)) {
            return bad("turn parameters out of range");
        }
        if self.lattice_bins == Some(0) {
            return bad("lattice needs at least one heading bin");
        }
        Ok(())
    }

    fn cells(&self, meters: f64) -> usize {
        ((meters / self.resolution) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn w(&self) -> usize {
        self.x1 - self.x0
    }

    fn h(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Rectilinear multi-room plan inside a one-cell outer wall. Rooms come from
/// recursive splits of the largest room; each splitting wall gets one door.
pub fn gen_floorplan(spec: &ScenarioSpec) -> Result<OccupancyGrid, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, FLOORPLAN_STREAM));
    let min = spec.cells(spec.room_min);
    let door = spec.cells(spec.door_width);
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let Some(grid) = try_layout(spec, &mut rng, min, door)? else {
            continue;
        };
        if spec.rooms > 1 && is_self_symmetric(&grid) {
            continue;
        }
        if is_connected(&grid) {
            return Ok(grid);
        }
    }
    Err(SimError::InfeasibleSpec(format!("{} rooms of at least {} m do not fit", spec.rooms, spec.room_min)))
}

fn try_layout(spec: &ScenarioSpec, rng: &mut ChaCha8Rng, min: usize, door: usize) -> Result<Option<OccupancyGrid>, SimError> {
    let (w, h) = (spec.width, spec.height);
    let mut grid = OccupancyGrid::filled(w, h, spec.resolution, Cell::Free);
    for ix in 0..w {
        grid.set(ix, 0, Cell::Occupied);
        grid.set(ix, h - 1, Cell::Occupied);
    }
    for iy in 0..h {
        grid.set(0, iy, Cell::Occupied);
        grid.set(w - 1, iy, Cell::Occupied);
    }
    let mut rooms = vec![Rect { x0: 1, y0: 1, x1: w - 1, y1: h - 1 }];
    if rooms[0].w() < min || rooms[0].h() < min {
        return Err(SimError::InfeasibleSpec("grid smaller than one room".into()));
    }
    while rooms.len() < spec.rooms {
        // split the largest room that can still hold two
        let mut order: Vec<usize> = (0..rooms.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(rooms[i].w() * rooms[i].h()));
        let Some(&i) = order.iter().find(|&&i| rooms[i].w().max(rooms[i].h()) >= 2 * min + 1) else {
            return Ok(None);
        };
        let r = rooms[i];
        let vertical = if r.w() >= 2 * min + 1 && r.h() >= 2 * min + 1 { rng.random::<bool>() ^ (r.h() > r.w()) } else { r.w() >= 2 * min + 1 };
        let (lo, len) = if vertical { (r.x0, r.w()) } else { (r.y0, r.h()) };
        let at = lo + rng.random_range(min..=len - min - 1);
        let (span_lo, span_hi) = if vertical { (r.y0, r.y1) } else { (r.x0, r.x1) };
        let span = span_hi - span_lo;
        let gap = door.min(span);
        let door_at = span_lo + rng.random_range(0..=span - gap);
        for s in span_lo..span_hi {
            if (door_at..door_at + gap).contains(&s) {
                continue;
            }
            if vertical {
                grid.set(at, s, Cell::Occupied);
            } else {
                grid.set(s, at, Cell::Occupied);
            }
        }
        let (a, b) = if vertical {
            (Rect { x1: at, ..r }, Rect { x0: at + 1, ..r })
        } else {
            (Rect { y1: at, ..r }, Rect { y0: at + 1, ..r })
        };
        rooms[i] = a;
        rooms.push(b);
    }
    Ok(Some(grid))
}

/// Whether the cell pattern equals any of its non-trivial rotations or
/// reflections that preserve the grid's shape.
pub fn is_self_symmetric(grid: &OccupancyGrid) -> bool {
    let (w, h) = (grid.width(), grid.height());
    let mut maps: Vec<Box<dyn Fn(usize, usize) -> (usize, usize)>> = vec![
        Box::new(move |x, y| (w - 1 - x, h - 1 - y)),
        Box::new(move |x, y| (w - 1 - x, y)),
        Box::new(move |x, y| (x, h - 1 - y)),
    ];
    if w == h {
        maps.push(Box::new(move |x, y| (y, x)));
        maps.push(Box::new(move |x, y| (w - 1 - y, w - 1 - x)));
        maps.push(Box::new(move |x, y| (w - 1 - y, x)));
        maps.push(Box::new(move |x, y| (y, w - 1 - x)));
    }
    maps.iter().any(|f| {
        (0..h).all(|y| {
            (0..w).all(|x| {
                let (tx, ty) = f(x, y);
                grid.cell(x, y) == grid.cell(tx, ty)
            })
        })
    })
}

/// Number of 4-connected components of non-blocking cells.
pub fn free_components(grid: &OccupancyGrid) -> usize {
    let (w, h) = (grid.width(), grid.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || grid.is_blocked_index(start) {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !seen[j] && !grid.is_blocked_index(j) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    count
}

pub fn is_connected(grid: &OccupancyGrid) -> bool {
    free_components(grid) == 1
}

/// Cluttered twin of `grid` with `spec.clutter_count` rectangular obstacles.
/// Placements that would split the free space are rejected.
pub fn add_clutter(grid: &OccupancyGrid, spec: &ScenarioSpec) -> Result<OccupancyGrid, SimError> {
    spec.validate()?;
    let mut out = grid.clone();
    if spec.clutter_count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, CLUTTER_STREAM));
    let (lo, hi) = (spec.cells(spec.clutter_min), spec.cells(spec.clutter_max));
    let (w, h) = (grid.width(), grid.height());
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.clutter_count {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(SimError::PlacementFailed(MAX_PLACEMENT_ATTEMPTS));
        }
        let (rw, rh) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        if rw + 2 > w || rh + 2 > h {
            continue;
        }
        let (x0, y0) = (rng.random_range(1..=w - 1 - rw), rng.random_range(1..=h - 1 - rh));
        let fits = (y0..y0 + rh).all(|y| (x0..x0 + rw).all(|x| out.cell(x, y) == Cell::Free));
        if !fits {
            continue;
        }
        let mut trial = out.clone();
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                trial.set(x, y, Cell::Occupied);
            }
        }
        if is_connected(&trial) {
            out = trial;
            placed += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose2>,
    /// Exact relative motion from the previous pose; identity for step 0.
    pub deltas: Vec<(f64, f64, f64)>,
    pub scans: Vec<RayScan>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Filter inputs with the given transition noise.
    pub fn track_inputs(&self, sigma_trans: f64, sigma_rot: f64) -> Vec<crate::filter::TrackInput> {
        self.deltas
            .iter()
            .zip(&self.scans)
            .map(|(&(dx, dy, dphi), obs)| crate::filter::TrackInput {
                delta: crate::filter::MotionDelta::new(dx, dy, dphi, sigma_trans, sigma_rot),
                obs: obs.clone(),
            })
            .collect()
    }
}

/// Minimum free distance kept ahead of a forward step.
const CLEARANCE: f64 = 0.15;

fn can_move(world: &OccupancyGrid, from: &Pose2, heading: f64, length: f64) -> Result<bool, SimError> {
    let free = floorplan::raycast(world, (from.x, from.y), heading, length + CLEARANCE + 1.0)?;
    let (s, c) = heading.sin_cos();
    Ok(free > length + CLEARANCE && world.is_free_at(from.x + length * c, from.y + length * s))
}

/// Ground-truth poses, exact deltas and oracle scans on the cluttered twin.
pub fn gen_trajectory(grid: &OccupancyGrid, cluttered: &OccupancyGrid, spec: &ScenarioSpec, obs: &OracleParams) -> Result<Trajectory, SimError> {
    spec.validate()?;
    let world = grid.union_blocked(cluttered);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, TRAJECTORY_STREAM));
    let free = floorplan::free_poses(&world);
    if free.is_empty() {
        return Err(SimError::InfeasibleSpec("no free cell to start from".into()));
    }
    let jitter = Normal::new(0.0, spec.jitter_sigma).map_err(|e| SimError::InfeasibleSpec(e.to_string()))?;
    let turn = Normal::new(0.0, spec.turn_sigma).map_err(|e| SimError::InfeasibleSpec(e.to_string()))?;

    let snap = |p: Pose2| match spec.lattice_bins {
        Some(bins) => {
            let (ix, iy) = world.cell_of(p.x, p.y).expect("pose inside the grid");
            let (x, y) = world.cell_center(ix, iy);
            Pose2::new(x, y, crate::filter::bin_heading(crate::filter::heading_bin(p.phi, bins), bins))
        }
        None => p,
    };
    let (x, y) = world.center_of_index(free[rng.random_range(0..free.len())]);
    let mut poses = vec![snap(Pose2::new(x, y, rng.random_range(-PI..PI)))];
    while poses.len() < spec.steps {
        let cur = *poses.last().expect("nonempty");
        let mut next = None;
        if spec.profile == Profile::General && rng.random::<f64>() < spec.turn_probability {
            next = Some(Pose2::new(cur.x, cur.y, cur.phi + turn.sample(&mut rng)));
        } else {
            for attempt in 0..MAX_MOVE_ATTEMPTS {
                let heading = if attempt == 0 { cur.phi + jitter.sample(&mut rng) } else { rng.random_range(-PI..PI) };
                if can_move(&world, &cur, heading, spec.step_length)? {
                    let (s, c) = heading.sin_cos();
                    next = Some(Pose2::new(cur.x + spec.step_length * c, cur.y + spec.step_length * s, heading));
                    break;
                }
            }
        }
        poses.push(snap(next.ok_or(SimError::TrajectoryStuck(poses.len()))?));
    }

    let mut deltas = vec![(0.0, 0.0, 0.0)];
    deltas.extend(poses.windows(2).map(|w| w[0].between(&w[1])));
    let obs_seed = mix_seed(spec.seed, OBSERVATION_STREAM);
    let scans = poses
        .iter()
        .enumerate()
        .map(|(k, p)| obsmodel::observe_oracle(grid, &world, p, obs, mix_seed(obs_seed, k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory { poses, deltas, scans })
}

/// A complete synthetic scenario: clean plan, cluttered twin and trajectory.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub grid: OccupancyGrid,
    pub cluttered: OccupancyGrid,
    pub trajectory: Trajectory,
}

pub fn gen_scenario(spec: &ScenarioSpec, obs: &OracleParams) -> Result<Scenario, SimError> {
    let grid = gen_floorplan(spec)?;
    let cluttered = add_clutter(&grid, spec)?;
    let trajectory = gen_trajectory(&grid, &cluttered, spec, obs)?;
    Ok(Scenario { spec: spec.clone(), grid, cluttered, trajectory })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgbdParams {
    pub intrinsics: CameraIntrinsics,
    pub camera_height: f64,
    pub ceiling_height: f64,
    pub surface_spacing: f64,
}

impl Default for RgbdParams {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics { fx: 12.0, fy: 12.0, cx: 7.5, cy: 5.5, width: 16, height: 12 },
            camera_height: CAMERA_HEIGHT,
            ceiling_height: CEILING_HEIGHT,
            surface_spacing: SURFACE_SPACING,
        }
    }
}

/// Depth of pixel `(u, v)` from a horizontal camera in the extruded world.
fn render_pixel(world: &OccupancyGrid, pose: &RigidPose3, k: &CameraIntrinsics, u: u32, v: u32, params: &RgbdParams) -> Result<f64, SimError> {
    let dir = pose.rotation() * Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
    let c = pose.translation();
    let horiz = dir.x.hypot(dir.y);
    let mut t = f64::INFINITY;
    if horiz > 1e-12 {
        let far = 1e3;
        let r = floorplan::raycast(world, (c.x, c.y), dir.y.atan2(dir.x), far)?;
        if r < far {
            t = r / horiz;
        }
    }
    if dir.z < -1e-12 {
        t = t.min(-c.z / dir.z);
    } else if dir.z > 1e-12 {
        t = t.min((params.ceiling_height - c.z) / dir.z);
    }
    Ok(if t.is_finite() { t } else { 0.0 })
}

pub fn render_depth(world: &OccupancyGrid, pose: &Pose2, params: &RgbdParams) -> Result<(DepthImage, RigidPose3), SimError> {
    let cam = RigidPose3::horizontal_camera(pose.x, pose.y, pose.phi, params.camera_height);
    let k = &params.intrinsics;
    let mut values = Vec::with_capacity((k.width * k.height) as usize);
    for v in 0..k.height {
        for u in 0..k.width {
            values.push(render_pixel(world, &cam, k, u, v, params)?);
        }
    }
    Ok((DepthImage::new(k.width, k.height, values)?, cam))
}

/// Points on exposed wall faces, the floor and the ceiling, spaced `surface_spacing`.
pub fn surface_cloud(world: &OccupancyGrid, params: &RgbdParams) -> PointCloud {
    let res = world.resolution();
    let (ox, oy) = world.origin();
    let per_cell = (res / params.surface_spacing).round().max(1.0) as usize;
    let step = res / per_cell as f64;
    let levels = (params.ceiling_height / params.surface_spacing).round().max(1.0) as usize;
    let dz = params.ceiling_height / levels as f64;
    let (w, h) = (world.width(), world.height());
    let blocked = |x: i64, y: i64| x < 0 || y < 0 || x >= w as i64 || y >= h as i64 || world.is_blocked_index(y as usize * w + x as usize);
    let mut pts = Vec::new();
    for iy in 0..h as i64 {
        for ix in 0..w as i64 {
            let (x0, y0) = (ox + ix as f64 * res, oy + iy as f64 * res);
            if !blocked(ix, iy) {
                for j in 0..per_cell {
                    for i in 0..per_cell {
                        let (x, y) = (x0 + (i as f64 + 0.5) * step, y0 + (j as f64 + 0.5) * step);
                        pts.push(Point3::new(x, y, 0.0));
                        pts.push(Point3::new(x, y, params.ceiling_height));
                    }
                }
                continue;
            }
            // faces shared with a free neighbour: (fixed coordinate, axis)
            let faces = [
                (!blocked(ix - 1, iy), true, x0),
                (!blocked(ix + 1, iy), true, x0 + res),
                (!blocked(ix, iy - 1), false, y0),
                (!blocked(ix, iy + 1), false, y0 + res),
            ];
            for (exposed, x_fixed, at) in faces {
                if !exposed {
                    continue;
                }
                for i in 0..per_cell {
                    let s = if x_fixed { y0 } else { x0 } + (i as f64 + 0.5) * step;
                    for l in 0..=levels {
                        let z = l as f64 * dz;
                        pts.push(if x_fixed { Point3::new(at, s, z) } else { Point3::new(s, at, z) });
                    }
                }
            }
        }
    }
    PointCloud::from_points(pts)
}

#[derive(Debug, Clone)]
pub struct RgbdSequence {
    pub frames: Vec<(DepthImage, RigidPose3)>,
    pub surface: PointCloud,
    pub intrinsics: CameraIntrinsics,
    pub scenario: Scenario,
}

/// Perfect depth frames along the scenario trajectory, rendered from the
/// cluttered world extruded to the ceiling height.
pub fn gen_rgbd_sequence(spec: &ScenarioSpec, params: &RgbdParams) -> Result<RgbdSequence, SimError> {
    params.intrinsics.validate()?;
    let scenario = gen_scenario(spec, &OracleParams::default())?;
    let world = scenario.grid.union_blocked(&scenario.cluttered);
    let frames = scenario.trajectory.poses.iter().map(|p| render_depth(&world, p, params)).collect::<Result<Vec<_>, _>>()?;
    Ok(RgbdSequence { frames, surface: surface_cloud(&world, params), intrinsics: params.intrinsics, scenario })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::depth_to_cloud;

    fn spec(seed: u64) -> ScenarioSpec {
        ScenarioSpec { seed, ..Default::default() }
    }

    #[test]
    fn single_room_has_four_walls() {
        let s = ScenarioSpec { rooms: 1, width: 10, height: 8, room_min: 0.5, ..spec(1) };
        let g = gen_floorplan(&s).unwrap();
        for iy in 0..8 {
            for ix in 0..10 {
                let border = ix == 0 || iy == 0 || ix == 9 || iy == 7;
                assert_eq!(g.cell(ix, iy) == Cell::Occupied, border);
            }
        }
    }

    #[test]
    fn floorplans_are_deterministic_connected_and_asymmetric() {
        let s = ScenarioSpec { rooms: 4, ..spec(7) };
        let a = gen_floorplan(&s).unwrap();
        assert_eq!(a, gen_floorplan(&s).unwrap());
        assert!(is_connected(&a));
        assert!(!is_self_symmetric(&a));
        let walls = a.cells().iter().filter(|c| **c == Cell::Occupied).count();
        assert!(walls > 4 * 63);
    }

    #[test]
    fn infeasible_rooms() {
        let s = ScenarioSpec { rooms: 50, room_min: 2.0, ..spec(1) };
        assert!(matches!(gen_floorplan(&s), Err(SimError::InfeasibleSpec(_))));
    }

    #[test]
    fn symmetry_detection() {
        let g = OccupancyGrid::filled(5, 5, 0.1, Cell::Free);
        assert!(is_self_symmetric(&g));
        let mut g2 = g.clone();
        g2.set(0, 0, Cell::Occupied);
        assert!(is_self_symmetric(&g2));
        g2.set(1, 0, Cell::Occupied);
        assert!(!is_self_symmetric(&g2));
    }

    #[test]
    fn clutter_examples() {
        let s = ScenarioSpec { rooms: 1, ..spec(3) };
        let g = gen_floorplan(&s).unwrap();
        assert_eq!(add_clutter(&g, &s).unwrap(), g);

        let s1 = ScenarioSpec { clutter_count: 1, ..s.clone() };
        let c = add_clutter(&g, &s1).unwrap();
        let new: Vec<usize> = (0..g.cells().len()).filter(|&i| g.cells()[i] != c.cells()[i]).collect();
        assert!(!new.is_empty());
        let xs: Vec<usize> = new.iter().map(|i| i % 64).collect();
        let ys: Vec<usize> = new.iter().map(|i| i / 64).collect();
        let (w, h) = (xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1, ys.iter().max().unwrap() - ys.iter().min().unwrap() + 1);
        assert_eq!(new.len(), w * h);
        assert!(is_connected(&c));
    }

    #[test]
    fn trajectory_examples() {
        let s = ScenarioSpec { steps: 1, ..spec(5) };
        let g = gen_floorplan(&s).unwrap();
        let t = gen_trajectory(&g, &g, &s, &OracleParams::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.deltas, vec![(0.0, 0.0, 0.0)]);

        let s = ScenarioSpec { profile: Profile::ForwardOnly, ..spec(5) };
        let c = add_clutter(&g, &ScenarioSpec { clutter_count: 3, ..s.clone() }).unwrap();
        let t = gen_trajectory(&g, &c, &s, &OracleParams::default()).unwrap();
        assert!(t.deltas[1..].iter().all(|d| d.0.hypot(d.1) > 0.0));
        for p in &t.poses {
            assert!(g.is_free_at(p.x, p.y) && c.is_free_at(p.x, p.y));
        }

        let s = spec(9);
        let t = gen_trajectory(&g, &g, &s, &OracleParams::default()).unwrap();
        let mut p = t.poses[0];
        for (k, d) in t.deltas.iter().enumerate().skip(1) {
            p = p.compose(d.0, d.1, d.2);
            assert!(p.distance(&t.poses[k]) < 1e-9 && p.angle_error(&t.poses[k]) < 1e-9);
        }
        assert!(t.deltas.iter().any(|d| d.0 == 0.0 && d.1 == 0.0 && d.2 != 0.0));

        let s = ScenarioSpec { lattice_bins: Some(36), ..spec(9) };
        let t = gen_trajectory(&g, &g, &s, &OracleParams::default()).unwrap();
        for p in &t.poses {
            let (ix, iy) = g.cell_of(p.x, p.y).unwrap();
            assert_eq!(g.cell_center(ix, iy), (p.x, p.y));
            let b = crate::filter::heading_bin(p.phi, 36);
            assert!(p.angle_error(&Pose2::new(0.0, 0.0, crate::filter::bin_heading(b, 36))) < 1e-12);
        }
    }

    #[test]
    fn fronto_parallel_wall_depth() {
        let g = OccupancyGrid::from_ascii(&["#####", "#...#", "#...#", "#####"], 1.0).unwrap();
        let params = RgbdParams {
            intrinsics: CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 2.0, cy: 2.0, width: 5, height: 5 },
            ..Default::default()
        };
        // camera at x = 2, facing +x: the wall face is at x = 4
        let (d, _) = render_depth(&g, &Pose2::new(2.0, 2.0, 0.0), &params).unwrap();
        assert!((d.get(2, 2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rendered_points_lie_on_surfaces() {
        let s = ScenarioSpec { steps: 6, clutter_count: 2, ..spec(11) };
        let params = RgbdParams::default();
        let seq = gen_rgbd_sequence(&s, &params).unwrap();
        let world = seq.scenario.grid.union_blocked(&seq.scenario.cluttered);
        let res = world.resolution();
        for (depth, pose) in &seq.frames {
            let cloud = depth_to_cloud(depth, &seq.intrinsics, pose, 1);
            for p in &cloud.points {
                let on_plane = p.z.abs() < 1e-6 || (p.z - CEILING_HEIGHT).abs() < 1e-6;
                let on_wall = [p.x / res, p.y / res].iter().enumerate().any(|(axis, v)| {
                    let r = v.round();
                    if (v - r).abs() * res > 1e-6 {
                        return false;
                    }
                    // the two cells sharing this grid line: one blocked, one not
                    let o = if axis == 0 { p.y / res } else { p.x / res };
                    let o = o.floor() as i64;
                    let (a, b) = (r as i64 - 1, r as i64);
                    let blocked = |c: i64| {
                        let (x, y) = if axis == 0 { (c, o) } else { (o, c) };
                        world.is_blocked_index(y as usize * world.width() + x as usize)
                    };
                    blocked(a) != blocked(b)
                });
                assert!(on_plane || on_wall, "{p:?}");
            }
        }
    }
}
