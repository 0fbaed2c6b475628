//! Occupancy-grid floorplans, grid raycasting and equiangular ray scans.
//!
//! Cell `(ix, iy)` covers world `[ox + ix*res, ox + (ix+1)*res) x [oy + iy*res, oy + (iy+1)*res)`
//! and is stored at linear index `iy * width + ix`. Headings are measured from
//! the world `+x` axis towards `+y`.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

pub const DEFAULT_FOV: f64 = 108.0 * PI / 180.0;
pub const STRUCTURED3D_FOV: f64 = 80.0 * PI / 180.0;
pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const STRUCTURED3D_RESOLUTION: f64 = 0.02;
pub const DEFAULT_MAX_RANGE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FloorplanError {
    #[error("ray origin ({x}, {y}) lies in a blocked cell")]
    InvalidOrigin { x: f64, y: f64 },
    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scan parameters: {0}")]
    InvalidScan(String),
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Planar pose; `phi` is kept in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self { x, y, phi: wrap_angle(phi) }
    }

    /// Applies a motion expressed in this pose's frame.
    pub fn compose(&self, dx: f64, dy: f64, dphi: f64) -> Pose2 {
        let (s, c) = self.phi.sin_cos();
        Pose2::new(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.phi + dphi)
    }

    /// The motion `(dx, dy, dphi)` that takes `self` to `other`, in `self`'s frame.
    pub fn between(&self, other: &Pose2) -> (f64, f64, f64) {
        let (s, c) = self.phi.sin_cos();
        let (wx, wy) = (other.x - self.x, other.y - self.y);
        (c * wx + s * wy, -s * wx + c * wy, wrap_angle(other.phi - self.phi))
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute heading difference in `[0, pi]`.
    pub fn angle_error(&self, other: &Pose2) -> f64 {
        wrap_angle(self.phi - other.phi).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

/// How raycasting and hypothesis generation treat [`Cell::Unknown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownPolicy {
    #[default]
    Block,
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<Cell>,
    unknown: UnknownPolicy,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64), cells: Vec<Cell>) -> Result<Self, FloorplanError> {
        if width == 0 || height == 0 {
            return Err(FloorplanError::InvalidGrid("empty grid".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(FloorplanError::InvalidGrid(format!("resolution {resolution} must be positive")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(FloorplanError::InvalidGrid("non-finite origin".into()));
        }
        if cells.len() != width * height {
            return Err(FloorplanError::InvalidGrid(format!("{} cells for a {width}x{height} grid", cells.len())));
        }
        Ok(Self { width, height, resolution, origin, cells, unknown: UnknownPolicy::Block })
    }

    pub fn filled(width: usize, height: usize, resolution: f64, cell: Cell) -> Self {
        Self::new(width, height, resolution, (0.0, 0.0), vec![cell; width * height]).expect("valid grid")
    }

    /// Builds a grid from rows of text, top row first (highest `y`).
    /// `#` is occupied, `?` unknown, anything else free.
    pub fn from_ascii(rows: &[&str], resolution: f64) -> Result<Self, FloorplanError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(FloorplanError::InvalidGrid("ragged ascii rows".into()));
        }
        let mut cells = vec![Cell::Free; width * height];
        for (r, row) in rows.iter().enumerate() {
            let iy = height - 1 - r;
            for (ix, ch) in row.chars().enumerate() {
                cells[iy * width + ix] = match ch {
                    '#' => Cell::Occupied,
                    '?' => Cell::Unknown,
                    _ => Cell::Free,
                };
            }
        }
        Self::new(width, height, resolution, (0.0, 0.0), cells)
    }

    pub fn with_unknown_policy(mut self, policy: UnknownPolicy) -> Self {
        self.unknown = policy;
        self
    }

    pub fn unknown_policy(&self) -> UnknownPolicy {
        self.unknown
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> Cell {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, cell: Cell) {
        let i = self.index(ix, iy);
        self.cells[i] = cell;
    }

    #[inline]
    pub fn blocks(&self, cell: Cell) -> bool {
        match cell {
            Cell::Free => false,
            Cell::Occupied => true,
            Cell::Unknown => self.unknown == UnknownPolicy::Block,
        }
    }

    #[inline]
    pub fn is_blocked_index(&self, i: usize) -> bool {
        self.blocks(self.cells[i])
    }

    /// Cell containing a world point (half-open cells).
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.resolution).floor();
        let fy = ((y - self.origin.1) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn center_of_index(&self, i: usize) -> (f64, f64) {
        self.cell_center(i % self.width, i / self.width)
    }

    /// Whether a world point is in a non-blocking cell.
    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|(ix, iy)| !self.blocks(self.cell(ix, iy)))
    }

    /// Copy with every cell that blocks in `other` marked occupied as well.
    pub fn union_blocked(&self, other: &OccupancyGrid) -> OccupancyGrid {
        let mut g = self.clone();
        for (c, o) in g.cells.iter_mut().zip(&other.cells) {
            if *o == Cell::Occupied {
                *c = Cell::Occupied;
            }
        }
        g
    }
}

/// Distance from `origin` along heading `angle` to the boundary of the first
/// blocking cell, capped at `max_range`. Leaving the grid counts as no hit.
pub fn raycast(grid: &OccupancyGrid, origin: (f64, f64), angle: f64, max_range: f64) -> Result<f64, FloorplanError> {
    if !(max_range > 0.0) {
        return Err(FloorplanError::InvalidScan(format!("max_range {max_range} must be positive")));
    }
    let (ox, oy) = origin;
    let res = grid.resolution;
    let gx = (ox - grid.origin.0) / res;
    let gy = (oy - grid.origin.1) / res;
    let (w, h) = (grid.width as f64, grid.height as f64);
    if !(gx >= 0.0 && gy >= 0.0 && gx <= w && gy <= h) {
        return Err(FloorplanError::OutOfBounds { x: ox, y: oy });
    }
    let (dy, dx) = angle.sin_cos();

    // Starting cell; a coordinate on a boundary belongs to the cell we are moving into.
    let start = |g: f64, d: f64| -> i64 {
        let f = g.floor();
        if g == f && d < 0.0 {
            f as i64 - 1
        } else {
            f as i64
        }
    };
    let mut cx = start(gx, dx);
    let mut cy = start(gy, dy);
    if cx < 0 || cy < 0 || cx >= grid.width as i64 || cy >= grid.height as i64 {
        return Err(FloorplanError::OutOfBounds { x: ox, y: oy });
    }
    if grid.blocks(grid.cell(cx as usize, cy as usize)) {
        return Err(FloorplanError::InvalidOrigin { x: ox, y: oy });
    }

    // Traversal in cell units; t is distance along the ray in cells.
    let axis = |g: f64, c: i64, d: f64| -> (i64, f64, f64) {
        if d > 0.0 {
            (1, (c as f64 + 1.0 - g) / d, 1.0 / d)
        } else if d < 0.0 {
            (-1, (g - c as f64) / -d, -1.0 / d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (step_x, mut t_max_x, t_delta_x) = axis(gx, cx, dx);
    let (step_y, mut t_max_y, t_delta_y) = axis(gy, cy, dy);
    let limit = max_range / res;
    loop {
        let t;
        if t_max_x <= t_max_y {
            t = t_max_x;
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            t = t_max_y;
            cy += step_y;
            t_max_y += t_delta_y;
        }
        if t >= limit {
            return Ok(max_range);
        }
        if cx < 0 || cy < 0 || cx >= grid.width as i64 || cy >= grid.height as i64 {
            return Ok(max_range);
        }
        if grid.blocks(grid.cell(cx as usize, cy as usize)) {
            return Ok(t * res);
        }
    }
}

/// Camera-relative ray directions for `v` rays over `fov`.
///
/// For `fov < 2*pi` the rays include both edges of the field of view
/// (spacing `fov / (v - 1)`); a single ray points straight ahead. A full
/// circle (`fov == 2*pi`) uses `v` rays spaced `2*pi / v` starting at `-pi`.
pub fn equiangular(v: usize, fov: f64) -> Vec<f64> {
    if v == 1 {
        return vec![0.0];
    }
    if is_full_circle(fov) {
        let step = TAU / v as f64;
        return (0..v).map(|i| -PI + i as f64 * step).collect();
    }
    let step = fov / (v - 1) as f64;
    (0..v).map(|i| -0.5 * fov + i as f64 * step).collect()
}

pub fn is_full_circle(fov: f64) -> bool {
    (fov - TAU).abs() < 1e-12
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayScan {
    pub fov: f64,
    pub angles: Vec<f64>,
    pub depths: Vec<f64>,
}

impl RayScan {
    pub fn new(fov: f64, depths: Vec<f64>) -> Result<Self, FloorplanError> {
        if depths.is_empty() {
            return Err(FloorplanError::InvalidScan("scan needs at least one ray".into()));
        }
        if !(fov > 0.0 && fov <= TAU + 1e-12) {
            return Err(FloorplanError::InvalidScan(format!("fov {fov} outside (0, 2pi]")));
        }
        if depths.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(FloorplanError::InvalidScan("depths must be finite and >= 0".into()));
        }
        Ok(Self { fov, angles: equiangular(depths.len(), fov), depths })
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

pub fn render_scan(grid: &OccupancyGrid, pose: &Pose2, v: usize, fov: f64, max_range: f64) -> Result<RayScan, FloorplanError> {
    if v == 0 {
        return Err(FloorplanError::InvalidScan("v must be at least 1".into()));
    }
    if !(fov > 0.0 && (fov < TAU || is_full_circle(fov))) {
        return Err(FloorplanError::InvalidScan(format!("fov {fov} outside (0, 2pi]")));
    }
    let angles = equiangular(v, fov);
    let depths = angles
        .iter()
        .map(|a| raycast(grid, (pose.x, pose.y), pose.phi + a, max_range))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RayScan { fov, angles, depths })
}

/// Linear indices of all non-blocking cells in row-major order.
pub fn free_poses(grid: &OccupancyGrid) -> Vec<usize> {
    (0..grid.cells.len()).filter(|&i| !grid.is_blocked_index(i)).collect()
}
