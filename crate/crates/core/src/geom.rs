//! Pinhole camera model and rigid-body transforms.
//!
//! Pixel coordinates are continuous: pixel `(u, v)` is the sample at column
//! `u`, row `v`, and the image rectangle spans `[0, width] x [0, height]`.
//! Camera frame convention is the usual one for depth sensors: `x` right,
//! `y` down, `z` along the optical axis. Depth is planar (the `z` coordinate),
//! not range along the ray.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use thiserror::Error;

/// Tolerance used when validating a rotation matrix built in memory.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("invalid depth range: d_min {d_min} must be positive and below d_max {d_max}")]
    InvalidRange { d_min: f64, d_max: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det 1 (error {0:e})")]
    InvalidRotation(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("depth image has {actual} values, expected {expected}")]
    DepthSize { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let bad = |m: &str| Err(GeomError::InvalidIntrinsics(m.to_string()));
        if !(self.fx.is_finite() && self.fy.is_finite() && self.cx.is_finite() && self.cy.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be at least 1x1");
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }

    /// Camera-frame point at planar depth `d` behind pixel `(u, v)`, without bounds checks.
    #[inline]
    pub fn ray_point(&self, u: f64, v: f64, d: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }

    /// Pixel coordinates and depth of a camera-frame point. `None` when the
    /// point is not in front of the camera.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z))
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    /// Like [`RigidPose3::new`] with a caller-chosen orthonormality tolerance.
    /// File loaders use a looser bound since poses are often stored in 32-bit text.
    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self, GeomError> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeomError::NonFinite("pose"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = (rotation.determinant() - 1.0).abs();
        let err = ortho.max(det);
        if err > tol {
            return Err(GeomError::InvalidRotation(err));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation by `yaw` radians about the world `z` axis.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        Self { rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), translation: t }
    }

    /// A horizontal camera (optical axis parallel to the floor) at planar
    /// position `(x, y)`, heading `phi`, mounted `height` meters above `z = 0`.
    pub fn horizontal_camera(x: f64, y: f64, phi: f64, height: f64) -> Self {
        let (s, c) = phi.sin_cos();
        // columns: camera right, camera down, camera forward (in world axes)
        let rotation = Matrix3::new(s, 0.0, c, -c, 0.0, s, 0.0, -1.0, 0.0);
        Self { rotation, translation: Vector3::new(x, y, height) }
    }

    pub fn from_matrix4(m: &Matrix4<f64>, tol: f64) -> Result<Self, GeomError> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::with_tolerance(rotation, translation, tol)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// World-to-camera.
    #[inline]
    pub fn inverse_transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation))
    }
}

/// Per-pixel planar depth in meters, row-major. Zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, GeomError> {
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(GeomError::DepthSize { expected, actual: values.len() });
        }
        if values.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(GeomError::NonFinite("depth image (values must be finite and >= 0)"));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, depth: f64) -> Self {
        Self::new(width, height, vec![depth; width as usize * height as usize]).expect("valid constant depth")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| **d > 0.0).count()
    }

    /// Smallest and largest valid depth, if any pixel is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values.iter().filter(|d| **d > 0.0).fold(None, |acc, &d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
    }
}

/// World-frame point cloud, optionally tagged with the source pixel of each point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub sources: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self { points, sources: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Camera-frame point for pixel `(u, v)` at depth `d`.
pub fn unproject(u: f64, v: f64, d: f64, k: &CameraIntrinsics) -> Result<Point3<f64>, GeomError> {
    if !(d > 0.0) {
        return Err(GeomError::InvalidDepth(d));
    }
    if !k.contains_pixel(u, v) {
        return Err(GeomError::OutOfBounds { u, v, width: k.width, height: k.height });
    }
    Ok(k.ray_point(u, v, d))
}

pub fn to_world(p: &Point3<f64>, pose: &RigidPose3) -> Point3<f64> {
    pose.transform(p)
}

/// One world point per valid pixel on a `stride` lattice starting at `(0, 0)`.
pub fn depth_to_cloud(depth: &DepthImage, k: &CameraIntrinsics, pose: &RigidPose3, stride: u32) -> PointCloud {
    let stride = stride.max(1) as usize;
    let mut points = Vec::new();
    let mut sources = Vec::new();
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            let d = depth.get(u, v);
            if d > 0.0 {
                points.push(pose.transform(&k.ray_point(u as f64, v as f64, d)));
                sources.push((u, v));
            }
        }
    }
    PointCloud { points, sources: Some(sources) }
}

/// A plane `n . x + offset >= 0` marks the inside half-space.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HalfSpace {
    normal: Vector3<f64>,
    offset: f64,
}

impl HalfSpace {
    /// Plane through `a`, `b`, `c`, oriented so that `inside` is on the positive side.
    fn through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>, inside: &Point3<f64>) -> Self {
        let mut normal = (b - a).cross(&(c - a));
        let mut offset = -normal.dot(&a.coords);
        if normal.dot(&inside.coords) + offset < 0.0 {
            normal = -normal;
            offset = -offset;
        }
        Self { normal, offset }
    }

    fn signed(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

/// The volume seen by a camera between two planar depths.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    /// Near corners at image corners (0,0), (w,0), (w,h), (0,h), then the same at the far plane.
    pub corners: [Point3<f64>; 8],
    pub d_min: f64,
    pub d_max: f64,
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidPose3,
    planes: [HalfSpace; 6],
}

impl Frustum {
    /// Exact membership via the six bounding planes (boundary inclusive).
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        // scale-aware slack so points generated on a face are not lost to rounding
        self.planes.iter().all(|h| h.signed(p) >= -1e-12 * h.normal.norm())
    }

    /// Axis-aligned bounding box `(min, max)` of the eight corners.
    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = self.corners[0];
        let mut hi = self.corners[0];
        for c in &self.corners[1..] {
            for i in 0..3 {
                lo[i] = lo[i].min(c[i]);
                hi[i] = hi[i].max(c[i]);
            }
        }
        (lo, hi)
    }
}

pub fn frustum_of(k: &CameraIntrinsics, pose: &RigidPose3, d_min: f64, d_max: f64) -> Result<Frustum, GeomError> {
    if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
        return Err(GeomError::InvalidRange { d_min, d_max });
    }
    let (w, h) = (k.width as f64, k.height as f64);
    let rect = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut corners = [Point3::origin(); 8];
    for (i, &(u, v)) in rect.iter().enumerate() {
        corners[i] = pose.transform(&k.ray_point(u, v, d_min));
        corners[i + 4] = pose.transform(&k.ray_point(u, v, d_max));
    }
    let inside = pose.transform(&k.ray_point(w / 2.0, h / 2.0, 0.5 * (d_min + d_max)));
    let c = &corners;
    let planes = [
        HalfSpace::through(&c[0], &c[1], &c[2], &inside), // near
        HalfSpace::through(&c[4], &c[5], &c[6], &inside), // far
        HalfSpace::through(&c[0], &c[1], &c[5], &inside), // top (v = 0)
        HalfSpace::through(&c[1], &c[2], &c[6], &inside), // right (u = w)
        HalfSpace::through(&c[2], &c[3], &c[7], &inside), // bottom (v = h)
        HalfSpace::through(&c[3], &c[0], &c[4], &inside), // left (u = 0)
    ];
    Ok(Frustum { corners, d_min, d_max, intrinsics: *k, pose: *pose, planes })
}
