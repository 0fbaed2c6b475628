//! Independent reference implementations used by the integration tests and
//! the acceptance suite. They favour directness over speed.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use floc::floorplan::{self, OccupancyGrid, Pose2, RayScan};
use floc::geom::{self, CameraIntrinsics, DepthImage, RigidPose3};
use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Neumaier-compensated sum.
pub fn ksum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

pub struct MutualNn {
    pub pairs: BTreeSet<((u32, u32), (u32, u32))>,
    pub valid_a: usize,
    pub valid_b: usize,
}

impl MutualNn {
    pub fn ratio(&self) -> f64 {
        if self.valid_a + self.valid_b == 0 {
            0.0
        } else {
            2.0 * self.pairs.len() as f64 / (self.valid_a + self.valid_b) as f64
        }
    }
}

fn nearest_all(points: &[Point3<f64>], q: &Point3<f64>, max_d2: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 <= max_d2 && best.is_none_or(|(_, b)| d2 < b) {
            best = Some((j, d2));
        }
    }
    best.map(|(j, _)| j)
}

/// Quadratic mutual nearest neighbours between the world points of two frames.
pub fn brute_force_mutual_nn(
    da: &DepthImage,
    db: &DepthImage,
    k: &CameraIntrinsics,
    pa: &RigidPose3,
    pb: &RigidPose3,
    threshold: f64,
    stride: u32,
) -> MutualNn {
    let a = geom::depth_to_cloud(da, k, pa, stride);
    let b = geom::depth_to_cloud(db, k, pb, stride);
    let (sa, sb) = (a.sources.unwrap(), b.sources.unwrap());
    let max_d2 = threshold * threshold;
    let mut pairs = BTreeSet::new();
    for (i, p) in a.points.iter().enumerate() {
        if let Some(j) = nearest_all(&b.points, p, max_d2) {
            if nearest_all(&a.points, &b.points[j], max_d2) == Some(i) {
                pairs.insert((sa[i], sb[j]));
            }
        }
    }
    MutualNn { pairs, valid_a: a.points.len(), valid_b: b.points.len() }
}

/// PointInfoNCE by the textbook double loop with compensated sums; the pool
/// of every term is the positives of all pairs.
pub fn nce_naive(a: &[Vec<f64>], b: &[Vec<f64>], pairs: &[(usize, usize)], tau: f64) -> f64 {
    let dot = |x: &[f64], y: &[f64]| ksum(x.iter().zip(y).map(|(p, q)| p * q));
    ksum(pairs.iter().map(|&(i, j)| {
        let num = (dot(&a[i], &b[j]) / tau).exp();
        let den = ksum(pairs.iter().map(|&(_, k)| (dot(&a[i], &b[k]) / tau).exp()));
        -(num / den).ln()
    }))
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Truncated, normalized Gaussian weights over integer offsets around `shift`.
pub fn gauss_weights(shift: f64, sigma: f64) -> Vec<(i64, f64)> {
    if sigma == 0.0 {
        return vec![(shift.round() as i64, 1.0)];
    }
    let mut w = Vec::new();
    let mut k = (shift - 3.0 * sigma).floor() as i64 - 1;
    while (k as f64) <= shift + 3.0 * sigma + 1.0 {
        let d = k as f64 - shift;
        if d.abs() <= 3.0 * sigma {
            w.push((k, (-(d * d) / (2.0 * sigma * sigma)).exp()));
        }
        k += 1;
    }
    if w.is_empty() {
        return vec![(shift.round() as i64, 1.0)];
    }
    let z: f64 = w.iter().map(|x| x.1).sum();
    w.into_iter().map(|(k, x)| (k, x / z)).collect()
}

pub fn likelihood_direct(obs: &[f64], map: &[f64], lambda_d: f64, lambda_s: f64) -> f64 {
    let n = obs.len() as f64;
    let l1 = obs.iter().zip(map).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let dot: f64 = obs.iter().zip(map).map(|(a, b)| a * b).sum();
    let na = obs.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = map.iter().map(|b| b * b).sum::<f64>().sqrt();
    let cos = dot / (na * nb).max(1e-8);
    (-lambda_d * l1).exp() * (-lambda_s * (1.0 - cos).max(0.0)).exp()
}

/// One predict + update by enumerating every source-to-target transition.
#[allow(clippy::too_many_arguments)]
pub fn bayes_enumerate(
    grid: &OccupancyGrid,
    bins: usize,
    prior: &[f64],
    motion: (f64, f64, f64),
    sigma_trans: f64,
    sigma_rot: f64,
    obs: &RayScan,
    lambdas: (f64, f64),
) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let res = grid.resolution();
    let dtheta = TAU / bins as f64;
    let mut pred = vec![0.0; w * h * bins];
    for src in 0..w * h {
        for o in 0..bins {
            let p = prior[src * bins + o];
            if p == 0.0 {
                continue;
            }
            let th = o as f64 * dtheta;
            let sx = (motion.0 * th.cos() - motion.1 * th.sin()) / res;
            let sy = (motion.0 * th.sin() + motion.1 * th.cos()) / res;
            let (cx, cy) = ((src % w) as i64, (src / w) as i64);
            for (kx, wx) in gauss_weights(sx, sigma_trans / res) {
                for (ky, wy) in gauss_weights(sy, sigma_trans / res) {
                    let (tx, ty) = (cx + kx, cy + ky);
                    if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                        continue;
                    }
                    for (kr, wr) in gauss_weights(motion.2 / dtheta, sigma_rot / dtheta) {
                        let to = (o as i64 + kr).rem_euclid(bins as i64) as usize;
                        pred[(ty as usize * w + tx as usize) * bins + to] += p * wx * wy * wr;
                    }
                }
            }
        }
    }
    let mut post = vec![0.0; w * h * bins];
    for cell in 0..w * h {
        if grid.is_blocked_index(cell) {
            continue;
        }
        let (x, y) = grid.center_of_index(cell);
        for o in 0..bins {
            let scan = floorplan::render_scan(grid, &Pose2::new(x, y, o as f64 * dtheta), obs.len(), obs.fov, floorplan::DEFAULT_MAX_RANGE).unwrap();
            post[cell * bins + o] = pred[cell * bins + o] * likelihood_direct(&obs.depths, &scan.depths, lambdas.0, lambdas.1);
        }
    }
    let z: f64 = post.iter().sum();
    post.iter_mut().for_each(|p| *p /= z);
    post
}

/// Ray march in small increments; a reference for grid raycasting.
pub fn march(grid: &OccupancyGrid, from: (f64, f64), angle: f64, max_range: f64) -> f64 {
    let step = grid.resolution() * 1e-4;
    let (s, c) = angle.sin_cos();
    let mut t = 0.0;
    while t < max_range {
        match grid.cell_of(from.0 + t * c, from.1 + t * s) {
            None => return max_range,
            Some((ix, iy)) if grid.blocks(grid.cell(ix, iy)) => return t,
            _ => {}
        }
        t += step;
    }
    max_range
}
