mod common;

use std::collections::BTreeSet;

use floc::geom::{self, CameraIntrinsics, DepthImage, RigidPose3};
use floc::mining::{self, MatchParams, MineParams};
use floc::sim::{self, RgbdParams, ScenarioSpec};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::Rng;

fn small_k(w: u32, h: u32) -> CameraIntrinsics {
    CameraIntrinsics::new(w as f64 * 0.75, w as f64 * 0.75, w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5, w, h).unwrap()
}

/// A depth image with random values, some invalid, on a slanted-plane base so
/// nearby pixels produce nearby points.
fn random_frame(seed: u64, w: u32, h: u32, invalid: f64) -> DepthImage {
    let mut rng = common::rng(seed);
    let base = rng.random_range(1.0..3.0);
    let slope = rng.random_range(-0.5..0.5) / w as f64;
    let values = (0..w * h)
        .map(|i| if rng.random::<f64>() < invalid { 0.0 } else { base + slope * (i % w) as f64 + rng.random_range(-0.01..0.01) })
        .collect();
    DepthImage::new(w, h, values).unwrap()
}

fn jittered_pose(seed: u64) -> RigidPose3 {
    let mut rng = common::rng(seed ^ 0xABCD);
    RigidPose3::from_yaw(rng.random_range(-0.05..0.05), Vector3::new(rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn voxel_hash_matches_brute_force(seed in 0u64..10_000, w in 4u32..33, h in 3u32..25, threshold in 0.005f64..0.1, invalid in 0.0f64..0.3) {
        let k = small_k(w, h);
        let da = random_frame(seed, w, h, invalid);
        let db = random_frame(seed + 1, w, h, invalid);
        let (pa, pb) = (RigidPose3::identity(), jittered_pose(seed));
        let got = mining::find_correspondences(&da, &db, &k, &pa, &pb, &MatchParams { threshold, stride: 1 }).unwrap();
        let oracle = common::brute_force_mutual_nn(&da, &db, &k, &pa, &pb, threshold, 1);
        let set: BTreeSet<_> = got.pairs.iter().copied().collect();
        prop_assert_eq!(set.len(), got.pairs.len());
        prop_assert_eq!(&set, &oracle.pairs);
        prop_assert_eq!(got.ratio, oracle.ratio());
    }

    #[test]
    fn symmetric_sound_and_bounded(seed in 0u64..10_000, threshold in 0.005f64..0.1) {
        let k = small_k(16, 12);
        let da = random_frame(seed, 16, 12, 0.1);
        let db = random_frame(seed + 7, 16, 12, 0.1);
        let (pa, pb) = (jittered_pose(seed + 3), jittered_pose(seed));
        let params = MatchParams { threshold, stride: 1 };
        let ab = mining::find_correspondences(&da, &db, &k, &pa, &pb, &params).unwrap();
        let ba = mining::find_correspondences(&db, &da, &k, &pb, &pa, &params).unwrap();
        let t: BTreeSet<_> = ab.transposed().pairs.into_iter().collect();
        prop_assert_eq!(t, ba.pairs.iter().copied().collect::<BTreeSet<_>>());
        prop_assert!((0.0..=1.0).contains(&ab.ratio));

        let (mut used_a, mut used_b) = (BTreeSet::new(), BTreeSet::new());
        for &((ua, va), (ub, vb)) in &ab.pairs {
            prop_assert!(used_a.insert((ua, va)) && used_b.insert((ub, vb)));
            let wa = geom::to_world(&geom::unproject(ua as f64, va as f64, da.get(ua, va), &k).unwrap(), &pa);
            let wb = geom::to_world(&geom::unproject(ub as f64, vb as f64, db.get(ub, vb), &k).unwrap(), &pb);
            prop_assert!((wa - wb).norm() <= threshold);
        }
        if ab.ratio == 1.0 {
            prop_assert_eq!(ab.pairs.len(), ab.valid_a);
            prop_assert_eq!(ab.pairs.len(), ab.valid_b);
        }
    }

    #[test]
    fn downsample_is_idempotent(seed in 0u64..10_000, n in 1usize..400, res in 0.01f64..0.2) {
        let mut rng = common::rng(seed);
        let pts: Vec<Point3<f64>> = (0..n).map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0))).collect();
        let once = mining::voxel_downsample(&pts, res);
        let twice = mining::voxel_downsample(&once, res);
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn chunk_points_stay_inside_the_frustum_box_and_associate_within_threshold() {
    let spec = ScenarioSpec { seed: 3, width: 40, height: 32, rooms: 2, room_min: 1.0, steps: 5, ..Default::default() };
    let seq = sim::gen_rgbd_sequence(&spec, &RgbdParams::default()).unwrap();
    let params = MatchParams { threshold: 0.03, stride: 1 };
    for (depth, pose) in &seq.frames {
        let chunk = mining::crop_frustum_chunk(&seq.surface, &seq.intrinsics, pose, depth, 0.02).unwrap();
        let (lo, hi) = chunk.bounds;
        assert!(chunk.points.points.iter().all(|p| mining::point_in_box(p, &lo, &hi)));
        let assoc = mining::associate_pixels_points(depth, &seq.intrinsics, pose, &chunk, &params).unwrap();
        for &((u, v), j) in &assoc.pairs {
            let w = geom::to_world(&geom::unproject(u as f64, v as f64, depth.get(u, v), &seq.intrinsics).unwrap(), pose);
            assert!((w - chunk.points.points[j]).norm() <= params.threshold);
        }
    }
}

#[test]
fn mined_pairs_agree_with_pairwise_matching() {
    let spec = ScenarioSpec { seed: 11, width: 40, height: 32, rooms: 2, room_min: 1.0, steps: 6, ..Default::default() };
    let seq = sim::gen_rgbd_sequence(&spec, &RgbdParams::default()).unwrap();
    let params = MineParams { matching: MatchParams { threshold: 0.05, stride: 1 }, min_ratio: 0.1, frame_stride: 1 };
    let mined = mining::mine_pairs(&seq.frames, &seq.intrinsics, &params).unwrap();
    let n = seq.frames.len();
    let mut expected = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let o = common::brute_force_mutual_nn(&seq.frames[a].0, &seq.frames[b].0, &seq.intrinsics, &seq.frames[a].1, &seq.frames[b].1, 0.05, 1);
            if o.ratio() >= 0.1 {
                expected.push((a, b, o.ratio()));
            }
        }
    }
    let got: Vec<_> = mined.iter().map(|m| (m.frame_a, m.frame_b, m.ratio)).collect();
    assert_eq!(got, expected);
}

#[test]
fn chunk_equals_box_filter_then_voxel_buckets() {
    let k = CameraIntrinsics::new(40.0, 40.0, 31.5, 23.5, 64, 48).unwrap();
    let pose = RigidPose3::from_yaw(0.3, Vector3::new(0.1, -0.2, 0.5));
    let depth = random_frame(9, 64, 48, 0.05);
    let res = 0.02;
    let empty = geom::PointCloud::from_points(Vec::new());
    let (lo, hi) = mining::crop_frustum_chunk(&empty, &k, &pose, &depth, res).unwrap().bounds;
    // 1 cm lattice overhanging the frustum box by 20 cm, three layers inside it
    let mut pts = Vec::new();
    let (nx, ny) = (((hi.x - lo.x + 0.4) / 0.01) as usize, ((hi.y - lo.y + 0.4) / 0.01) as usize);
    for layer in [0.25, 0.5, 0.75] {
        let z = lo.z + layer * (hi.z - lo.z);
        for i in 0..nx {
            for j in 0..ny {
                pts.push(Point3::new(lo.x - 0.2 + i as f64 * 0.01, lo.y - 0.2 + j as f64 * 0.01, z + ((i * 7 + j * 3) % 5) as f64 * 0.003));
            }
        }
    }
    let surface = geom::PointCloud::from_points(pts.clone());
    let chunk = mining::crop_frustum_chunk(&surface, &k, &pose, &depth, res).unwrap();
    assert_eq!(chunk.bounds, (lo, hi));

    let frame_cloud = geom::depth_to_cloud(&depth, &k, &pose, 1);
    assert!(frame_cloud.points.iter().all(|p| mining::point_in_box(p, &lo, &hi)));

    let mut buckets: std::collections::BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = Default::default();
    for p in pts.iter().filter(|p| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])) {
        let key = ((p.x / res).floor() as i64, (p.y / res).floor() as i64, (p.z / res).floor() as i64);
        let e = buckets.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    assert!(buckets.len() > 100 && buckets.len() < pts.len());
    assert_eq!(chunk.points.len(), buckets.len());
    let mut seen = BTreeSet::new();
    for (got, (sum, n)) in chunk.points.points.iter().zip(buckets.values()) {
        assert!((got.coords - sum / *n as f64).norm() < 1e-12);
        assert!(seen.insert(((got.x / res).floor() as i64, (got.y / res).floor() as i64, (got.z / res).floor() as i64)));
    }
}
