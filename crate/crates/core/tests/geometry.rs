mod common;

use std::f64::consts::PI;

use floc::floorplan::{self, Cell, OccupancyGrid, Pose2};
use floc::geom::{self, CameraIntrinsics, RigidPose3};
use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::Rng;

fn any_pose() -> impl Strategy<Value = RigidPose3> {
    (-PI..PI, -1.5f64..1.5, -PI..PI, -10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0).prop_map(|(r, p, y, x, yy, z)| {
        RigidPose3::new(*Rotation3::from_euler_angles(r, p, y).matrix(), Vector3::new(x, yy, z)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn world_round_trip_through_any_pose(pose in any_pose(), u in 0.0f64..64.0, v in 0.0f64..48.0, d in 0.1f64..20.0) {
        let k = CameraIntrinsics::new(50.0, 55.0, 31.5, 23.5, 64, 48).unwrap();
        let w = geom::to_world(&geom::unproject(u, v, d, &k).unwrap(), &pose);
        let (u2, v2, d2) = k.project(&pose.inverse_transform(&w)).unwrap();
        prop_assert!((u - u2).abs() <= 1e-9 * u.abs().max(1.0));
        prop_assert!((v - v2).abs() <= 1e-9 * v.abs().max(1.0));
        prop_assert!((d - d2).abs() <= 1e-9 * d);
    }

    #[test]
    fn frustum_membership_equals_depth_and_image_test(pose in any_pose(), seed in 0u64..1000) {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 6.0, 16, 12).unwrap();
        let f = geom::frustum_of(&k, &pose, 0.5, 4.0).unwrap();
        let mut rng = common::rng(seed);
        for _ in 0..200 {
            let c = Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..5.0));
            let inside_by_projection = c.z >= 0.5 && c.z <= 4.0 && {
                let (u, v) = (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
                (0.0..=16.0).contains(&u) && (0.0..=12.0).contains(&v)
            };
            // Skip points within rounding distance of a face.
            let margin = [c.z - 0.5, 4.0 - c.z].into_iter().fold(f64::INFINITY, f64::min).abs();
            if margin < 1e-9 || c.z <= 0.0 {
                continue;
            }
            let (u, v) = (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
            if [u, 16.0 - u, v, 12.0 - v].iter().any(|m| m.abs() < 1e-9) {
                continue;
            }
            prop_assert_eq!(f.contains(&pose.transform(&c)), inside_by_projection);
        }
    }

    #[test]
    fn raycast_agrees_with_fine_marching(seed in 0u64..10_000, angle in -PI..PI) {
        let mut rng = common::rng(seed);
        let mut grid = OccupancyGrid::filled(12, 10, 0.25, Cell::Free);
        for _ in 0..15 {
            grid.set(rng.random_range(0..12), rng.random_range(0..10), Cell::Occupied);
        }
        let free = floorplan::free_poses(&grid);
        prop_assume!(!free.is_empty());
        let (cx, cy) = grid.center_of_index(free[rng.random_range(0..free.len())]);
        let o = (cx + rng.random_range(-0.1..0.1), cy + rng.random_range(-0.1..0.1));
        let r = floorplan::raycast(&grid, o, angle, 5.0).unwrap();
        let m = common::march(&grid, o, angle, 5.0);
        prop_assert!((r - m).abs() <= grid.resolution() * 1e-4 + 1e-12, "{} vs {}", r, m);
    }

    #[test]
    fn rendering_is_bit_reproducible(x in 0.3f64..2.7, y in 0.3f64..1.7, phi in -PI..PI, v in 1usize..64) {
        let grid = OccupancyGrid::from_ascii(&["############", "#..........#", "#...##.....#", "#..........#", "#..........#", "#..........#", "#..........#", "############"], 0.25).unwrap();
        prop_assume!(grid.is_free_at(x, y));
        let a = floorplan::render_scan(&grid, &Pose2::new(x, y, phi), v, floorplan::DEFAULT_FOV, 10.0).unwrap();
        let b = floorplan::render_scan(&grid, &Pose2::new(x, y, phi), v, floorplan::DEFAULT_FOV, 10.0).unwrap();
        prop_assert_eq!(a.depths.iter().map(|d| d.to_bits()).collect::<Vec<_>>(), b.depths.iter().map(|d| d.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn square_room_scan_matches_ray_box_intersection() {
    let mut rows = vec!["#".repeat(42)];
    rows.extend((0..40).map(|_| format!("#{}#", ".".repeat(40))));
    rows.push("#".repeat(42));
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    let grid = OccupancyGrid::from_ascii(&refs, 0.1).unwrap();
    let pose = Pose2::new(2.1, 2.1, 0.37);
    let scan = floorplan::render_scan(&grid, &pose, 4, floorplan::DEFAULT_FOV, 10.0).unwrap();
    for (a, d) in scan.angles.iter().zip(&scan.depths) {
        let t = pose.phi + a;
        let (c, s) = (t.cos(), t.sin());
        // Interior spans [0.1, 4.1] on both axes.
        let tx = if c > 0.0 { (4.1 - pose.x) / c } else { (0.1 - pose.x) / c };
        let ty = if s > 0.0 { (4.1 - pose.y) / s } else { (0.1 - pose.y) / s };
        assert!((d - tx.min(ty)).abs() < 1e-9, "{d} vs {}", tx.min(ty));
    }
}
