mod common;

use floc::floorplan::{self, Pose2};
use floc::mining::{self, MatchParams};
use floc::obsmodel::OracleParams;
use floc::sim::{self, Profile, RgbdParams, ScenarioSpec};
use proptest::prelude::*;

fn small(seed: u64) -> ScenarioSpec {
    ScenarioSpec { seed, width: 40, height: 36, rooms: 3, room_min: 1.0, steps: 12, clutter_count: 3, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clutter_never_lengthens_rays(seed in 0u64..100_000, phi in -3.2f64..3.2) {
        let spec = small(seed);
        let grid = sim::gen_floorplan(&spec).unwrap();
        let cluttered = sim::add_clutter(&grid, &spec).unwrap();
        prop_assert!(sim::is_connected(&cluttered));
        for c in floorplan::free_poses(&cluttered).into_iter().step_by(17) {
            let o = cluttered.center_of_index(c);
            let a = floorplan::raycast(&grid, o, phi, 10.0).unwrap();
            let b = floorplan::raycast(&cluttered, o, phi, 10.0).unwrap();
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn scenarios_are_pure_and_trajectories_consistent(seed in 0u64..100_000, general in any::<bool>()) {
        let spec = ScenarioSpec { profile: if general { Profile::General } else { Profile::ForwardOnly }, ..small(seed) };
        let obs = OracleParams { sigma: 0.05, dropout: 0.1, ..Default::default() };
        let a = sim::gen_scenario(&spec, &obs).unwrap();
        let b = sim::gen_scenario(&spec, &obs).unwrap();
        prop_assert_eq!(&a.grid, &b.grid);
        prop_assert_eq!(&a.trajectory.poses, &b.trajectory.poses);
        prop_assert_eq!(&a.trajectory.scans, &b.trajectory.scans);

        let t = &a.trajectory;
        let mut pose = t.poses[0];
        for (k, p) in t.poses.iter().enumerate() {
            prop_assert!(a.grid.is_free_at(p.x, p.y) && a.cluttered.is_free_at(p.x, p.y));
            if k > 0 {
                let (dx, dy, dphi) = t.deltas[k];
                if !general {
                    prop_assert!(dx.hypot(dy) > 0.0);
                }
                pose = pose.compose(dx, dy, dphi);
            }
            prop_assert!(pose.distance(p) < 1e-9 && pose.angle_error(p) < 1e-9);
        }
    }
}

#[test]
fn identical_poses_mine_a_full_overlap() {
    let spec = ScenarioSpec { seed: 4, width: 40, height: 32, rooms: 2, room_min: 1.0, ..Default::default() };
    let grid = sim::gen_floorplan(&spec).unwrap();
    let params = RgbdParams::default();
    let c = grid.center_of_index(floorplan::free_poses(&grid)[40]);
    let (d, p) = sim::render_depth(&grid, &Pose2::new(c.0, c.1, 0.7), &params).unwrap();
    let m = mining::find_correspondences(&d, &d, &params.intrinsics, &p, &p, &MatchParams { threshold: 0.02, stride: 1 }).unwrap();
    assert_eq!(m.ratio, 1.0);
}

#[test]
fn corner_turn_overlap_matches_brute_force() {
    let spec = ScenarioSpec { seed: 9, width: 30, height: 30, rooms: 1, room_min: 1.0, ..Default::default() };
    let grid = sim::gen_floorplan(&spec).unwrap();
    let params = RgbdParams::default();
    // Near the lower-left corner, turning by less than the field of view.
    let (x, y) = grid.cell_center(3, 3);
    let (da, pa) = sim::render_depth(&grid, &Pose2::new(x, y, -0.3), &params).unwrap();
    let (db, pb) = sim::render_depth(&grid, &Pose2::new(x, y, -0.3 + 0.6), &params).unwrap();
    let mp = MatchParams { threshold: 0.05, stride: 1 };
    let m = mining::find_correspondences(&da, &db, &params.intrinsics, &pa, &pb, &mp).unwrap();
    let oracle = common::brute_force_mutual_nn(&da, &db, &params.intrinsics, &pa, &pb, mp.threshold, 1);
    assert!(m.ratio > 0.0);
    assert_eq!(m.ratio, oracle.ratio());
    assert_eq!(m.pairs.iter().copied().collect::<std::collections::BTreeSet<_>>(), oracle.pairs);
}

#[test]
fn rendered_depth_lands_on_wall_floor_or_ceiling() {
    let spec = ScenarioSpec { seed: 21, width: 40, height: 32, rooms: 2, room_min: 1.0, ..Default::default() };
    let params = RgbdParams::default();
    let seq = sim::gen_rgbd_sequence(&spec, &params).unwrap();
    let grid = &seq.scenario.grid;
    for (d, pose) in &seq.frames {
        let cloud = floc::geom::depth_to_cloud(d, &seq.intrinsics, pose, 1);
        for p in &cloud.points {
            let horizontal = p.z.abs() < 1e-6 || (p.z - params.ceiling_height).abs() < 1e-6;
            let near_wall = [(1e-6, 0.0), (-1e-6, 0.0), (0.0, 1e-6), (0.0, -1e-6)]
                .iter()
                .any(|(ex, ey)| grid.cell_of(p.x + ex, p.y + ey).is_none_or(|(ix, iy)| grid.blocks(grid.cell(ix, iy))));
            assert!(horizontal || near_wall, "{p:?}");
        }
    }
}
