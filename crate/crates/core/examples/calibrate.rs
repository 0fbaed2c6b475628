//! Measures the seed-locked localization numbers used by the acceptance suite.

use std::time::Instant;

use floc::eval::{self, ExperimentConfig, Mode};
use floc::obsmodel::OracleParams;
use floc::sim::ScenarioSpec;

fn main() {
    let base = ExperimentConfig { scenarios: 20, scenario: ScenarioSpec { seed: 1000, lattice_bins: Some(36), ..Default::default() }, ..Default::default() };
    for (name, cfg) in [
        ("single-frame", ExperimentConfig { mode: Mode::SingleFrame, ..base.clone() }),
        ("tracking", ExperimentConfig { mode: Mode::Tracking, ..base.clone() }),
        ("mcl", ExperimentConfig { mode: Mode::Mcl, ..base.clone() }),
        (
            "tracking+clutter",
            ExperimentConfig {
                scenario: ScenarioSpec { clutter_count: 5, ..base.scenario.clone() },
                obs: OracleParams { sigma: 0.1, ..OracleParams::default() },
                ..base.clone()
            },
        ),
    ] {
        let t = Instant::now();
        let res = eval::run_experiment(&cfg).expect("experiment");
        let all_steps = res.records.iter().filter(|r| r.position_error() <= 0.1 + 1e-9).count() as f64 / res.records.len() as f64;
        let k_star = (0..cfg.scenario.steps).find(|&k| eval::held_from(&res.records, k, 0.1 + 1e-9) == 1.0);
        let same_cell = eval::final_records(&res.records).iter().filter(|r| {
            let res = cfg.scenario.resolution;
            (r.estimate.x / res).floor() == (r.gt.x / res).floor() && (r.estimate.y / res).floor() == (r.gt.y / res).floor()
        }).count();
        println!("{name}: {:.1}s  steps<=0.1m {:.3}  k*={k_star:?}  final same cell {same_cell}/20", t.elapsed().as_secs_f64(), all_steps);
        print!("{}", res.report.to_text());
    }
}
