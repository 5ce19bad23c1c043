//! Rough timing of desk-scale training throughput.

use std::time::Instant;

use hexfleet::agent::{pdrsac_train, AblationFlags, TrainConfig};
use hexfleet::env::{EnvParams, FleetConfig};
use hexfleet::hexgrid::build_grid;
use hexfleet::scenario::{synth_scenario, SynthConfig};

fn main() {
    let grid = build_grid(5, 5, 0.8, 2, 7, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 288, hotspots: 2, peak_rate: 6.0, seed: 7, dt_min: 5.0 },
    );
    let fleet = FleetConfig { n_vehicles: 20, feeder_cap_kw: 60.0, ..FleetConfig::default() };
    let env_params = EnvParams::default();
    let config = TrainConfig {
        episodes: 4,
        steps_per_episode: 48,
        warmup_steps: 64,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let artifacts =
        pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), 1);
    let elapsed = t0.elapsed().as_secs_f64();
    let steps = artifacts.log.len();
    println!(
        "steps: {}  total: {:.1}s  per-step: {:.1}ms  aborted: {:?}",
        steps,
        elapsed,
        1e3 * elapsed / steps as f64,
        artifacts.aborted
    );
    println!("episode returns: {:?}", artifacts.episode_returns);
    println!("milp status: {:?}", artifacts.milp_status);
}
