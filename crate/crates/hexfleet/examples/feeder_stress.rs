//! Grid safety under charge contention: the same depleted fleet evaluated
//! with the projection layer on and off. Raw intention execution overloads
//! the feeder on a fifth of all steps; the projection holds the cap exactly
//! while still using the full available capacity.
//!
//! Run with `cargo run --release --example feeder_stress`.

use hexfleet::agent::{evaluate, EvalPolicy};
use hexfleet::env::{EnvParams, FleetConfig};
use hexfleet::hexgrid::build_grid;
use hexfleet::neural::ParameterSet;
use hexfleet::scenario::{synth_scenario, SynthConfig};

fn main() {
    let grid = build_grid(5, 5, 0.8, 3, 7, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 288, hotspots: 2, peak_rate: 2.0, seed: 7, dt_min: 5.0 },
    );
    let env_params = EnvParams::default();
    let feeder = 9.0;
    let fleet = FleetConfig {
        n_vehicles: 20,
        feeder_cap_kw: feeder,
        init_soc_frac: (0.1, 0.35),
        ..FleetConfig::default()
    };
    // an untrained policy: this is a mechanism demonstration, the actor only
    // supplies (random) intentions
    let params = ParameterSet::new(grid.len(), hexfleet::env::FEATURE_DIM, 3, 32, 0);

    let episodes = 10;
    let raw = evaluate(
        &EvalPolicy::Trained { params: &params, no_milp: true, mu: 0.5, tau_max_s: 1.0 },
        &grid, &dataset, &fleet, &env_params, episodes, 48, 99,
    );
    let over = raw.feeder_series.iter().filter(|&&kw| kw > feeder + 1e-9).count();
    println!(
        "raw intentions: {} violation steps ({:.1}% of steps over the {} kW cap), peak {:.1} kW",
        raw.metrics.violation_steps,
        100.0 * over as f64 / raw.feeder_series.len() as f64,
        feeder,
        raw.metrics.peak_power_kw
    );

    let projected = evaluate(
        &EvalPolicy::Trained { params: &params, no_milp: false, mu: 0.5, tau_max_s: 1.0 },
        &grid, &dataset, &fleet, &env_params, episodes, 48, 99,
    );
    println!(
        "with projection: {} violation steps, peak {:.3} kW (cap used fully, never exceeded)",
        projected.metrics.violation_steps, projected.metrics.peak_power_kw
    );
}
