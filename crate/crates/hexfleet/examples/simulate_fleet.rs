//! Roll one episode of the semi-MDP under the greedy dispatch policy and
//! print the per-step trace.
//!
//! Run with `cargo run --release --example simulate_fleet`.

use hexfleet::agent::greedy_policy;
use hexfleet::env::{build_candidates, initial_state, step, trace_row, EnvParams, FleetConfig, TRACE_HEADER};
use hexfleet::hexgrid::build_grid;
use hexfleet::scenario::{sample_orders, synth_scenario, SynthConfig};

fn main() {
    let grid = build_grid(4, 4, 0.8, 2, 3, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 96, hotspots: 1, peak_rate: 4.0, seed: 3, dt_min: 5.0 },
    );
    let env_params = EnvParams::default();
    let fleet = FleetConfig { n_vehicles: 10, ..FleetConfig::default() };

    let mut state = initial_state(&grid, &fleet, &env_params, &dataset.fields[0], 5);
    state.open_orders = sample_orders(&dataset.fields[0], 0, 17);

    println!("{}", TRACE_HEADER);
    let steps = 36;
    let mut total = 0.0;
    for k in 0..steps {
        let field = &dataset.fields[k % dataset.horizon()];
        let next_field = &dataset.fields[(k + 1) % dataset.horizon()];
        let candidates = build_candidates(&state, &grid, field, &env_params);
        let action = greedy_policy(&state, &candidates, &grid, &env_params, 3);
        let arrivals = sample_orders(next_field, k + 1, 1000 + k as u64);
        let outcome = step(&state, &action, field, arrivals, &grid, &env_params);
        println!("{}", trace_row(k, &outcome));
        total += outcome.reward;
        state = outcome.next_state;
        state.refresh_demand(next_field);
    }
    let agg = state.aggregates();
    println!(
        "\nreturn over {} steps: {:.2}; fleet now {:.0} idle / {:.0} busy",
        steps,
        total,
        agg.n_idle.iter().sum::<f64>(),
        agg.n_busy.iter().sum::<f64>()
    );
}
