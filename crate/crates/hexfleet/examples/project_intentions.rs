//! The feasible-action layer end to end: build an epoch's MILP from a raw
//! intention, solve it by branch-and-bound, compare against the greedy
//! fallback and the exhaustive oracle, and print the CPLEX-LP export.
//!
//! Run with `cargo run --release --example project_intentions`.

use hexfleet::env::{build_candidates, initial_state, EnvParams, FleetConfig};
use hexfleet::hexgrid::build_grid;
use hexfleet::projection::{
    assignment_of_action, build_instance, checks, dump_lp_format, enumerate_oracle,
    evaluate_assignment, greedy_fallback, project, SolveLimits,
};
use hexfleet::scenario::{sample_orders, synth_scenario, SynthConfig};
use rand::SeedableRng;

fn main() {
    let grid = build_grid(3, 3, 0.8, 1, 2, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 8, hotspots: 1, peak_rate: 3.0, seed: 2, dt_min: 5.0 },
    );
    let env_params = EnvParams::default();
    let fleet = FleetConfig { n_vehicles: 3, feeder_cap_kw: 35.0, ..FleetConfig::default() };
    let mut state = initial_state(&grid, &fleet, &env_params, &dataset.fields[0], 4);
    state.vehicles[0].hex = grid.station_hexes()[0];
    state.vehicles[0].energy = 12.0;
    state.open_orders = sample_orders(&dataset.fields[0], 0, 8);
    println!(
        "epoch: {} idle vehicles, {} open orders, feeder cap {} kW",
        state.vehicles.len(),
        state.open_orders.len(),
        state.feeder_cap_kw
    );

    let candidates = build_candidates(&state, &grid, &dataset.fields[0], &env_params);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let intention = checks::random_intention(&candidates, &mut rng, 30.0);

    let (action, report) =
        project(&state, &intention, &candidates, 0.5, SolveLimits::default(), &grid, &env_params);
    println!("\nprojected action ({:?}, {} nodes, {:.1} ms):", report.status, report.node_count, report.wall_time_s * 1e3);
    for (vi, task) in &action.tasks {
        println!("  vehicle {}: {:?}", vi, task);
    }
    println!("objective {:.4}, bound {:.4}", report.objective, report.best_bound);

    let greedy = greedy_fallback(&state, &candidates, &env_params);
    let instance = build_instance(&state, &intention, &candidates, 0.5, &env_params);
    let greedy_obj = evaluate_assignment(&instance, &assignment_of_action(&instance, &greedy));
    println!("greedy fallback objective {:.4} (solver must dominate)", greedy_obj);

    if let Ok((_, oracle_obj)) = enumerate_oracle(&instance) {
        println!("exhaustive oracle objective  {:.4} (gap {:.2e})", oracle_obj, (oracle_obj - report.objective).abs());
    }

    let lp_text = dump_lp_format(&instance);
    println!("\nCPLEX-LP export, first lines:");
    for line in lp_text.lines().take(6) {
        println!("  {}", line);
    }
}
