//! The graph-aligned robustness machinery on a real transition: build the
//! ground metric from a dataset, let the scenario adversary run its
//! projected-subgradient loop, assemble the robust value target, and track
//! the dual variable against the risk budget.
//!
//! Run with `cargo run --release --example robust_backup`.

use hexfleet::agent::greedy_policy;
use hexfleet::env::{build_candidates, featurize, initial_state, step, EnvParams, FleetConfig};
use hexfleet::hexgrid::{build_grid, graph_matrices};
use hexfleet::neural::{state_value_and_grad, ParameterSet};
use hexfleet::scenario::{sample_orders, synth_scenario, SynthConfig};
use hexfleet::wdro::{
    chain_feature_grad_to_scenario, flatten_scenario, projected_subgradient_min, resim_features,
    robust_target, BoxKind, DualState, GroundMetric, ResimCache, SupportSet,
};

fn main() {
    let grid = build_grid(4, 4, 0.8, 2, 9, None).unwrap();
    let gm = graph_matrices(&grid);
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 96, hotspots: 2, peak_rate: 4.0, seed: 9, dt_min: 5.0 },
    );
    let env_params = EnvParams::default();
    let fleet = FleetConfig { n_vehicles: 8, ..FleetConfig::default() };

    // one executed transition
    let mut state = initial_state(&grid, &fleet, &env_params, &dataset.fields[0], 1);
    state.open_orders = sample_orders(&dataset.fields[0], 0, 2);
    let candidates = build_candidates(&state, &grid, &dataset.fields[0], &env_params);
    let action = greedy_policy(&state, &candidates, &grid, &env_params, 3);
    let arrivals = sample_orders(&dataset.fields[1], 1, 3);
    let outcome = step(&state, &action, &dataset.fields[0], arrivals.clone(), &grid, &env_params);
    let cache = ResimCache {
        pre_state: state,
        action,
        arrivals,
        arrival_seed: 3,
        xi_hat: flatten_scenario(&dataset.fields[0]),
        frozen_demand_norm: outcome.next_state.demand_norm,
        m: grid.len(),
    };
    println!("transition: reward {:.3}, epoch duration {:.2}", outcome.reward, outcome.epoch_duration());

    // graph-aligned metric and a value surrogate
    let metric = GroundMetric::from_dataset(&dataset, &gm, 0.3);
    let net = ParameterSet::new(grid.len(), hexfleet::env::FEATURE_DIM, 2, 32, 5);
    let (v_center, _) = {
        let phi = featurize(&outcome.next_state);
        state_value_and_grad(&net, &gm.a_hat, &phi, false)
    };
    println!("value at the empirical successor: {:.4}", v_center);

    // inner minimization over the scenario ball
    let (rho, lambda, gamma) = (0.3, 0.5, 0.995f64);
    let ball = 3.0 * rho;
    let set = SupportSet::new(cache.xi_hat.clone(), ball, BoxKind::Scenario { m: grid.len() });
    let inner = projected_subgradient_min(
        |xi| {
            let (phi, delta) = resim_features(&cache, &grid, &env_params, xi);
            let (v, grad) = state_value_and_grad(&net, &gm.a_hat, &phi, true);
            let grad = grad?;
            let disc = gamma.powf(delta);
            let g = chain_feature_grad_to_scenario(&cache, &grad);
            Some((disc * v, g.into_iter().map(|x| x * disc).collect()))
        },
        &metric,
        &set,
        lambda,
        10,
        0.05 * ball,
    );
    println!(
        "adversary moved d_Q = {:.4} (ball radius {:.2}) in {} iterations; worst discounted value {:.4}",
        inner.rho_hat, ball, inner.iterations, inner.discounted_value
    );
    let y = robust_target(outcome.reward, lambda, rho, &inner);
    println!("robust target: {:.4}", y);

    // primal-dual tracking toward the risk budget
    let mut dual = DualState::new(lambda, 0.01, rho, 0.2);
    for _ in 0..200 {
        dual.update(inner.rho_hat);
    }
    println!(
        "after 200 dual updates at rho_hat {:.3}: lambda {:.4} (target {:.2}, violations {:.2})",
        inner.rho_hat, dual.lambda, dual.rho_target, dual.violation_sum
    );
}
