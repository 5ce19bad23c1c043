//! A short end-to-end training run on a small scenario, evaluated against
//! the greedy dispatch baseline. Bigger runs go through the `hexfleet`
//! binary; this is the in-process version.
//!
//! Run with `cargo run --release --example train_small`.

use hexfleet::agent::{evaluate, pdrsac_train, AblationFlags, EvalPolicy, TrainConfig};
use hexfleet::env::{EnvParams, FleetConfig};
use hexfleet::hexgrid::build_grid;
use hexfleet::scenario::{synth_scenario, SynthConfig};

fn main() {
    let grid = build_grid(4, 4, 0.8, 2, 7, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 288, hotspots: 2, peak_rate: 4.0, seed: 7, dt_min: 5.0 },
    );
    let env_params = EnvParams { peak_price_amp: 1.0, ..EnvParams::default() };
    let fleet = FleetConfig { n_vehicles: 12, feeder_cap_kw: 50.0, ..FleetConfig::default() };
    let config = TrainConfig {
        episodes: 20,
        steps_per_episode: 32,
        warmup_steps: 128,
        batch_size: 16,
        hidden: 32,
        ..TrainConfig::default()
    };

    println!("training {} episodes x {} steps ...", config.episodes, config.steps_per_episode);
    let t0 = std::time::Instant::now();
    let artifacts =
        pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), 0);
    println!(
        "done in {:.0}s; projection status counts (optimal/timeout/fallback): {:?}",
        t0.elapsed().as_secs_f64(),
        artifacts.milp_status
    );
    if let Some(reason) = &artifacts.aborted {
        println!("aborted: {}", reason);
        return;
    }
    let n = artifacts.episode_returns.len();
    println!(
        "episode return: first {:.2} ... last {:.2}",
        artifacts.episode_returns[0],
        artifacts.episode_returns[n - 1]
    );
    if let (Some(first), Some(last)) = (artifacts.lambda_trace.first(), artifacts.lambda_trace.last()) {
        println!("dual variable: {:.3} -> {:.3}", first, last);
    }

    let trained = evaluate(
        &EvalPolicy::Trained { params: &artifacts.params, no_milp: false, mu: 0.5, tau_max_s: 3.0 },
        &grid, &dataset, &fleet, &env_params, 5, 32, 17,
    );
    let greedy = evaluate(
        &EvalPolicy::Greedy { max_pickup_hops: 3 },
        &grid, &dataset, &fleet, &env_params, 5, 32, 17,
    );
    println!(
        "evaluation net profit: trained {:.2} vs greedy {:.2} (served {} vs {})",
        trained.metrics.net_profit,
        greedy.metrics.net_profit,
        trained.metrics.served,
        greedy.metrics.served
    );
}
