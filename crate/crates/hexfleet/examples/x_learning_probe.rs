use hexfleet::agent::{evaluate, pdrsac_train, AblationFlags, EvalPolicy, TrainConfig};
use hexfleet::env::{EnvParams, FleetConfig};
use hexfleet::hexgrid::build_grid;
use hexfleet::scenario::{synth_scenario, SynthConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let episodes: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(180);
    let grid = build_grid(6, 6, 0.8, 2, 7, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 288, hotspots: 2, peak_rate: 3.0, seed: 7, dt_min: 5.0 },
    );
    let fleet = FleetConfig { n_vehicles: 12, feeder_cap_kw: 60.0, ..FleetConfig::default() };
    let env_params = EnvParams { peak_price_amp: 1.0, ..EnvParams::default() };
    let config = TrainConfig {
        episodes,
        steps_per_episode: 40,
        warmup_steps: 256,
        batch_size: 32,
        lr_actor: 3e-4,
        lr_critic: 5e-4,
        lr_value: 5e-4,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let artifacts =
        pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), seed);
    println!("train {:.0}s aborted {:?}", t0.elapsed().as_secs_f64(), artifacts.aborted);
    let n = artifacts.episode_returns.len();
    let first100: f64 =
        artifacts.episode_returns.iter().take(100).sum::<f64>() / 100.0_f64.min(n as f64);
    let last100: f64 = artifacts.episode_returns[n.saturating_sub(100)..].iter().sum::<f64>()
        / 100.0_f64.min(n as f64);
    println!("episode returns: first100 {:.2} last100 {:.2}", first100, last100);

    // lambda / rho_hat traces
    let lmin = artifacts.lambda_trace.iter().cloned().fold(f64::INFINITY, f64::min);
    let ups = artifacts.rho_hat_trace.len();
    let quarter = ups / 4;
    let ma = |xs: &[f64]| -> Vec<f64> {
        xs.windows(500.min(xs.len().max(1))).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
    };
    let mas = ma(&artifacts.rho_hat_trace);
    let var = |xs: &[f64]| -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    };
    let v_first = var(&mas[..quarter.min(mas.len())]);
    let v_last = var(&mas[mas.len().saturating_sub(quarter)..]);
    println!(
        "lambda min {:.4} rho_hat updates {} ma-var first {:.3e} last {:.3e} (want last < first)",
        lmin, ups, v_first, v_last
    );

    let eval_trained = evaluate(
        &EvalPolicy::Trained { params: &artifacts.params, no_milp: false, mu: 0.5, tau_max_s: 3.0 },
        &grid, &dataset, &fleet, &env_params, 20, 40, 1234,
    );
    let eval_greedy = evaluate(
        &EvalPolicy::Greedy { max_pickup_hops: 3 },
        &grid, &dataset, &fleet, &env_params, 20, 40, 1234,
    );
    println!(
        "trained profit {:.2} vs greedy {:.2} (ratio {:.3}); served {} vs {}",
        eval_trained.metrics.net_profit,
        eval_greedy.metrics.net_profit,
        eval_trained.metrics.net_profit / eval_greedy.metrics.net_profit,
        eval_trained.metrics.served,
        eval_greedy.metrics.served
    );
    println!("total wall {:.0}s", t0.elapsed().as_secs_f64());
}
