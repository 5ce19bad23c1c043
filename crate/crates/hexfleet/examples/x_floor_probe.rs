use hexfleet::agent::{evaluate, EvalPolicy};
use hexfleet::env::{EnvParams, FleetConfig, FEATURE_DIM};
use hexfleet::hexgrid::build_grid;
use hexfleet::neural::ParameterSet;
use hexfleet::scenario::{synth_scenario, SynthConfig};

fn main() {
    for (rows, cols, n_veh, peak, hotspots) in [
        (7, 7, 12, 2.5, 2),
        (7, 7, 12, 3.5, 2),
        (7, 7, 16, 3.5, 3),
        (6, 6, 12, 3.0, 2),
        (6, 6, 10, 2.5, 2),
    ] {
        let grid = build_grid(rows, cols, 0.8, 2, 7, None).unwrap();
        let dataset = synth_scenario(
            &grid,
            &SynthConfig { horizon: 288, hotspots, peak_rate: peak, seed: 7, dt_min: 5.0 },
        );
        let env_params = EnvParams { peak_price_amp: 1.0, ..EnvParams::default() };
        let fleet = FleetConfig { n_vehicles: n_veh, feeder_cap_kw: 60.0, ..FleetConfig::default() };
        let params = ParameterSet::new(grid.len(), FEATURE_DIM, 2, 64, 0);

        let greedy = evaluate(&EvalPolicy::Greedy { max_pickup_hops: 3 }, &grid, &dataset, &fleet, &env_params, 10, 40, 1234);
        let mut line = format!(
            "{}x{} veh {:>2} peak {:.1} hs {}: greedy {:>7.1} (served {:>4})",
            rows, cols, n_veh, peak, hotspots, greedy.metrics.net_profit, greedy.metrics.served
        );
        for mu in [0.5, 0.1] {
            let untrained = evaluate(
                &EvalPolicy::Trained { params: &params, no_milp: false, mu, tau_max_s: 0.5 },
                &grid, &dataset, &fleet, &env_params, 10, 40, 1234,
            );
            line.push_str(&format!(
                " | mu {:.1}: {:>7.1} (x{:.3}, served {:>4})",
                mu,
                untrained.metrics.net_profit,
                untrained.metrics.net_profit / greedy.metrics.net_profit,
                untrained.metrics.served
            ));
        }
        println!("{}", line);
    }
}
