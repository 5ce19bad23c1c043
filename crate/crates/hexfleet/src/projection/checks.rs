//! Randomized micro-instance generation and the oracle-equivalence runner,
//! shared by the CLI check command, the test suite, and acceptance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    build_instance, enumerate_oracle, evaluate_assignment, solve, Intention, SolveLimits,
    SolveStatus, VehicleIntention,
};
use crate::env::{candidate_set, initial_state, Candidate, EnvParams, FleetConfig, SystemState};
use crate::hexgrid::{build_grid, HexGrid};
use crate::scenario::{Order, OrderStatus, ScenarioField};

pub struct Fixture {
    pub grid: HexGrid,
    pub state: SystemState,
    pub params: EnvParams,
    pub field: ScenarioField,
}

impl Fixture {
    pub fn candidates(&self) -> Vec<(usize, Vec<Candidate>)> {
        self.state
            .vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_idle())
            .map(|(i, _)| (i, candidate_set(&self.state, i, &self.grid, &self.field, &self.params)))
            .collect()
    }
}

/// Random micro fixture: a 3x3 grid, a few vehicles (some parked on
/// stations), a few open orders, and a random feeder cap.
pub fn micro_fixture(seed: u64, n_vehicles: usize, n_orders: usize, n_stations: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = build_grid(3, 3, 0.8, n_stations, seed, None).unwrap();
    let params = EnvParams::default();
    let field = ScenarioField::zeros(grid.len());
    let fleet = FleetConfig {
        n_vehicles,
        feeder_cap_kw: rng.random_range(10.0..70.0),
        ..FleetConfig::default()
    };
    let mut state = initial_state(&grid, &fleet, &params, &field, seed);
    for v in state.vehicles.iter_mut() {
        v.hex = rng.random_range(0..grid.len());
        v.energy = rng.random_range(8.0..50.0);
    }
    for (i, &sh) in grid.station_hexes().iter().enumerate() {
        if i < state.vehicles.len() && rng.random::<f64>() < 0.7 {
            state.vehicles[i].hex = sh;
        }
    }
    state.open_orders = (0..n_orders)
        .map(|k| Order {
            id: k as u64,
            origin: rng.random_range(0..grid.len()),
            dest: rng.random_range(0..grid.len()),
            arrival_step: 0,
            wait_steps: 0,
            status: OrderStatus::Open,
        })
        .collect();
    Fixture { grid, state, params, field }
}

/// Random simplex-valid intention over the candidate lists.
pub fn random_intention(
    candidates: &[(usize, Vec<Candidate>)],
    rng: &mut ChaCha8Rng,
    p_max: f64,
) -> Intention {
    let per_vehicle = candidates
        .iter()
        .map(|(_, list)| {
            let mut mode: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
            let ms: f64 = mode.iter().sum();
            for w in mode.iter_mut() {
                *w /= ms;
            }
            let mut tw: Vec<f64> = (0..list.len()).map(|_| rng.random_range(0.01..1.0)).collect();
            let ts: f64 = tw.iter().sum();
            for w in tw.iter_mut() {
                *w /= ts;
            }
            VehicleIntention {
                mode_weights: [mode[0], mode[1], mode[2]],
                target_weights: tw,
                power_kw: rng.random_range(0.0..p_max),
            }
        })
        .collect();
    Intention { per_vehicle }
}

#[derive(Debug, Clone)]
pub struct OracleCheckResult {
    pub trials: usize,
    pub worst_gap: f64,
    pub all_optimal: bool,
    pub pass: bool,
}

/// Solve random micro instances by branch-and-bound and by exhaustive
/// enumeration; both objectives must agree within `1e-6` and the returned
/// action must attain the reported objective exactly. Panics on violation
/// when `strict` is set (tests); the result carries the margins either way.
pub fn oracle_equivalence_trials(n_trials: usize, base_seed: u64, strict: bool) -> OracleCheckResult {
    let mut worst: f64 = 0.0;
    let mut all_optimal = true;
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut done = 0;
    let mut attempt = 0u64;
    while done < n_trials {
        attempt += 1;
        let fx = micro_fixture(
            base_seed.wrapping_add(attempt * 7919),
            rng.random_range(1..=3),
            rng.random_range(0..=3),
            rng.random_range(0..=2),
        );
        let candidates = fx.candidates();
        if candidates.is_empty() {
            continue;
        }
        let mu = if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.0..1.0) };
        let intention = random_intention(&candidates, &mut rng, 30.0);
        let instance = build_instance(&fx.state, &intention, &candidates, mu, &fx.params);
        let Ok((_, oracle_obj)) = enumerate_oracle(&instance) else {
            continue;
        };
        let (bnb_assign, report) = solve(&instance, SolveLimits::with_tau(10.0)).unwrap();
        if report.status != SolveStatus::Optimal {
            all_optimal = false;
            pass = false;
            if strict {
                panic!("micro instance did not solve to proof (attempt {})", attempt);
            }
        }
        let gap = (report.objective - oracle_obj).abs();
        worst = worst.max(gap);
        if gap >= 1e-6 {
            pass = false;
            if strict {
                panic!("bnb {} vs oracle {} (attempt {})", report.objective, oracle_obj, attempt);
            }
        }
        let attained = evaluate_assignment(&instance, &bnb_assign);
        if (attained - report.objective).abs() >= 1e-9 {
            pass = false;
            if strict {
                panic!("returned action does not attain the reported objective");
            }
        }
        // seeded-incumbent dominance
        if let Some(seeded) = instance.seed.as_ref() {
            let seeded_obj = evaluate_assignment(&instance, seeded);
            if report.objective < seeded_obj - 1e-9 {
                pass = false;
                if strict {
                    panic!("solver fell below its seeded incumbent");
                }
            }
        }
        done += 1;
    }
    OracleCheckResult { trials: done, worst_gap: worst, all_optimal, pass }
}
