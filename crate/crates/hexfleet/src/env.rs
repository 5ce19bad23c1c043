//! Semi-MDP fleet environment: per-vehicle candidate sets behind the
//! state-of-charge guard, aggregate featurization, physics stepping with
//! variable action durations, and the four-component reward.
//!
//! Decision epochs occur every tick; only idle vehicles act. Serve and
//! reposition are atomic multi-tick commitments; charging is a one-step
//! action so power levels are re-evaluated frequently. Revenue is booked at
//! assignment time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hexgrid::{CellId, HexGrid};
use crate::linalg::Mat;
use crate::projection::{FeasibleAction, VehicleTask};
use crate::scenario::{diurnal_profile, FareModel, Order, OrderStatus, ScenarioField};

/// Number of per-hex features produced by [`featurize`].
pub const FEATURE_DIM: usize = 12;

/// Feature column indices for the demand context (the adversary's gradient
/// path flows through these).
pub const COL_DEMAND_OUT: usize = 3;
pub const COL_DEMAND_IN: usize = 4;

/// Vehicle occupancy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VehicleStatus {
    Idle,
    Busy { release_step: usize, release_hex: CellId, release_energy: f64 },
}

/// One vehicle: location, battery energy, and occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub hex: CellId,
    pub energy: f64,
    pub status: VehicleStatus,
    pub e_min: f64,
    pub e_max: f64,
}

impl VehicleState {
    pub fn is_idle(&self) -> bool {
        matches!(self.status, VehicleStatus::Idle)
    }
}

/// Drive-train and charger efficiency constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    /// Consumption in kWh per km driven.
    pub eta_drv: f64,
    /// Charging efficiency in (0, 1].
    pub eta_c: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { eta_drv: 0.18, eta_c: 0.9 }
    }
}

/// A charging site co-located with a hex.
#[derive(Debug, Clone, PartialEq)]
pub struct StationState {
    pub hex: CellId,
    pub ports_total: u32,
    pub ports_busy: u32,
    /// Vehicles co-located and asking to charge beyond free ports this tick.
    /// Zero whenever actions come from the feasibility layer.
    pub queue: u32,
    /// Electricity price, currency per kWh.
    pub price: f64,
    /// Maximum charging power per vehicle, kW.
    pub p_max_kw: f64,
}

/// Reward weights and the order-drop deadline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Driving cost, currency per km.
    pub c_drv: f64,
    pub lambda_wait: f64,
    pub lambda_drop: f64,
    /// Steps an order may wait before it is dropped.
    pub w_max: u32,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { c_drv: 0.3, lambda_wait: 0.5, lambda_drop: 0.1, w_max: 6 }
    }
}

/// Everything the stepper needs besides the state itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub energy: EnergyModel,
    pub rewards: RewardParams,
    pub fare: FareModel,
    /// Minimum admissible nonzero charging power, kW.
    pub p_min_kw: f64,
    /// Step length in minutes.
    pub dt_min: f64,
    /// Base electricity price, currency per kWh.
    pub base_price: f64,
    /// Time-of-use amplitude: price(t) = base * (1 + amp * diurnal(t)).
    pub peak_price_amp: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            energy: EnergyModel::default(),
            rewards: RewardParams::default(),
            fare: FareModel::default(),
            p_min_kw: 1.0,
            dt_min: 5.0,
            base_price: 0.18,
            peak_price_amp: 0.0,
        }
    }
}

impl EnvParams {
    pub fn dt_hours(&self) -> f64 {
        self.dt_min / 60.0
    }

    pub fn station_price(&self, step: usize) -> f64 {
        self.base_price * (1.0 + self.peak_price_amp * diurnal_profile(step, self.dt_min))
    }
}

/// Fleet sizing for [`initial_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetConfig {
    pub n_vehicles: usize,
    pub e_max: f64,
    pub e_min: f64,
    /// Initial state of charge drawn uniformly from this range, as fractions
    /// of `e_max`.
    pub init_soc_frac: (f64, f64),
    pub ports_per_station: u32,
    pub station_p_max_kw: f64,
    pub feeder_cap_kw: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_vehicles: 20,
            e_max: 50.0,
            e_min: 5.0,
            init_soc_frac: (0.5, 0.9),
            ports_per_station: 5,
            station_p_max_kw: 30.0,
            feeder_cap_kw: 60.0,
        }
    }
}

/// Full pre-decision system state: raw roster plus the aggregate context the
/// encoder consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub step: usize,
    pub vehicles: Vec<VehicleState>,
    pub stations: Vec<StationState>,
    pub open_orders: Vec<Order>,
    /// Orders assigned but not yet completed, keyed by trip release step.
    pub in_service: Vec<(usize, Order)>,
    pub feeder_cap_kw: f64,
    /// Demand outflow per hex under the scenario this state was built from.
    pub demand_out: Vec<f64>,
    pub demand_in: Vec<f64>,
    /// Running max of demand entries, used as the feature normalizer.
    pub demand_norm: f64,
    pub dt_min: f64,
}

/// Per-hex aggregates recomputed from the roster.
#[derive(Debug, Clone, PartialEq)]
pub struct HexAggregates {
    pub n_idle: Vec<f64>,
    pub n_busy: Vec<f64>,
    /// Mean post-trip energy of busy vehicles counted at their release hex;
    /// zero where no busy vehicles.
    pub mean_busy_energy: Vec<f64>,
}

impl SystemState {
    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn m(&self) -> usize {
        self.demand_out.len()
    }

    pub fn steps_per_day(&self) -> f64 {
        24.0 * 60.0 / self.dt_min
    }

    /// Recompute per-hex fleet aggregates from the roster. Busy vehicles are
    /// counted at their release hex with their post-trip energy.
    pub fn aggregates(&self) -> HexAggregates {
        let m = self.m();
        let mut n_idle = vec![0.0; m];
        let mut n_busy = vec![0.0; m];
        let mut busy_e = vec![0.0; m];
        for v in &self.vehicles {
            match v.status {
                VehicleStatus::Idle => n_idle[v.hex] += 1.0,
                VehicleStatus::Busy { release_hex, release_energy, .. } => {
                    n_busy[release_hex] += 1.0;
                    busy_e[release_hex] += release_energy;
                }
            }
        }
        let mean_busy_energy =
            (0..m).map(|h| if n_busy[h] > 0.0 { busy_e[h] / n_busy[h] } else { 0.0 }).collect();
        HexAggregates { n_idle, n_busy, mean_busy_energy }
    }

    /// Replace the demand context with another scenario field (used when the
    /// rollout advances to the next epoch's field) and update the running
    /// normalizer.
    pub fn refresh_demand(&mut self, field: &ScenarioField) {
        self.demand_out = field.outflow();
        self.demand_in = field.inflow();
        let max_entry = field.demand_raw().iter().cloned().fold(0.0, f64::max);
        self.demand_norm = self.demand_norm.max(max_entry);
    }
}

/// Build the initial state: vehicles placed uniformly at random with seeded
/// state of charge, stations from the grid's station hexes.
pub fn initial_state(
    grid: &HexGrid,
    fleet: &FleetConfig,
    params: &EnvParams,
    field0: &ScenarioField,
    seed: u64,
) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = grid.len();
    let vehicles = (0..fleet.n_vehicles)
        .map(|_| {
            let hex = rng.random_range(0..m);
            let frac = rng.random_range(fleet.init_soc_frac.0..=fleet.init_soc_frac.1);
            VehicleState {
                hex,
                energy: frac * fleet.e_max,
                status: VehicleStatus::Idle,
                e_min: fleet.e_min,
                e_max: fleet.e_max,
            }
        })
        .collect();
    let stations = grid
        .station_hexes()
        .iter()
        .map(|&hex| StationState {
            hex,
            ports_total: fleet.ports_per_station,
            ports_busy: 0,
            queue: 0,
            price: params.station_price(0),
            p_max_kw: fleet.station_p_max_kw,
        })
        .collect();
    let mut state = SystemState {
        step: 0,
        vehicles,
        stations,
        open_orders: Vec::new(),
        in_service: Vec::new(),
        feeder_cap_kw: fleet.feeder_cap_kw,
        demand_out: vec![0.0; m],
        demand_in: vec![0.0; m],
        demand_norm: 1e-6,
        dt_min: params.dt_min,
    };
    state.refresh_demand(field0);
    state
}

/// One admissible per-vehicle option.
#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Serve {
        order_id: u64,
        pickup: CellId,
        dest: CellId,
        fare: f64,
        /// Pickup plus trip distance in km.
        dist_km: f64,
        energy_kwh: f64,
        duration: u32,
    },
    Reposition {
        target: CellId,
        dist_km: f64,
        energy_kwh: f64,
        duration: u32,
    },
    Charge {
        station_idx: usize,
        hex: CellId,
        /// Feasible power ceiling: min of the per-vehicle station limit and
        /// the battery headroom this step.
        p_max_eff_kw: f64,
        price: f64,
    },
    Idle,
}

/// Candidate set for one idle vehicle: guard-passing orders, energy-feasible
/// neighbor repositions, a co-located station when the battery can accept at
/// least the minimum power, and always the stay-idle floor (last).
pub fn candidate_set(
    state: &SystemState,
    vehicle_idx: usize,
    grid: &HexGrid,
    field: &ScenarioField,
    params: &EnvParams,
) -> Vec<Candidate> {
    let v = &state.vehicles[vehicle_idx];
    assert!(v.is_idle(), "candidate_set called on a busy vehicle");
    let mut out = Vec::new();
    let eta = params.energy.eta_drv;

    for order in &state.open_orders {
        if order.status != OrderStatus::Open {
            continue;
        }
        let d_pk = grid.distance_km(v.hex, order.origin);
        let d_trip = grid.distance_km(order.origin, order.dest);
        let energy = eta * (d_pk + d_trip);
        if v.energy >= energy + v.e_min {
            let duration =
                field.travel(v.hex, order.origin) as u32 + field.travel(order.origin, order.dest) as u32;
            out.push(Candidate::Serve {
                order_id: order.id,
                pickup: order.origin,
                dest: order.dest,
                fare: crate::scenario::fare(&params.fare, order.origin, order.dest, grid),
                dist_km: d_pk + d_trip,
                energy_kwh: energy,
                duration,
            });
        }
    }

    for &g in grid.neighbors(v.hex) {
        let d = grid.distance_km(v.hex, g);
        let energy = eta * d;
        if v.energy - energy >= v.e_min {
            out.push(Candidate::Reposition {
                target: g,
                dist_km: d,
                energy_kwh: energy,
                duration: field.travel(v.hex, g) as u32,
            });
        }
    }

    for (si, st) in state.stations.iter().enumerate() {
        if st.hex != v.hex {
            continue;
        }
        let headroom_kw = (v.e_max - v.energy) / (params.energy.eta_c * params.dt_hours());
        let ceil = st.p_max_kw.min(headroom_kw);
        if ceil >= params.p_min_kw {
            out.push(Candidate::Charge { station_idx: si, hex: st.hex, p_max_eff_kw: ceil, price: st.price });
        }
    }

    out.push(Candidate::Idle);
    out
}

/// Candidate sets for every idle vehicle, in vehicle-index order.
pub fn build_candidates(
    state: &SystemState,
    grid: &HexGrid,
    field: &ScenarioField,
    params: &EnvParams,
) -> Vec<(usize, Vec<Candidate>)> {
    state
        .vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_idle())
        .map(|(i, _)| (i, candidate_set(state, i, grid, field, params)))
        .collect()
}

/// Per-hex feature matrix `m x 12` in the fixed column order
/// `[n_idle, n_busy, mean_busy_soc, demand_out, demand_in, station_present,
/// port_free_frac, queue, price, p_max_frac, sin_tod, cos_tod]`.
/// Counts are normalized by fleet size, energies by `e_max`, demand by the
/// running max.
pub fn featurize(state: &SystemState) -> Mat {
    let m = state.m();
    let n = state.n_vehicles().max(1) as f64;
    let agg = state.aggregates();
    let e_max = state.vehicles.first().map_or(1.0, |v| v.e_max).max(1e-9);
    let norm = state.demand_norm.max(1e-6);
    let phase = 2.0 * std::f64::consts::PI * state.step as f64 / state.steps_per_day();

    let mut phi = Mat::zeros(m, FEATURE_DIM);
    for h in 0..m {
        phi[(h, 0)] = agg.n_idle[h] / n;
        phi[(h, 1)] = agg.n_busy[h] / n;
        phi[(h, 2)] = agg.mean_busy_energy[h] / e_max;
        phi[(h, 3)] = state.demand_out[h] / norm;
        phi[(h, 4)] = state.demand_in[h] / norm;
        phi[(h, 10)] = phase.sin();
        phi[(h, 11)] = phase.cos();
    }
    for st in &state.stations {
        let h = st.hex;
        phi[(h, 5)] = 1.0;
        phi[(h, 6)] = (st.ports_total.saturating_sub(st.ports_busy)) as f64 / st.ports_total.max(1) as f64;
        phi[(h, 7)] = st.queue as f64 / n;
        phi[(h, 8)] = st.price;
        phi[(h, 9)] = st.p_max_kw / state.feeder_cap_kw.max(1e-9);
    }
    phi
}

/// Everything one step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub revenue: f64,
    pub drive_cost: f64,
    pub elec_cost: f64,
    pub penalty: f64,
    pub next_state: SystemState,
    /// `(vehicle index, duration in steps)` for every acting vehicle.
    pub durations: Vec<(usize, u32)>,
    pub served_ids: Vec<u64>,
    pub dropped_ids: Vec<u64>,
    pub total_power_kw: f64,
    pub feeder_violation: bool,
}

impl StepOutcome {
    /// Vehicle-count-weighted epoch duration used by the duration-aware
    /// backup (idle and charge count 1, trips their full length).
    pub fn epoch_duration(&self) -> f64 {
        if self.durations.is_empty() {
            return 1.0;
        }
        let total: u32 = self.durations.iter().map(|&(_, d)| d).sum();
        total as f64 / self.durations.len() as f64
    }
}

/// Advance the environment one epoch under a feasible action.
///
/// Panics on actions that reference unknown orders or stations, double-book
/// an order, or act on busy vehicles: those are contract violations of the
/// projection layer, not environment conditions.
pub fn step(
    state: &SystemState,
    action: &FeasibleAction,
    field: &ScenarioField,
    new_orders: Vec<Order>,
    grid: &HexGrid,
    params: &EnvParams,
) -> StepOutcome {
    let t = state.step;
    let mut next = state.clone();
    let eta = params.energy.eta_drv;
    let dt_h = params.dt_hours();

    let mut revenue = 0.0;
    let mut drive_cost = 0.0;
    let mut elec_cost = 0.0;
    let mut durations = Vec::with_capacity(action.tasks.len());
    let mut served_ids = Vec::new();
    let mut total_power = 0.0;
    let mut chargers_per_station = vec![0u32; state.stations.len()];

    let mut seen = vec![false; state.vehicles.len()];
    for &(vi, ref task) in &action.tasks {
        assert!(vi < next.vehicles.len(), "action references unknown vehicle {}", vi);
        assert!(!seen[vi], "action assigns vehicle {} twice", vi);
        seen[vi] = true;
        assert!(next.vehicles[vi].is_idle(), "action drives busy vehicle {}", vi);
        let vhex = next.vehicles[vi].hex;
        match *task {
            VehicleTask::Serve { order_id } => {
                let oi = next
                    .open_orders
                    .iter()
                    .position(|o| o.id == order_id && o.status == OrderStatus::Open)
                    .unwrap_or_else(|| panic!("action serves unknown or taken order {}", order_id));
                let mut order = next.open_orders.remove(oi);
                let d_pk = grid.distance_km(vhex, order.origin);
                let d_trip = grid.distance_km(order.origin, order.dest);
                let dur = field.travel(vhex, order.origin) as u32
                    + field.travel(order.origin, order.dest) as u32;
                let energy = eta * (d_pk + d_trip);
                revenue += crate::scenario::fare(&params.fare, order.origin, order.dest, grid);
                drive_cost += params.rewards.c_drv * (d_pk + d_trip);
                let v = &mut next.vehicles[vi];
                v.status = VehicleStatus::Busy {
                    release_step: t + dur as usize,
                    release_hex: order.dest,
                    release_energy: v.energy - energy,
                };
                order.status = OrderStatus::Assigned;
                served_ids.push(order.id);
                next.in_service.push((t + dur as usize, order));
                durations.push((vi, dur));
            }
            VehicleTask::Reposition { target } => {
                assert!(
                    grid.neighbors(vhex).contains(&target),
                    "reposition target {} is not adjacent to {}",
                    target,
                    vhex
                );
                let d = grid.distance_km(vhex, target);
                let dur = field.travel(vhex, target) as u32;
                drive_cost += params.rewards.c_drv * d;
                let v = &mut next.vehicles[vi];
                v.status = VehicleStatus::Busy {
                    release_step: t + dur as usize,
                    release_hex: target,
                    release_energy: v.energy - eta * d,
                };
                durations.push((vi, dur));
            }
            VehicleTask::Charge { station_idx, power_kw } => {
                assert!(station_idx < next.stations.len(), "action charges at unknown station {}", station_idx);
                let st = &next.stations[station_idx];
                assert_eq!(st.hex, vhex, "vehicle {} is not at station {}", vi, station_idx);
                elec_cost += st.price * power_kw * dt_h;
                total_power += power_kw;
                chargers_per_station[station_idx] += 1;
                let v = &mut next.vehicles[vi];
                v.energy = (v.energy + params.energy.eta_c * power_kw * dt_h).min(v.e_max);
                durations.push((vi, 1));
            }
            VehicleTask::Idle => {
                durations.push((vi, 1));
            }
        }
    }

    // Waiting and drops on orders still open after assignment.
    let w_max = params.rewards.w_max;
    let mut dropped_ids = Vec::new();
    let mut wait_sum = 0.0;
    next.open_orders.retain_mut(|o| {
        o.wait_steps += 1;
        if o.wait_steps >= w_max {
            o.status = OrderStatus::Dropped;
            dropped_ids.push(o.id);
            false
        } else {
            wait_sum += o.wait_steps as f64;
            true
        }
    });
    let penalty =
        params.rewards.lambda_wait * wait_sum + params.rewards.lambda_drop * dropped_ids.len() as f64;

    // New arrivals join the pool for the next epoch.
    next.open_orders.extend(new_orders);

    // Advance the clock and release trips that complete.
    next.step = t + 1;
    for v in next.vehicles.iter_mut() {
        if let VehicleStatus::Busy { release_step, release_hex, release_energy } = v.status {
            if release_step <= next.step {
                v.hex = release_hex;
                v.energy = release_energy;
                v.status = VehicleStatus::Idle;
            }
        }
    }
    next.in_service.retain_mut(|(release, order)| {
        if *release <= next.step {
            order.status = OrderStatus::Served;
            false
        } else {
            true
        }
    });

    // Station bookkeeping for the post-step state.
    let price = params.station_price(next.step);
    for (si, st) in next.stations.iter_mut().enumerate() {
        st.ports_busy = chargers_per_station[si].min(st.ports_total);
        st.queue = chargers_per_station[si].saturating_sub(st.ports_total);
        st.price = price;
    }

    // The successor keeps this epoch's demand context; the rollout driver
    // refreshes it before the next decision.
    next.refresh_demand(field);

    let feeder_violation = total_power > state.feeder_cap_kw + 1e-9;
    let reward = revenue - drive_cost - elec_cost - penalty;
    StepOutcome {
        reward,
        revenue,
        drive_cost,
        elec_cost,
        penalty,
        next_state: next,
        durations,
        served_ids,
        dropped_ids,
        total_power_kw: total_power,
        feeder_violation,
    }
}

/// Header for the episode trace CSV.
pub const TRACE_HEADER: &str = "t,reward,revenue,drive_cost,elec_cost,penalty,served,dropped,total_kw,violation";

/// One trace row per executed step.
pub fn trace_row(t: usize, o: &StepOutcome) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{}",
        t,
        o.reward,
        o.revenue,
        o.drive_cost,
        o.elec_cost,
        o.penalty,
        o.served_ids.len(),
        o.dropped_ids.len(),
        o.total_power_kw,
        o.feeder_violation as u8
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgrid::build_grid;
    use crate::scenario::{synth_scenario, SynthConfig};

    fn setup(rows: usize, cols: usize, n_vehicles: usize, n_stations: usize) -> (HexGrid, SystemState, EnvParams, ScenarioField) {
        let grid = build_grid(rows, cols, 0.8, n_stations, 0, None).unwrap();
        let params = EnvParams::default();
        let ds = synth_scenario(
            &grid,
            &SynthConfig { horizon: 4, hotspots: 1, peak_rate: 2.0, seed: 1, dt_min: 5.0 },
        );
        let fleet = FleetConfig { n_vehicles, ..FleetConfig::default() };
        let state = initial_state(&grid, &fleet, &params, &ds.fields[0], 3);
        (grid, state, params, ds.fields[0].clone())
    }

    fn idle_action(state: &SystemState) -> FeasibleAction {
        let tasks = state
            .vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_idle())
            .map(|(i, _)| (i, VehicleTask::Idle))
            .collect();
        FeasibleAction { tasks, station_power_kw: vec![0.0; state.stations.len()], total_power_kw: 0.0 }
    }

    #[test]
    fn null_action_leaves_state_unchanged_except_time() {
        let (grid, state, params, field) = setup(3, 3, 5, 1);
        let mut quiet = state.clone();
        quiet.open_orders.clear();
        let out = step(&quiet, &idle_action(&quiet), &field, Vec::new(), &grid, &params);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.next_state.step, quiet.step + 1);
        assert_eq!(out.next_state.vehicles, quiet.vehicles);
        assert!(!out.feeder_violation);
    }

    #[test]
    fn charge_cap_binds_at_e_max() {
        let (grid, mut state, params, field) = setup(3, 3, 1, 1);
        let st_hex = state.stations[0].hex;
        state.vehicles[0] =
            VehicleState { hex: st_hex, energy: 48.0, status: VehicleStatus::Idle, e_min: 5.0, e_max: 50.0 };
        let action = FeasibleAction {
            tasks: vec![(0, VehicleTask::Charge { station_idx: 0, power_kw: 30.0 })],
            station_power_kw: vec![30.0],
            total_power_kw: 30.0,
        };
        let out = step(&state, &action, &field, Vec::new(), &grid, &params);
        // E' = min(50, 48 + 0.9 * 30 * (5/60)) = min(50, 50.25) = 50
        assert!((out.next_state.vehicles[0].energy - 50.0).abs() < 1e-12);
        assert!((out.elec_cost - state.stations[0].price * 30.0 * (5.0 / 60.0)).abs() < 1e-12);
    }

    #[test]
    fn serve_reward_matches_hand_computation() {
        // fare 4.9, 3 km driven at c_drv 0.3: r = 4.9 - 0.9 = 4.0
        let grid = build_grid(1, 4, 1.0, 0, 0, None).unwrap();
        let mut params = EnvParams::default();
        params.fare = FareModel { base_fare: 1.9, per_km: 1.0 };
        params.rewards.c_drv = 0.3;
        params.energy.eta_drv = 0.2;
        let field = ScenarioField::zeros(4);
        let fleet = FleetConfig { n_vehicles: 1, ..FleetConfig::default() };
        let mut state = initial_state(&grid, &fleet, &params, &field, 0);
        state.vehicles[0].hex = 0;
        state.vehicles[0].energy = 40.0;
        state.open_orders.push(Order {
            id: 42,
            origin: 0,
            dest: 3,
            arrival_step: 0,
            wait_steps: 0,
            status: OrderStatus::Open,
        });
        let action = FeasibleAction {
            tasks: vec![(0, VehicleTask::Serve { order_id: 42 })],
            station_power_kw: Vec::new(),
            total_power_kw: 0.0,
        };
        let out = step(&state, &action, &field, Vec::new(), &grid, &params);
        assert!((out.revenue - 4.9).abs() < 1e-12);
        assert!((out.drive_cost - 0.9).abs() < 1e-12);
        assert!((out.reward - 4.0).abs() < 1e-12);
        assert_eq!(out.served_ids, vec![42]);
        // energy drops by eta_drv * 3 km = 0.6 at release
        match out.next_state.vehicles[0].status {
            VehicleStatus::Busy { release_energy, release_hex, .. } => {
                assert!((release_energy - 39.4).abs() < 1e-12);
                assert_eq!(release_hex, 3);
            }
            _ => panic!("vehicle should be busy"),
        }
    }

    #[test]
    fn serve_duration_releases_exactly_on_time() {
        let (grid, mut state, params, field) = setup(3, 3, 1, 0);
        state.vehicles[0].hex = 0;
        state.vehicles[0].energy = 45.0;
        state.open_orders = vec![Order {
            id: 7,
            origin: 4,
            dest: 8,
            arrival_step: 0,
            wait_steps: 0,
            status: OrderStatus::Open,
        }];
        let expect_dur = field.travel(0, 4) as usize + field.travel(4, 8) as usize;
        let action = FeasibleAction {
            tasks: vec![(0, VehicleTask::Serve { order_id: 7 })],
            station_power_kw: Vec::new(),
            total_power_kw: 0.0,
        };
        let mut out = step(&state, &action, &field, Vec::new(), &grid, &params);
        assert_eq!(out.durations, vec![(0, expect_dur as u32)]);
        for s in 1..=expect_dur {
            let idle_now = out.next_state.vehicles[0].is_idle();
            if s < expect_dur {
                assert!(!idle_now, "vehicle released early at offset {}", s);
            } else {
                assert!(idle_now, "vehicle not released at t + {}", expect_dur);
                assert_eq!(out.next_state.vehicles[0].hex, 8);
                break;
            }
            let a = idle_action(&out.next_state);
            out = step(&out.next_state, &a, &field, Vec::new(), &grid, &params);
        }
    }

    #[test]
    fn vehicle_conservation_and_reward_identity() {
        let (grid, state, params, field) = setup(4, 4, 8, 2);
        let n = state.n_vehicles();
        let mut cur = state;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in 0..50 {
            let action = idle_action(&cur);
            let arrivals = crate::scenario::sample_orders(&field, t + 1, rng.random());
            let out = step(&cur, &action, &field, arrivals, &grid, &params);
            let agg = out.next_state.aggregates();
            let total: f64 = agg.n_idle.iter().chain(agg.n_busy.iter()).sum();
            assert_eq!(total as usize, n);
            let recomposed = out.revenue - out.drive_cost - out.elec_cost - out.penalty;
            assert!((out.reward - recomposed).abs() < 1e-9);
            cur = out.next_state;
        }
    }

    #[test]
    fn orders_drop_at_deadline() {
        let (grid, mut state, params, field) = setup(3, 3, 1, 0);
        state.open_orders = vec![Order {
            id: 1,
            origin: 0,
            dest: 5,
            arrival_step: 0,
            wait_steps: 0,
            status: OrderStatus::Open,
        }];
        state.vehicles[0].energy = 0.0; // cannot serve
        let w_max = params.rewards.w_max;
        let mut cur = state;
        for s in 1..=w_max {
            let out = step(&cur, &idle_action(&cur), &field, Vec::new(), &grid, &params);
            if s < w_max {
                assert!(out.dropped_ids.is_empty());
                assert_eq!(out.next_state.open_orders[0].wait_steps, s);
                // waiting penalty accrues while the order is open
                assert!((out.penalty - params.rewards.lambda_wait * s as f64).abs() < 1e-12);
            } else {
                assert_eq!(out.dropped_ids, vec![1]);
                assert!(out.next_state.open_orders.is_empty());
                assert!((out.penalty - params.rewards.lambda_drop).abs() < 1e-12);
            }
            cur = out.next_state;
        }
    }

    #[test]
    fn soc_guard_masks_orders_and_repositions() {
        let (grid, mut state, params, field) = setup(3, 3, 1, 1);
        let st_hex = state.stations[0].hex;
        state.vehicles[0].hex = st_hex;
        state.vehicles[0].energy = state.vehicles[0].e_min;
        state.open_orders = vec![Order {
            id: 9,
            origin: st_hex,
            dest: (st_hex + 1) % grid.len(),
            arrival_step: 0,
            wait_steps: 0,
            status: OrderStatus::Open,
        }];
        let cands = candidate_set(&state, 0, &grid, &field, &params);
        assert!(cands.iter().all(|c| !matches!(c, Candidate::Serve { .. })));
        assert!(cands.iter().all(|c| !matches!(c, Candidate::Reposition { .. })));
        assert!(cands.iter().any(|c| matches!(c, Candidate::Charge { .. })));
        assert!(matches!(cands.last(), Some(Candidate::Idle)));
    }

    #[test]
    fn soc_guard_admits_order_with_margin() {
        // E=10, eta=0.2, pickup 5 km + trip 20 km, E_min=2: needs 0.2*25+2=7 <= 10
        let grid = build_grid(1, 26, 1.0, 0, 0, None).unwrap();
        let params = EnvParams {
            energy: EnergyModel { eta_drv: 0.2, eta_c: 0.9 },
            ..EnvParams::default()
        };
        let field = ScenarioField::zeros(26);
        let fleet = FleetConfig { n_vehicles: 1, e_min: 2.0, e_max: 50.0, ..FleetConfig::default() };
        let mut state = initial_state(&grid, &fleet, &params, &field, 0);
        state.vehicles[0].hex = 0;
        state.vehicles[0].energy = 10.0;
        state.open_orders = vec![Order {
            id: 1,
            origin: 5,
            dest: 25,
            arrival_step: 0,
            wait_steps: 0,
            status: OrderStatus::Open,
        }];
        let cands = candidate_set(&state, 0, &grid, &field, &params);
        assert!(cands.iter().any(|c| matches!(c, Candidate::Serve { order_id: 1, .. })));
        // with E = 6.9 the guard fails
        state.vehicles[0].energy = 6.9;
        let cands = candidate_set(&state, 0, &grid, &field, &params);
        assert!(cands.iter().all(|c| !matches!(c, Candidate::Serve { .. })));
    }

    #[test]
    fn interior_vehicle_has_six_reposition_candidates() {
        let (grid, mut state, params, field) = setup(3, 3, 1, 0);
        state.vehicles[0].hex = 4;
        state.vehicles[0].energy = 45.0;
        state.open_orders.clear();
        let cands = candidate_set(&state, 0, &grid, &field, &params);
        let n_reb = cands.iter().filter(|c| matches!(c, Candidate::Reposition { .. })).count();
        assert_eq!(n_reb, 6);
    }

    #[test]
    fn full_battery_excludes_charging_candidate() {
        let (grid, mut state, params, field) = setup(3, 3, 1, 1);
        let st_hex = state.stations[0].hex;
        state.vehicles[0].hex = st_hex;
        state.vehicles[0].energy = state.vehicles[0].e_max;
        let cands = candidate_set(&state, 0, &grid, &field, &params);
        assert!(cands.iter().all(|c| !matches!(c, Candidate::Charge { .. })));
    }

    #[test]
    fn featurize_zero_row_for_empty_hex() {
        let (_, mut state, _, _) = setup(3, 3, 3, 1);
        // move everything away from hex 0 and make hex 0 station-free
        for v in state.vehicles.iter_mut() {
            v.hex = 4;
        }
        assert!(state.stations.iter().all(|s| s.hex != 0));
        state.demand_out[0] = 0.0;
        state.demand_in[0] = 0.0;
        let phi = featurize(&state);
        for j in 0..10 {
            assert_eq!(phi[(0, j)], 0.0, "feature {} should be zero", j);
        }
    }

    #[test]
    fn featurize_normalizes_counts_by_fleet_size() {
        let (_, mut state, _, _) = setup(3, 3, 4, 0);
        for v in state.vehicles.iter_mut() {
            v.hex = 3;
            v.status = VehicleStatus::Idle;
        }
        let phi = featurize(&state);
        assert!((phi[(3, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_invariant_under_roster_permutation() {
        let (_, mut state, _, _) = setup(3, 3, 6, 1);
        let phi = featurize(&state);
        state.vehicles.reverse();
        let phi_perm = featurize(&state);
        assert_eq!(phi, phi_perm);
    }

    #[test]
    fn aggregates_match_roster_invariant() {
        let (grid, state, params, field) = setup(4, 4, 10, 2);
        let out = step(&state, &idle_action(&state), &field, Vec::new(), &grid, &params);
        let agg = out.next_state.aggregates();
        let mut n_idle = vec![0.0; state.m()];
        let mut n_busy = vec![0.0; state.m()];
        for v in &out.next_state.vehicles {
            match v.status {
                VehicleStatus::Idle => n_idle[v.hex] += 1.0,
                VehicleStatus::Busy { release_hex, .. } => n_busy[release_hex] += 1.0,
            }
        }
        for h in 0..state.m() {
            assert!((agg.n_idle[h] - n_idle[h]).abs() < 1e-9);
            assert!((agg.n_busy[h] - n_busy[h]).abs() < 1e-9);
        }
    }

    #[test]
    #[should_panic(expected = "unknown or taken order")]
    fn unknown_order_is_contract_violation() {
        let (grid, state, params, field) = setup(3, 3, 1, 0);
        let action = FeasibleAction {
            tasks: vec![(0, VehicleTask::Serve { order_id: 999 })],
            station_power_kw: Vec::new(),
            total_power_kw: 0.0,
        };
        let _ = step(&state, &action, &field, Vec::new(), &grid, &params);
    }
}
