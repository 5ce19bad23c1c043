//! Feasible-action layer: build the per-epoch MILP from policy intentions,
//! solve it by branch-and-bound under a wall-clock budget, and fall back to
//! a deterministic greedy procedure so a feasible action always exists.

mod bnb;
pub mod checks;
mod lp;
mod oracle;

pub use bnb::{solve, SolveError, SolveLimits, SolveReport, SolveStatus};
pub use lp::{LinearProgram, LpOutcome, LpRow, Sense};
pub use oracle::{enumerate_oracle, OracleError};

use crate::env::{Candidate, EnvParams, SystemState};
use crate::hexgrid::{CellId, HexGrid};
use crate::scenario::OrderStatus;

/// Executed decision for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub enum VehicleTask {
    Serve { order_id: u64 },
    Reposition { target: CellId },
    Charge { station_idx: usize, power_kw: f64 },
    Idle,
}

/// A physically admissible system action: exactly one task per idle vehicle
/// plus per-station and total charging power.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleAction {
    /// `(vehicle index, task)`, sorted by vehicle index.
    pub tasks: Vec<(usize, VehicleTask)>,
    pub station_power_kw: Vec<f64>,
    pub total_power_kw: f64,
}

impl FeasibleAction {
    pub fn empty(n_stations: usize) -> Self {
        FeasibleAction { tasks: Vec::new(), station_power_kw: vec![0.0; n_stations], total_power_kw: 0.0 }
    }
}

/// Raw mixed policy output for one vehicle: mode simplex over
/// {serve, reposition, charge}, target simplex over its candidate list
/// (stay-idle last), and a proposed charging power.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleIntention {
    pub mode_weights: [f64; 3],
    pub target_weights: Vec<f64>,
    pub power_kw: f64,
}

/// Intention for every idle vehicle, aligned with the candidate sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intention {
    pub per_vehicle: Vec<VehicleIntention>,
}

impl Intention {
    /// Uniform weights over each candidate list; handy for tests and warmup.
    pub fn uniform(candidates: &[(usize, Vec<Candidate>)], power_kw: f64) -> Self {
        let per_vehicle = candidates
            .iter()
            .map(|(_, list)| {
                let k = list.len().max(1) as f64;
                VehicleIntention {
                    mode_weights: [1.0 / 3.0; 3],
                    target_weights: vec![1.0 / k; list.len()],
                    power_kw,
                }
            })
            .collect();
        Intention { per_vehicle }
    }
}

impl MilpColumn {
    /// Normalizer that keeps the power coordinate of the L1 proximity term
    /// in fare units: deviations are measured relative to the station limit.
    pub fn power_scale(&self) -> f64 {
        match self.kind {
            ColKind::Charge { station_idx: _, power_ub_kw: _, power_ref_kw: _, elec_rate: _ } => {
                self.power_norm_kw.max(1e-9)
            }
            _ => 1.0,
        }
    }
}

/// Column kind inside the projection MILP.
#[derive(Debug, Clone, PartialEq)]
pub enum ColKind {
    Serve { order_id: u64 },
    Reposition { target: CellId },
    Charge {
        station_idx: usize,
        /// Upper power bound: min of station per-vehicle limit and battery headroom.
        power_ub_kw: f64,
        /// Intention reference for the power variable.
        power_ref_kw: f64,
        /// Electricity cost per kW over one step (price * dt hours).
        elec_rate: f64,
    },
    Idle,
}

/// One binary column: immediate value plus the intention reference weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpColumn {
    pub kind: ColKind,
    /// Fare minus driving cost for serve, minus driving cost for reposition,
    /// zero for charge and idle.
    pub base_value: f64,
    pub intent: f64,
    /// Station per-vehicle limit for charge columns (the power-deviation
    /// normalizer); 1 elsewhere.
    pub power_norm_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpVehicle {
    pub vehicle_idx: usize,
    pub energy: f64,
    pub columns: Vec<MilpColumn>,
}

/// The per-epoch projection problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpInstance {
    pub vehicles: Vec<MilpVehicle>,
    pub order_ids: Vec<u64>,
    /// `(station index, port capacity)` for stations with at least one column.
    pub station_caps: Vec<(usize, u32)>,
    pub n_stations: usize,
    pub feeder_cap_kw: f64,
    pub p_min_kw: f64,
    pub mu: f64,
    /// Constant part of the linearized L1 proximity term over binaries.
    pub objective_constant: f64,
    /// Warm-start incumbent, normally the greedy fallback action.
    pub seed: Option<Assignment>,
}

/// A column choice (and charging power) per instance vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub choice: Vec<usize>,
    pub power_kw: Vec<f64>,
}

/// Build the MILP from guard-filtered candidates and the policy intention.
///
/// The binary intention reference is the candidate's target weight; the
/// power reference is the proposed power clamped to the station limit. The
/// L1 proximity term is exact on binaries (affine on {0,1}) and linearized
/// by nonnegative splits on the power coordinates; power deviations are
/// measured relative to the station limit so `mu` stays in fare units on
/// every coordinate.
pub fn build_instance(
    state: &SystemState,
    intention: &Intention,
    candidates: &[(usize, Vec<Candidate>)],
    mu: f64,
    params: &EnvParams,
) -> MilpInstance {
    assert_eq!(intention.per_vehicle.len(), candidates.len(), "intention/candidate mismatch");
    let mut vehicles = Vec::with_capacity(candidates.len());
    let mut order_ids = Vec::new();
    let mut station_caps: Vec<(usize, u32)> = Vec::new();
    let mut constant = 0.0;

    for ((vi, list), intent) in candidates.iter().zip(&intention.per_vehicle) {
        assert_eq!(intent.target_weights.len(), list.len(), "target weights/candidates mismatch");
        let wsum: f64 = intent.target_weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-6, "target weights must sum to 1, got {}", wsum);
        assert!(intent.target_weights.iter().all(|&w| w >= -1e-12), "negative target weight");
        let mut columns = Vec::with_capacity(list.len());
        for (c, cand) in list.iter().enumerate() {
            let w = intent.target_weights[c].max(0.0);
            constant -= mu * w;
            let col = match *cand {
                Candidate::Serve { order_id, fare, dist_km, .. } => {
                    if !order_ids.contains(&order_id) {
                        order_ids.push(order_id);
                    }
                    MilpColumn {
                        kind: ColKind::Serve { order_id },
                        base_value: fare - params.rewards.c_drv * dist_km,
                        intent: w,
                        power_norm_kw: 1.0,
                    }
                }
                Candidate::Reposition { target, dist_km, .. } => MilpColumn {
                    kind: ColKind::Reposition { target },
                    base_value: -params.rewards.c_drv * dist_km,
                    intent: w,
                    power_norm_kw: 1.0,
                },
                Candidate::Charge { station_idx, p_max_eff_kw, price, .. } => {
                    if !station_caps.iter().any(|&(s, _)| s == station_idx) {
                        station_caps.push((station_idx, state.stations[station_idx].ports_total));
                    }
                    MilpColumn {
                        kind: ColKind::Charge {
                            station_idx,
                            power_ub_kw: p_max_eff_kw,
                            power_ref_kw: intent
                                .power_kw
                                .clamp(0.0, state.stations[station_idx].p_max_kw),
                            elec_rate: price * params.dt_hours(),
                        },
                        base_value: 0.0,
                        intent: w,
                        power_norm_kw: state.stations[station_idx].p_max_kw,
                    }
                }
                Candidate::Idle => MilpColumn {
                    kind: ColKind::Idle,
                    base_value: 0.0,
                    intent: w,
                    power_norm_kw: 1.0,
                },
            };
            columns.push(col);
        }
        vehicles.push(MilpVehicle { vehicle_idx: *vi, energy: state.vehicles[*vi].energy, columns });
    }
    order_ids.sort_unstable();
    station_caps.sort_unstable();

    MilpInstance {
        vehicles,
        order_ids,
        station_caps,
        n_stations: state.stations.len(),
        feeder_cap_kw: state.feeder_cap_kw,
        p_min_kw: params.p_min_kw,
        mu,
        objective_constant: constant,
        seed: None,
    }
}

/// Exact objective of an integral assignment under the instance objective,
/// including both L1 proximity parts.
pub fn evaluate_assignment(instance: &MilpInstance, assignment: &Assignment) -> f64 {
    assert_eq!(assignment.choice.len(), instance.vehicles.len());
    let mu = instance.mu;
    let mut total = 0.0;
    for (v, veh) in instance.vehicles.iter().enumerate() {
        let chosen = assignment.choice[v];
        for (c, col) in veh.columns.iter().enumerate() {
            let val = if c == chosen { 1.0 } else { 0.0 };
            total -= mu * (val - col.intent).abs();
            if c == chosen {
                total += col.base_value;
            }
            if let ColKind::Charge { power_ref_kw, elec_rate, power_ub_kw: _, station_idx: _ } = col.kind {
                let p = if c == chosen { assignment.power_kw[v] } else { 0.0 };
                total -= elec_rate * p;
                total -= mu * (p - power_ref_kw).abs() / col.power_scale();
            }
        }
    }
    total
}

/// Map an executed action back onto instance columns. Panics when the action
/// references a candidate absent from the instance.
pub fn assignment_of_action(instance: &MilpInstance, action: &FeasibleAction) -> Assignment {
    let mut choice = Vec::with_capacity(instance.vehicles.len());
    let mut power = Vec::with_capacity(instance.vehicles.len());
    for veh in &instance.vehicles {
        let task = action
            .tasks
            .iter()
            .find(|(vi, _)| *vi == veh.vehicle_idx)
            .map(|(_, t)| t)
            .unwrap_or(&VehicleTask::Idle);
        let (ci, p) = match task {
            VehicleTask::Serve { order_id } => (
                veh.columns
                    .iter()
                    .position(|c| matches!(c.kind, ColKind::Serve { order_id: oid } if oid == *order_id))
                    .expect("order column missing"),
                0.0,
            ),
            VehicleTask::Reposition { target } => (
                veh.columns
                    .iter()
                    .position(|c| matches!(c.kind, ColKind::Reposition { target: t } if t == *target))
                    .expect("reposition column missing"),
                0.0,
            ),
            VehicleTask::Charge { station_idx, power_kw } => (
                veh.columns
                    .iter()
                    .position(|c| matches!(c.kind, ColKind::Charge { station_idx: s, .. } if s == *station_idx))
                    .expect("charge column missing"),
                *power_kw,
            ),
            VehicleTask::Idle => (
                veh.columns.iter().position(|c| matches!(c.kind, ColKind::Idle)).expect("idle column missing"),
                0.0,
            ),
        };
        choice.push(ci);
        power.push(p);
    }
    Assignment { choice, power_kw: power }
}

/// Convert an assignment into the executed action form.
pub fn assignment_to_action(instance: &MilpInstance, assignment: &Assignment) -> FeasibleAction {
    let mut tasks = Vec::with_capacity(instance.vehicles.len());
    let mut station_power = vec![0.0; instance.n_stations];
    let mut total = 0.0;
    for (v, veh) in instance.vehicles.iter().enumerate() {
        let col = &veh.columns[assignment.choice[v]];
        let task = match col.kind {
            ColKind::Serve { order_id } => VehicleTask::Serve { order_id },
            ColKind::Reposition { target } => VehicleTask::Reposition { target },
            ColKind::Charge { station_idx, .. } => {
                let p = assignment.power_kw[v];
                station_power[station_idx] += p;
                total += p;
                VehicleTask::Charge { station_idx, power_kw: p }
            }
            ColKind::Idle => VehicleTask::Idle,
        };
        tasks.push((veh.vehicle_idx, task));
    }
    tasks.sort_by_key(|&(vi, _)| vi);
    FeasibleAction { tasks, station_power_kw: station_power, total_power_kw: total }
}

/// The deterministic greedy fallback: vehicles in ascending state of charge
/// take the best immediate-reward order, else the co-located station when
/// ports and residual feeder allow, else idle (repositions never beat the
/// zero-cost idle on immediate reward with a positive driving cost).
pub fn greedy_fallback(
    state: &SystemState,
    candidates: &[(usize, Vec<Candidate>)],
    params: &EnvParams,
) -> FeasibleAction {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let ea = state.vehicles[candidates[a].0].energy;
        let eb = state.vehicles[candidates[b].0].energy;
        ea.partial_cmp(&eb).unwrap().then(candidates[a].0.cmp(&candidates[b].0))
    });

    let mut residual_feeder = state.feeder_cap_kw;
    let mut ports_free: Vec<u32> = state.stations.iter().map(|s| s.ports_total).collect();
    let mut taken_orders: Vec<u64> = Vec::new();
    let mut tasks: Vec<(usize, VehicleTask)> = Vec::with_capacity(candidates.len());
    let mut station_power = vec![0.0; state.stations.len()];
    let mut total_power = 0.0;

    for &slot in &order {
        let (vi, list) = &candidates[slot];
        // best feasible order by immediate reward, ties to the lowest id
        let mut best_serve: Option<(f64, u64)> = None;
        for cand in list {
            if let Candidate::Serve { order_id, fare, dist_km, .. } = *cand {
                if taken_orders.contains(&order_id) {
                    continue;
                }
                let reward = fare - params.rewards.c_drv * dist_km;
                let better = match best_serve {
                    None => true,
                    Some((r, oid)) => reward > r + 1e-12 || ((reward - r).abs() <= 1e-12 && order_id < oid),
                };
                if better {
                    best_serve = Some((reward, order_id));
                }
            }
        }
        if let Some((_, order_id)) = best_serve {
            taken_orders.push(order_id);
            tasks.push((*vi, VehicleTask::Serve { order_id }));
            continue;
        }

        // charging branch: co-located station with a free port and feeder room
        let mut charged = false;
        if residual_feeder >= params.p_min_kw {
            for cand in list {
                if let Candidate::Charge { station_idx, p_max_eff_kw, .. } = *cand {
                    if ports_free[station_idx] == 0 {
                        continue;
                    }
                    let p = p_max_eff_kw.min(residual_feeder);
                    if p + 1e-12 < params.p_min_kw {
                        continue;
                    }
                    ports_free[station_idx] -= 1;
                    residual_feeder -= p;
                    station_power[station_idx] += p;
                    total_power += p;
                    tasks.push((*vi, VehicleTask::Charge { station_idx, power_kw: p }));
                    charged = true;
                    break;
                }
            }
        }
        if charged {
            continue;
        }

        // best energy-feasible reposition or idle by immediate reward; idle
        // wins ties, so with c_drv > 0 it always wins
        let mut best: (f64, VehicleTask) = (0.0, VehicleTask::Idle);
        for cand in list {
            if let Candidate::Reposition { target, dist_km, .. } = *cand {
                let reward = -params.rewards.c_drv * dist_km;
                if reward > best.0 + 1e-12 {
                    best = (reward, VehicleTask::Reposition { target });
                }
            }
        }
        tasks.push((*vi, best.1));
    }

    tasks.sort_by_key(|&(vi, _)| vi);
    FeasibleAction { tasks, station_power_kw: station_power, total_power_kw: total_power }
}

/// Check every feasibility family on an action: one task per idle vehicle,
/// order uniqueness and validity, port caps, feeder cap, power box with the
/// minimum-power rule, adjacency, and next-step state-of-charge bounds.
pub fn check_action(
    state: &SystemState,
    action: &FeasibleAction,
    grid: &HexGrid,
    params: &EnvParams,
) -> Result<(), String> {
    let idle: Vec<usize> =
        state.vehicles.iter().enumerate().filter(|(_, v)| v.is_idle()).map(|(i, _)| i).collect();
    if action.tasks.len() != idle.len() {
        return Err(format!("{} tasks for {} idle vehicles", action.tasks.len(), idle.len()));
    }
    let mut seen = vec![false; state.vehicles.len()];
    let mut orders_used: Vec<u64> = Vec::new();
    let mut chargers = vec![0u32; state.stations.len()];
    let mut station_power = vec![0.0; state.stations.len()];
    let mut total_power = 0.0;
    let eta = params.energy.eta_drv;
    let dt_h = params.dt_hours();

    for &(vi, ref task) in &action.tasks {
        if vi >= state.vehicles.len() || !state.vehicles[vi].is_idle() {
            return Err(format!("task on non-idle vehicle {}", vi));
        }
        if seen[vi] {
            return Err(format!("vehicle {} tasked twice", vi));
        }
        seen[vi] = true;
        let v = &state.vehicles[vi];
        match *task {
            VehicleTask::Serve { order_id } => {
                if orders_used.contains(&order_id) {
                    return Err(format!("order {} assigned twice", order_id));
                }
                orders_used.push(order_id);
                let Some(o) = state
                    .open_orders
                    .iter()
                    .find(|o| o.id == order_id && o.status == OrderStatus::Open)
                else {
                    return Err(format!("order {} not open", order_id));
                };
                let need = eta * (grid.distance_km(v.hex, o.origin) + grid.distance_km(o.origin, o.dest));
                if v.energy < need + v.e_min - 1e-9 {
                    return Err(format!("vehicle {} violates the SoC guard on order {}", vi, order_id));
                }
            }
            VehicleTask::Reposition { target } => {
                if !grid.neighbors(v.hex).contains(&target) {
                    return Err(format!("reposition {}->{} not adjacent", v.hex, target));
                }
                if v.energy - eta * grid.distance_km(v.hex, target) < v.e_min - 1e-9 {
                    return Err(format!("reposition leaves vehicle {} under E_min", vi));
                }
            }
            VehicleTask::Charge { station_idx, power_kw } => {
                let Some(st) = state.stations.get(station_idx) else {
                    return Err(format!("unknown station {}", station_idx));
                };
                if st.hex != v.hex {
                    return Err(format!("vehicle {} not co-located with station {}", vi, station_idx));
                }
                if power_kw < params.p_min_kw - 1e-9 {
                    return Err(format!("power {} below p_min", power_kw));
                }
                if power_kw > st.p_max_kw + 1e-9 {
                    return Err(format!("power {} above station limit", power_kw));
                }
                let next_e = v.energy + params.energy.eta_c * power_kw * dt_h;
                if next_e > v.e_max + 1e-9 {
                    return Err(format!("charging pushes vehicle {} above E_max", vi));
                }
                chargers[station_idx] += 1;
                station_power[station_idx] += power_kw;
                total_power += power_kw;
            }
            VehicleTask::Idle => {}
        }
    }
    for (si, st) in state.stations.iter().enumerate() {
        if chargers[si] > st.ports_total {
            return Err(format!("station {} over port capacity: {}", si, chargers[si]));
        }
        if (station_power[si] - action.station_power_kw.get(si).copied().unwrap_or(0.0)).abs() > 1e-9 {
            return Err(format!("station {} power total inconsistent", si));
        }
    }
    if total_power > state.feeder_cap_kw + 1e-9 {
        return Err(format!("feeder cap exceeded: {} > {}", total_power, state.feeder_cap_kw));
    }
    if (total_power - action.total_power_kw).abs() > 1e-9 {
        return Err("total power inconsistent".into());
    }
    Ok(())
}

/// Full projection: greedy seed, branch-and-bound, feasibility assertion;
/// internal failures degrade to the greedy fallback.
pub fn project(
    state: &SystemState,
    intention: &Intention,
    candidates: &[(usize, Vec<Candidate>)],
    mu: f64,
    limits: SolveLimits,
    grid: &HexGrid,
    params: &EnvParams,
) -> (FeasibleAction, SolveReport) {
    if candidates.is_empty() {
        return (
            FeasibleAction::empty(state.stations.len()),
            SolveReport {
                status: SolveStatus::Optimal,
                objective: 0.0,
                best_bound: 0.0,
                node_count: 0,
                wall_time_s: 0.0,
            },
        );
    }
    let greedy = greedy_fallback(state, candidates, params);
    if let Err(e) = check_action(state, &greedy, grid, params) {
        panic!("greedy fallback produced an infeasible action: {}", e);
    }
    let mut instance = build_instance(state, intention, candidates, mu, params);
    instance.seed = Some(assignment_of_action(&instance, &greedy));

    match bnb::solve(&instance, limits) {
        Ok((assignment, report)) => {
            let action = assignment_to_action(&instance, &assignment);
            match check_action(state, &action, grid, params) {
                Ok(()) => (action, report),
                Err(_) => {
                    let obj = evaluate_assignment(&instance, instance.seed.as_ref().unwrap());
                    (
                        greedy,
                        SolveReport {
                            status: SolveStatus::Fallback,
                            objective: obj,
                            best_bound: report.best_bound,
                            node_count: report.node_count,
                            wall_time_s: report.wall_time_s,
                        },
                    )
                }
            }
        }
        Err(_) => {
            let obj = evaluate_assignment(&instance, instance.seed.as_ref().unwrap());
            (
                greedy,
                SolveReport {
                    status: SolveStatus::Fallback,
                    objective: obj,
                    best_bound: f64::INFINITY,
                    node_count: 0,
                    wall_time_s: 0.0,
                },
            )
        }
    }
}

/// Export an instance in CPLEX-LP text format for external cross-checks.
pub fn dump_lp_format(instance: &MilpInstance) -> String {
    use std::fmt::Write;
    let (lp, map) = bnb::instance_to_lp(instance);
    let name = |j: usize| -> String {
        if let Some((v, c)) = map.binary_owner(j) {
            format!("x_v{}_c{}", v, c)
        } else if let Some(v) = map.power_owner(j) {
            format!("p_v{}", v)
        } else if let Some((v, plus)) = map.split_owner(j) {
            format!("{}_v{}", if plus { "up" } else { "um" }, v)
        } else {
            format!("z{}", j)
        }
    };
    let mut s = String::new();
    let _ = writeln!(s, "\\ projection instance, {} vehicles", instance.vehicles.len());
    let _ = writeln!(s, "Maximize");
    let mut obj = String::from(" obj:");
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != 0.0 {
            let _ = write!(obj, " {} {} {}", if c < 0.0 { "-" } else { "+" }, c.abs(), name(j));
        }
    }
    let _ = writeln!(s, "{}", obj);
    let _ = writeln!(s, "Subject To");
    for (r, row) in lp.rows.iter().enumerate() {
        let mut line = format!(" c{}:", r);
        for &(j, c) in &row.coeffs {
            let _ = write!(line, " {} {} {}", if c < 0.0 { "-" } else { "+" }, c.abs(), name(j));
        }
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        };
        let _ = writeln!(s, "{} {} {}", line, op, row.rhs);
    }
    let _ = writeln!(s, "Bounds");
    for j in 0..lp.objective.len() {
        let _ = writeln!(s, " {} <= {} <= {}", lp.lower[j], name(j), lp.upper[j]);
    }
    let _ = writeln!(s, "Binaries");
    let mut bins = String::from(" ");
    for j in 0..lp.objective.len() {
        if map.binary_owner(j).is_some() {
            let _ = write!(bins, "{} ", name(j));
        }
    }
    let _ = writeln!(s, "{}", bins.trim_end());
    let _ = writeln!(s, "End");
    s
}

#[cfg(test)]
mod tests;
