//! Non-learned action sources: the profit-greedy dispatch baseline and the
//! projection-free intention executor used by the `no_milp` ablation.

use crate::env::{Candidate, EnvParams, SystemState};
use crate::hexgrid::HexGrid;
use crate::projection::{FeasibleAction, Intention, VehicleTask};

/// Rule-based baseline: vehicles under 20% state of charge head to a
/// co-located station first (with port and feeder accounting); the rest are
/// matched to orders by descending immediate profit under a maximum pickup
/// distance, iteratively until no feasible pair remains; leftovers idle.
pub fn greedy_policy(
    state: &SystemState,
    candidates: &[(usize, Vec<Candidate>)],
    grid: &HexGrid,
    params: &EnvParams,
    max_pickup_hops: u32,
) -> FeasibleAction {
    let mut residual_feeder = state.feeder_cap_kw;
    let mut ports_free: Vec<u32> = state.stations.iter().map(|s| s.ports_total).collect();
    let mut tasks: Vec<(usize, VehicleTask)> = Vec::with_capacity(candidates.len());
    let mut station_power = vec![0.0; state.stations.len()];
    let mut total_power = 0.0;
    let mut assigned: Vec<bool> = vec![false; candidates.len()];

    // charging pass, most depleted first
    let mut order_by_soc: Vec<usize> = (0..candidates.len()).collect();
    order_by_soc.sort_by(|&a, &b| {
        let ea = state.vehicles[candidates[a].0].energy;
        let eb = state.vehicles[candidates[b].0].energy;
        ea.partial_cmp(&eb).unwrap().then(candidates[a].0.cmp(&candidates[b].0))
    });
    for &slot in &order_by_soc {
        let (vi, list) = &candidates[slot];
        let v = &state.vehicles[*vi];
        if v.energy >= 0.2 * v.e_max {
            continue;
        }
        if residual_feeder < params.p_min_kw {
            continue;
        }
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
                assigned[slot] = true;
                break;
            }
        }
    }

    // iterative max-profit matching under the pickup-distance cap
    let mut taken_orders: Vec<u64> = Vec::new();
    loop {
        let mut best: Option<(f64, usize, u64)> = None; // (profit, slot, order)
        for (slot, (vi, list)) in candidates.iter().enumerate() {
            if assigned[slot] {
                continue;
            }
            let vhex = state.vehicles[*vi].hex;
            for cand in list {
                if let Candidate::Serve { order_id, fare, dist_km, pickup, .. } = *cand {
                    if taken_orders.contains(&order_id) {
                        continue;
                    }
                    if grid.hops(vhex, pickup) > max_pickup_hops {
                        continue;
                    }
                    let profit = fare - params.rewards.c_drv * dist_km;
                    let better = match best {
                        None => true,
                        Some((bp, bslot, boid)) => {
                            profit > bp + 1e-12
                                || ((profit - bp).abs() <= 1e-12
                                    && (candidates[bslot].0, boid) > (*vi, order_id))
                        }
                    };
                    if better {
                        best = Some((profit, slot, order_id));
                    }
                }
            }
        }
        let Some((_, slot, order_id)) = best else {
            break;
        };
        assigned[slot] = true;
        taken_orders.push(order_id);
        tasks.push((candidates[slot].0, VehicleTask::Serve { order_id }));
    }

    for (slot, (vi, _)) in candidates.iter().enumerate() {
        if !assigned[slot] {
            tasks.push((*vi, VehicleTask::Idle));
        }
    }
    tasks.sort_by_key(|&(vi, _)| vi);
    FeasibleAction { tasks, station_power_kw: station_power, total_power_kw: total_power }
}

/// Projection-free execution for the `no_milp` ablation: take each
/// vehicle's intention argmax, clip charging power to the station limit and
/// battery headroom, drop charging above each station's port count in
/// intention-weight order, and resolve order conflicts by intention weight.
/// The feeder cap is deliberately not enforced.
pub fn execute_intention_clipped(
    state: &SystemState,
    intention: &Intention,
    candidates: &[(usize, Vec<Candidate>)],
    params: &EnvParams,
) -> FeasibleAction {
    struct Pick {
        slot: usize,
        vehicle: usize,
        candidate: usize,
        weight: f64,
    }
    let mut picks: Vec<Pick> = Vec::with_capacity(candidates.len());
    for (slot, ((vi, list), intent)) in candidates.iter().zip(&intention.per_vehicle).enumerate() {
        let mut best = list.len() - 1; // idle slot
        let mut best_w = f64::NEG_INFINITY;
        for (c, &w) in intent.target_weights.iter().enumerate() {
            if w > best_w {
                best_w = w;
                best = c;
            }
        }
        picks.push(Pick { slot, vehicle: *vi, candidate: best, weight: best_w });
    }

    // order conflicts: highest weight wins, losers idle
    let mut winners: Vec<Option<usize>> = vec![None; picks.len()];
    let mut order_claim: Vec<(u64, usize, f64)> = Vec::new(); // (order, pick idx, weight)
    for (pi, pick) in picks.iter().enumerate() {
        match &candidates[pick.slot].1[pick.candidate] {
            Candidate::Serve { order_id, .. } => {
                match order_claim.iter_mut().find(|(oid, _, _)| oid == order_id) {
                    Some(entry) => {
                        if pick.weight > entry.2 {
                            *entry = (*order_id, pi, pick.weight);
                        }
                    }
                    None => order_claim.push((*order_id, pi, pick.weight)),
                }
            }
            _ => winners[pi] = Some(pick.candidate),
        }
    }
    for &(_, pi, _) in &order_claim {
        winners[pi] = Some(picks[pi].candidate);
    }

    // port clipping per station in intention-weight order
    let mut by_station: Vec<Vec<(usize, f64)>> = vec![Vec::new(); state.stations.len()];
    for (pi, pick) in picks.iter().enumerate() {
        if winners[pi] == Some(pick.candidate) {
            if let Candidate::Charge { station_idx, .. } = candidates[pick.slot].1[pick.candidate] {
                by_station[station_idx].push((pi, pick.weight));
            }
        }
    }
    for (si, entries) in by_station.iter_mut().enumerate() {
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(pi, _) in entries.iter().skip(state.stations[si].ports_total as usize) {
            winners[pi] = None; // lost the port race, falls to idle
        }
    }

    let mut tasks = Vec::with_capacity(picks.len());
    let mut station_power = vec![0.0; state.stations.len()];
    let mut total_power = 0.0;
    for (pi, pick) in picks.iter().enumerate() {
        let (vi, list) = &candidates[pick.slot];
        let task = match winners[pi].map(|c| &list[c]) {
            Some(Candidate::Serve { order_id, .. }) => VehicleTask::Serve { order_id: *order_id },
            Some(Candidate::Reposition { target, .. }) => VehicleTask::Reposition { target: *target },
            Some(Candidate::Charge { station_idx, p_max_eff_kw, .. }) => {
                let p_hat = intention.per_vehicle[pick.slot].power_kw;
                let p = p_hat.clamp(params.p_min_kw, *p_max_eff_kw);
                station_power[*station_idx] += p;
                total_power += p;
                VehicleTask::Charge { station_idx: *station_idx, power_kw: p }
            }
            _ => VehicleTask::Idle,
        };
        tasks.push((*vi, task));
        let _ = pick.vehicle;
    }
    tasks.sort_by_key(|&(vi, _)| vi);
    FeasibleAction { tasks, station_power_kw: station_power, total_power_kw: total_power }
}
