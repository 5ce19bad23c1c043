//! Exhaustive micro-instance oracle: enumerate every binary pattern and
//! solve the continuous power block exactly by marginal-value waterfill.
//! Used to validate the branch-and-bound solver on small instances.

use super::{evaluate_assignment, Assignment, ColKind, MilpInstance};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("instance too large for enumeration: {vehicles} vehicles, {orders} orders, {stations} stations")]
    TooLarge { vehicles: usize, orders: usize, stations: usize },
}

/// Exact optimum of a micro instance (<= 3 vehicles, <= 3 orders,
/// <= 2 stations). Ties resolve to the first pattern in enumeration order.
pub fn enumerate_oracle(instance: &MilpInstance) -> Result<(Assignment, f64), OracleError> {
    let nv = instance.vehicles.len();
    let no = instance.order_ids.len();
    let ns = instance.station_caps.len();
    if nv > 3 || no > 3 || ns > 2 {
        return Err(OracleError::TooLarge { vehicles: nv, orders: no, stations: ns });
    }
    if nv == 0 {
        return Ok((Assignment { choice: Vec::new(), power_kw: Vec::new() }, 0.0));
    }

    let mut best: Option<(Assignment, f64)> = None;
    let mut choice = vec![0usize; nv];
    loop {
        if let Some(assignment) = feasible_with_powers(instance, &choice) {
            let obj = evaluate_assignment(instance, &assignment);
            if best.as_ref().is_none_or(|(_, b)| obj > *b + 1e-12) {
                best = Some((assignment, obj));
            }
        }
        // odometer increment over per-vehicle column counts
        let mut v = 0;
        loop {
            if v == nv {
                return Ok(best.expect("idle columns make at least one pattern feasible"));
            }
            choice[v] += 1;
            if choice[v] < instance.vehicles[v].columns.len() {
                break;
            }
            choice[v] = 0;
            v += 1;
        }
    }
}

/// Check pattern feasibility and allocate optimal powers; `None` if infeasible.
fn feasible_with_powers(instance: &MilpInstance, choice: &[usize]) -> Option<Assignment> {
    let mut orders_used: Vec<u64> = Vec::new();
    let mut station_counts: Vec<(usize, u32)> = Vec::new();
    let mut chargers: Vec<(usize, f64, f64, f64, f64)> = Vec::new(); // (vehicle, ub, p_ref, elec_rate, scale)
    for (v, &c) in choice.iter().enumerate() {
        let col = &instance.vehicles[v].columns[c];
        match col.kind {
            ColKind::Serve { order_id } => {
                if orders_used.contains(&order_id) {
                    return None;
                }
                orders_used.push(order_id);
            }
            ColKind::Charge { station_idx, power_ub_kw, power_ref_kw, elec_rate } => {
                match station_counts.iter_mut().find(|(s, _)| *s == station_idx) {
                    Some((_, n)) => *n += 1,
                    None => station_counts.push((station_idx, 1)),
                }
                chargers.push((v, power_ub_kw, power_ref_kw, elec_rate, col.power_scale()));
            }
            ColKind::Reposition { .. } | ColKind::Idle => {}
        }
    }
    for &(s, n) in &station_counts {
        let cap = instance.station_caps.iter().find(|(si, _)| *si == s).map(|(_, c)| *c).unwrap_or(0);
        if n > cap {
            return None;
        }
    }
    let mandatory = instance.p_min_kw * chargers.len() as f64;
    if mandatory > instance.feeder_cap_kw + 1e-12 {
        return None;
    }

    // Waterfill above the mandatory minimum: only the segment from p_min up
    // to the intention reference has slope mu - elec_rate; beyond the
    // reference the slope is -(mu + elec_rate) and never worth taking.
    let mut power = vec![0.0; instance.vehicles.len()];
    for &(v, ..) in &chargers {
        power[v] = instance.p_min_kw;
    }
    let mut budget = instance.feeder_cap_kw - mandatory;
    let mut segments: Vec<(f64, usize, f64)> = chargers
        .iter()
        .filter_map(|&(v, ub, p_ref, elec_rate, scale)| {
            let hi = p_ref.min(ub);
            let len = hi - instance.p_min_kw;
            let slope = instance.mu / scale - elec_rate;
            (len > 1e-12 && slope > 1e-15).then_some((slope, v, len))
        })
        .collect();
    segments.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, v, len) in segments {
        if budget <= 1e-12 {
            break;
        }
        let take = len.min(budget);
        power[v] += take;
        budget -= take;
    }
    Some(Assignment { choice: choice.to_vec(), power_kw: power })
}
