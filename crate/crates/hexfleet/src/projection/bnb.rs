//! Best-first branch-and-bound over the LP relaxation of a projection
//! instance. The incumbent is seeded before the first node, so a feasible
//! action is available at any budget, including zero.

use std::collections::BinaryHeap;
use std::time::Instant;

use super::lp::{solve_lp, LinearProgram, LpOutcome, LpRow, Sense};
use super::{evaluate_assignment, Assignment, ColKind, MilpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    IncumbentTimeout,
    Fallback,
}

/// Search budget: wall-clock limit plus a deterministic node cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveLimits {
    pub tau_max_s: f64,
    pub node_cap: u64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits { tau_max_s: 3.0, node_cap: 200_000 }
    }
}

impl SolveLimits {
    pub fn with_tau(tau_max_s: f64) -> Self {
        SolveLimits { tau_max_s, ..SolveLimits::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub best_bound: f64,
    pub node_count: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("root LP infeasible: instance builder bug")]
    RootInfeasible,
    #[error("LP numerical failure")]
    NumericalFailure,
}

/// Column layout of the LP built from an instance.
pub(crate) struct ColumnMap {
    binary_pairs: Vec<(usize, usize)>,
    binary_lookup: Vec<Vec<usize>>,
    power_pairs: Vec<(usize, usize)>,
    power_start: usize,
    split_start: usize,
}

impl ColumnMap {
    pub fn binary_owner(&self, j: usize) -> Option<(usize, usize)> {
        self.binary_pairs.get(j).copied()
    }

    pub fn power_owner(&self, j: usize) -> Option<usize> {
        if j >= self.power_start && j < self.split_start {
            Some(self.power_pairs[j - self.power_start].0)
        } else {
            None
        }
    }

    pub fn split_owner(&self, j: usize) -> Option<(usize, bool)> {
        let k = self.power_pairs.len();
        if j >= self.split_start && j < self.split_start + k {
            Some((self.power_pairs[j - self.split_start].0, true))
        } else if j >= self.split_start + k && j < self.split_start + 2 * k {
            Some((self.power_pairs[j - self.split_start - k].0, false))
        } else {
            None
        }
    }

    pub fn binary_col(&self, v: usize, c: usize) -> usize {
        self.binary_lookup[v][c]
    }
}

/// Build the LP relaxation: binaries in [0,1], per-vehicle one-task rows,
/// order caps, port caps, the feeder row, minimum-power links, power boxes,
/// and split rows for the power L1 term.
pub(crate) fn instance_to_lp(instance: &MilpInstance) -> (LinearProgram, ColumnMap) {
    let mu = instance.mu;
    let mut binary_pairs = Vec::new();
    let mut binary_lookup = Vec::with_capacity(instance.vehicles.len());
    for (v, veh) in instance.vehicles.iter().enumerate() {
        let mut row = Vec::with_capacity(veh.columns.len());
        for c in 0..veh.columns.len() {
            row.push(binary_pairs.len());
            binary_pairs.push((v, c));
        }
        binary_lookup.push(row);
    }
    let n_bin = binary_pairs.len();
    let mut power_pairs = Vec::new();
    for (v, veh) in instance.vehicles.iter().enumerate() {
        for (c, col) in veh.columns.iter().enumerate() {
            if matches!(col.kind, ColKind::Charge { .. }) {
                power_pairs.push((v, c));
            }
        }
    }
    let n_pow = power_pairs.len();
    let power_start = n_bin;
    let split_start = n_bin + n_pow;
    let n_cols = n_bin + 3 * n_pow;

    let mut objective = vec![0.0; n_cols];
    let lower = vec![0.0; n_cols];
    let mut upper = vec![0.0; n_cols];
    for (j, &(v, c)) in binary_pairs.iter().enumerate() {
        let col = &instance.vehicles[v].columns[c];
        objective[j] = col.base_value - mu * (1.0 - 2.0 * col.intent);
        upper[j] = 1.0;
    }
    for (k, &(v, c)) in power_pairs.iter().enumerate() {
        let col = &instance.vehicles[v].columns[c];
        let ColKind::Charge { power_ub_kw, power_ref_kw, elec_rate, .. } = col.kind else {
            unreachable!()
        };
        objective[power_start + k] = -elec_rate;
        upper[power_start + k] = power_ub_kw;
        let split_cap = power_ub_kw + power_ref_kw + 1.0;
        let split_cost = -mu / col.power_scale();
        objective[split_start + k] = split_cost;
        upper[split_start + k] = split_cap;
        objective[split_start + n_pow + k] = split_cost;
        upper[split_start + n_pow + k] = split_cap;
    }

    let mut rows = Vec::new();
    // one task per vehicle
    for (v, veh) in instance.vehicles.iter().enumerate() {
        let coeffs = (0..veh.columns.len()).map(|c| (binary_lookup[v][c], 1.0)).collect();
        rows.push(LpRow { coeffs, sense: Sense::Eq, rhs: 1.0 });
    }
    // each order at most once
    for &oid in &instance.order_ids {
        let mut coeffs = Vec::new();
        for (j, &(v, c)) in binary_pairs.iter().enumerate() {
            if matches!(instance.vehicles[v].columns[c].kind, ColKind::Serve { order_id } if order_id == oid)
            {
                coeffs.push((j, 1.0));
            }
        }
        rows.push(LpRow { coeffs, sense: Sense::Le, rhs: 1.0 });
    }
    // port capacities
    for &(station_idx, cap) in &instance.station_caps {
        let mut coeffs = Vec::new();
        for (j, &(v, c)) in binary_pairs.iter().enumerate() {
            if matches!(instance.vehicles[v].columns[c].kind, ColKind::Charge { station_idx: s, .. } if s == station_idx)
            {
                coeffs.push((j, 1.0));
            }
        }
        rows.push(LpRow { coeffs, sense: Sense::Le, rhs: cap as f64 });
    }
    // feeder cap over all power variables
    if n_pow > 0 {
        let coeffs = (0..n_pow).map(|k| (power_start + k, 1.0)).collect();
        rows.push(LpRow { coeffs, sense: Sense::Le, rhs: instance.feeder_cap_kw });
        // implied strengthening cut: every active charger draws at least
        // p_min, so the charge binaries respect the feeder too
        if instance.p_min_kw > 0.0 {
            let coeffs = power_pairs
                .iter()
                .map(|&(v, c)| (binary_lookup[v][c], instance.p_min_kw))
                .collect();
            rows.push(LpRow { coeffs, sense: Sense::Le, rhs: instance.feeder_cap_kw });
        }
    }
    // power linking and L1 split rows
    for (k, &(v, c)) in power_pairs.iter().enumerate() {
        let ColKind::Charge { power_ub_kw, power_ref_kw, .. } = instance.vehicles[v].columns[c].kind
        else {
            unreachable!()
        };
        let zj = binary_lookup[v][c];
        let pj = power_start + k;
        rows.push(LpRow {
            coeffs: vec![(pj, 1.0), (zj, -instance.p_min_kw)],
            sense: Sense::Ge,
            rhs: 0.0,
        });
        rows.push(LpRow { coeffs: vec![(pj, 1.0), (zj, -power_ub_kw)], sense: Sense::Le, rhs: 0.0 });
        rows.push(LpRow {
            coeffs: vec![(pj, 1.0), (split_start + k, -1.0), (split_start + n_pow + k, 1.0)],
            sense: Sense::Eq,
            rhs: power_ref_kw,
        });
    }

    let map = ColumnMap { binary_pairs, binary_lookup, power_pairs, power_start, split_start };
    (LinearProgram { objective, lower, upper, rows }, map)
}

struct Node {
    bound: f64,
    seq: u64,
    fixes: Vec<(usize, f64)>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // max-heap on bound, ties to the earliest node for determinism
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(other.seq.cmp(&self.seq))
    }
}

const INT_TOL: f64 = 1e-7;

fn all_idle_assignment(instance: &MilpInstance) -> Assignment {
    let choice = instance
        .vehicles
        .iter()
        .map(|veh| {
            veh.columns
                .iter()
                .position(|c| matches!(c.kind, ColKind::Idle))
                .expect("instance lacks an idle column")
        })
        .collect();
    Assignment { choice, power_kw: vec![0.0; instance.vehicles.len()] }
}

fn extract_assignment(instance: &MilpInstance, map: &ColumnMap, x: &[f64]) -> Assignment {
    let mut choice = Vec::with_capacity(instance.vehicles.len());
    let mut power = vec![0.0; instance.vehicles.len()];
    for (v, veh) in instance.vehicles.iter().enumerate() {
        let mut chosen = None;
        for c in 0..veh.columns.len() {
            if x[map.binary_col(v, c)] > 0.5 {
                chosen = Some(c);
                break;
            }
        }
        choice.push(chosen.expect("integral solution lacks a chosen column"));
    }
    for (k, &(v, c)) in map.power_pairs.iter().enumerate() {
        if choice[v] == c {
            let ColKind::Charge { power_ub_kw, .. } = instance.vehicles[v].columns[c].kind else {
                unreachable!()
            };
            power[v] = x[map.power_start + k].clamp(instance.p_min_kw, power_ub_kw);
        }
    }
    Assignment { choice, power_kw: power }
}

/// Solve the instance: best-first branch-and-bound on fractional binaries,
/// most-fractional branching with lowest-index ties, incumbent seeded from
/// `instance.seed` (or all-idle). Returns the incumbent at timeout or when
/// the deterministic node cap is exhausted.
pub fn solve(
    instance: &MilpInstance,
    limits: SolveLimits,
) -> Result<(Assignment, SolveReport), SolveError> {
    let tau_max = limits.tau_max_s;
    let t0 = Instant::now();
    let mut incumbent = instance.seed.clone().unwrap_or_else(|| all_idle_assignment(instance));
    let mut incumbent_obj = evaluate_assignment(instance, &incumbent);

    if instance.vehicles.is_empty() {
        return Ok((
            Assignment { choice: Vec::new(), power_kw: Vec::new() },
            SolveReport {
                status: SolveStatus::Optimal,
                objective: 0.0,
                best_bound: 0.0,
                node_count: 0,
                wall_time_s: t0.elapsed().as_secs_f64(),
            },
        ));
    }
    if tau_max <= 0.0 {
        return Ok((
            incumbent,
            SolveReport {
                status: SolveStatus::IncumbentTimeout,
                objective: incumbent_obj,
                best_bound: f64::INFINITY,
                node_count: 0,
                wall_time_s: t0.elapsed().as_secs_f64(),
            },
        ));
    }

    let (base_lp, map) = instance_to_lp(instance);
    let gap_tol = |obj: f64| 1e-6 * (1.0 + obj.abs());

    let solve_node = |fixes: &[(usize, f64)]| -> LpOutcome {
        let mut lp = base_lp.clone();
        for &(j, v) in fixes {
            lp.lower[j] = v;
            lp.upper[j] = v;
        }
        solve_lp(&lp)
    };

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut node_count = 0u64;
    let mut trouble = false;

    match solve_node(&[]) {
        LpOutcome::Optimal { x, objective } => {
            node_count += 1;
            let bound = objective + instance.objective_constant;
            heap.push(Node { bound, seq, fixes: Vec::new(), x });
            seq += 1;
        }
        LpOutcome::Infeasible => return Err(SolveError::RootInfeasible),
        LpOutcome::Unbounded | LpOutcome::Stalled => return Err(SolveError::NumericalFailure),
    }

    let mut status = SolveStatus::Optimal;
    let mut best_bound = f64::NEG_INFINITY;
    while let Some(node) = heap.pop() {
        best_bound = node.bound;
        if node.bound <= incumbent_obj + gap_tol(incumbent_obj) {
            // proven: nothing left can beat the incumbent
            best_bound = incumbent_obj.max(node.bound);
            heap.clear();
            break;
        }
        if t0.elapsed().as_secs_f64() > tau_max || node_count > limits.node_cap {
            status = SolveStatus::IncumbentTimeout;
            heap.push(node);
            break;
        }

        // most fractional binary, ties to the lowest column index
        let mut branch: Option<(usize, f64)> = None;
        for j in 0..map.binary_pairs.len() {
            let frac = node.x[j].min(1.0 - node.x[j]).max(0.0);
            if frac > INT_TOL {
                match branch {
                    Some((_, f)) if frac <= f => {}
                    _ => branch = Some((j, frac)),
                }
            }
        }
        let Some((bj, _)) = branch else {
            // integral already (can happen when the pushed bound used stale pruning)
            let cand = extract_assignment(instance, &map, &node.x);
            let obj = evaluate_assignment(instance, &cand);
            if obj > incumbent_obj {
                incumbent = cand;
                incumbent_obj = obj;
            }
            continue;
        };

        for fix_val in [0.0, 1.0] {
            let mut fixes = node.fixes.clone();
            fixes.push((bj, fix_val));
            match solve_node(&fixes) {
                LpOutcome::Optimal { x, objective } => {
                    node_count += 1;
                    let bound = objective + instance.objective_constant;
                    let integral = (0..map.binary_pairs.len())
                        .all(|j| x[j].min(1.0 - x[j]) <= INT_TOL);
                    if integral {
                        let cand = extract_assignment(instance, &map, &x);
                        let obj = evaluate_assignment(instance, &cand);
                        if obj > incumbent_obj {
                            incumbent = cand;
                            incumbent_obj = obj;
                        }
                    } else if bound > incumbent_obj + gap_tol(incumbent_obj) {
                        heap.push(Node { bound, seq, fixes, x });
                        seq += 1;
                    }
                }
                LpOutcome::Infeasible => {}
                LpOutcome::Unbounded | LpOutcome::Stalled => {
                    trouble = true;
                }
            }
        }
    }

    if status == SolveStatus::Optimal {
        if let Some(top) = heap.peek() {
            // we broke out early with open nodes: not proven unless pruned
            if top.bound > incumbent_obj + gap_tol(incumbent_obj) {
                status = SolveStatus::IncumbentTimeout;
            }
            best_bound = best_bound.max(top.bound);
        }
        if trouble {
            status = SolveStatus::IncumbentTimeout;
        }
    } else if let Some(top) = heap.peek() {
        best_bound = best_bound.max(top.bound);
    }
    if best_bound == f64::NEG_INFINITY || status == SolveStatus::Optimal {
        best_bound = best_bound.max(incumbent_obj);
    }

    let wall_time_s = t0.elapsed().as_secs_f64();
    if wall_time_s > 0.05 && std::env::var("HEXFLEET_TIMING").is_ok() {
        let n_bin: usize = instance.vehicles.iter().map(|v| v.columns.len()).sum();
        eprintln!(
            "slow milp: {:.0}ms vehicles {} binaries {} orders {} nodes {}",
            wall_time_s * 1e3,
            instance.vehicles.len(),
            n_bin,
            instance.order_ids.len(),
            node_count
        );
    }
    Ok((
        incumbent,
        SolveReport {
            status,
            objective: incumbent_obj,
            best_bound,
            node_count,
            wall_time_s,
        },
    ))
}
