//! Transition resimulation under perturbed scenarios.
//!
//! Everything needed to recompute the successor state and epoch duration
//! under a scenario `xi` is frozen at collection time: the pre-decision
//! roster, the executed action, the arrivals that joined afterwards, and
//! the empirical scenario vector. Travel-time perturbations re-round to
//! integer durations (piecewise constant); demand perturbations flow
//! linearly into the successor's demand features, with the normalizer
//! frozen so the map is differentiable.

use super::unflatten_scenario;
use crate::env::{featurize, step, EnvParams, SystemState};
use crate::hexgrid::HexGrid;
use crate::linalg::Mat;
use crate::projection::FeasibleAction;
use crate::scenario::Order;

#[derive(Debug, Clone)]
pub struct ResimCache {
    /// Pre-decision state, demand context as of the decision epoch.
    pub pre_state: SystemState,
    pub action: FeasibleAction,
    /// Orders that arrived for the successor epoch.
    pub arrivals: Vec<Order>,
    /// Seed those arrivals were drawn with (bookkeeping).
    pub arrival_seed: u64,
    /// Flattened empirical scenario `xi_hat` at the decision epoch.
    pub xi_hat: Vec<f64>,
    /// Successor demand normalizer frozen at collection time.
    pub frozen_demand_norm: f64,
    pub m: usize,
}

impl ResimCache {
    /// Epoch duration under the empirical scenario (vehicle-count-weighted).
    pub fn empirical_duration(&self, grid: &HexGrid, params: &EnvParams) -> f64 {
        let (_, delta) = resim_successor(self, grid, params, &self.xi_hat);
        delta
    }
}

/// Re-execute the stored action under scenario `xi`; returns the successor
/// state and the vehicle-count-weighted epoch duration.
pub fn resim_successor(
    cache: &ResimCache,
    grid: &HexGrid,
    params: &EnvParams,
    xi: &[f64],
) -> (SystemState, f64) {
    let field = unflatten_scenario(xi, cache.m);
    let outcome = step(&cache.pre_state, &cache.action, &field, cache.arrivals.clone(), grid, params);
    let delta = outcome.epoch_duration();
    let mut successor = outcome.next_state;
    successor.demand_norm = cache.frozen_demand_norm;
    (successor, delta)
}

/// Successor feature matrix under `xi` with the frozen demand normalizer,
/// plus the epoch duration. The demand feature columns are linear in the
/// demand block of `xi`; everything else is piecewise constant.
pub fn resim_features(
    cache: &ResimCache,
    grid: &HexGrid,
    params: &EnvParams,
    xi: &[f64],
) -> (Mat, f64) {
    let (mut successor, delta) = resim_successor(cache, grid, params, xi);
    // demand features from the raw (unrounded, unclamped-by-round) block
    let m = cache.m;
    let m2 = m * m;
    let mut out = vec![0.0; m];
    let mut inn = vec![0.0; m];
    for o in 0..m {
        for d in 0..m {
            let v = xi[o * m + d].max(0.0);
            out[o] += v;
            inn[d] += v;
        }
    }
    let _ = m2;
    successor.demand_out = out;
    successor.demand_in = inn;
    successor.demand_norm = cache.frozen_demand_norm;
    (featurize(&successor), delta)
}

/// Chain the gradient of a scalar through the successor features back onto
/// the scenario vector: only the demand block receives value gradient (the
/// travel block is piecewise constant through the rounding).
pub fn chain_feature_grad_to_scenario(cache: &ResimCache, phi_grad: &Mat) -> Vec<f64> {
    use crate::env::{COL_DEMAND_IN, COL_DEMAND_OUT};
    let m = cache.m;
    let norm = cache.frozen_demand_norm.max(1e-6);
    let mut g = vec![0.0; 2 * m * m];
    for o in 0..m {
        let g_out = phi_grad[(o, COL_DEMAND_OUT)] / norm;
        for d in 0..m {
            g[o * m + d] += g_out;
        }
    }
    for d in 0..m {
        let g_in = phi_grad[(d, COL_DEMAND_IN)] / norm;
        for o in 0..m {
            g[o * m + d] += g_in;
        }
    }
    g
}
