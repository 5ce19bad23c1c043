//! FIFO replay buffer with uniform sampling.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Mat;
use crate::projection::{FeasibleAction, Intention};
use crate::wdro::ResimCache;

/// One stored transition: pre-decision features, the raw and projected
/// actions, reward pieces, successor features under the decision epoch's
/// scenario, per-vehicle durations, and the resimulation cache (which holds
/// the empirical scenario vector).
#[derive(Debug, Clone)]
pub struct Transition {
    pub features: Mat,
    pub intention: Intention,
    /// Selected (mode, candidate) per idle vehicle at sampling time.
    pub selected: Vec<(usize, usize)>,
    pub action: FeasibleAction,
    pub action_emb: Vec<f64>,
    pub reward: f64,
    pub revenue: f64,
    pub drive_cost: f64,
    pub elec_cost: f64,
    pub penalty: f64,
    pub successor_features: Mat,
    pub durations: Vec<(usize, u32)>,
    pub epoch_duration: f64,
    pub cache: ResimCache,
}

/// Ring buffer, oldest evicted first at capacity.
pub struct ReplayBuffer {
    items: VecDeque<Arc<Transition>>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { items: VecDeque::with_capacity(capacity.min(1 << 20)), capacity }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Arc::new(t));
    }

    /// Uniform draws with replacement.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Arc<Transition>> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| self.items[rng.random_range(0..self.items.len())].clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Transition>> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SystemState;
    use crate::scenario::ScenarioField;
    use rand::SeedableRng;

    fn dummy_transition(tag: f64) -> Transition {
        let field = ScenarioField::zeros(1);
        let state = SystemState {
            step: 0,
            vehicles: Vec::new(),
            stations: Vec::new(),
            open_orders: Vec::new(),
            in_service: Vec::new(),
            feeder_cap_kw: 1.0,
            demand_out: vec![0.0],
            demand_in: vec![0.0],
            demand_norm: 1.0,
            dt_min: 5.0,
        };
        Transition {
            features: Mat::zeros(1, 1),
            intention: Intention::default(),
            selected: Vec::new(),
            action: FeasibleAction::empty(0),
            action_emb: Vec::new(),
            reward: tag,
            revenue: 0.0,
            drive_cost: 0.0,
            elec_cost: 0.0,
            penalty: 0.0,
            successor_features: Mat::zeros(1, 1),
            durations: Vec::new(),
            epoch_duration: 1.0,
            cache: ResimCache {
                pre_state: state,
                action: FeasibleAction::empty(0),
                arrivals: Vec::new(),
                arrival_seed: 0,
                xi_hat: crate::wdro::flatten_scenario(&field),
                frozen_demand_norm: 1.0,
                m: 1,
            },
        }
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(dummy_transition(i as f64));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..100 {
            buf.push(dummy_transition(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0u64; 100];
        let draws = 100_000;
        for t in buf.sample(draws, &mut rng) {
            counts[t.reward as usize] += 1;
        }
        let probs = vec![1.0 / 100.0; 100];
        let stat = crate::neural::chi2_statistic(&counts, &probs);
        let crit = crate::neural::chi2_quantile_99(99);
        assert!(stat < crit, "chi2 {} >= {}", stat, crit);
    }
}
