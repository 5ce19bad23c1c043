//! The robust actor-critic training loop: rollout, project, step, store,
//! then per-minibatch robust targets via the scenario adversary, critic and
//! value regression, actor update with a straight-through projection, one
//! averaged dual update, and Polyak target tracking.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policies::execute_intention_clipped;
use super::replay::{ReplayBuffer, Transition};
use crate::env::{
    build_candidates, featurize, initial_state, step, Candidate, EnvParams, FleetConfig,
    SystemState, FEATURE_DIM,
};
use crate::hexgrid::{graph_matrices, GraphMatrices, HexGrid};
use crate::neural::{
    action_embedding, actor_sample, critic_q, gcn_forward, leaf_actor, leaf_gcn, leaf_mlp,
    mat_to_tensor, polyak, state_value_and_grad, stored_intention_log_prob, tau_schedule, value_v,
    Adam, ParameterSet, Tape, TensorData, TensorRef, MODE_CHG, MODE_REB, MODE_SERVE,
};
use crate::projection::{project, FeasibleAction, Intention, SolveLimits, SolveStatus, VehicleTask};
use crate::scenario::{sample_orders, ScenarioDataset, ScenarioField};
use crate::wdro::{
    chain_feature_grad_to_scenario, flatten_scenario, projected_subgradient_min, resim_features,
    resim_successor, robust_target, unflatten_scenario, BoxKind, DualState, GroundMetric,
    ResimCache, SupportSet,
};

/// Training hyperparameters. Paper-scale defaults with desk-scale knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_value: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub rho_target: f64,
    pub beta: f64,
    pub eta0: f64,
    pub tau_max_s: f64,
    /// Deterministic branch-and-bound node cap per projection.
    pub milp_node_cap: u64,
    pub mu: f64,
    pub polyak_tau: f64,
    pub alpha: f64,
    pub inner_k: usize,
    /// Inner subgradient step as a fraction of the support radius.
    pub inner_step_frac: f64,
    /// Support-set radius around each empirical sample (defaults to 3 rho).
    pub ball_radius: f64,
    pub lambda0: f64,
    pub hidden: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub warmup_steps: usize,
    pub greedy_pickup_hops: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_actor: 5e-5,
            lr_critic: 1e-4,
            lr_value: 1e-4,
            gamma: 0.995,
            buffer_capacity: 100_000,
            batch_size: 128,
            rho: 0.3,
            rho_target: 0.2,
            beta: 0.3,
            eta0: 0.01,
            tau_max_s: 3.0,
            milp_node_cap: 400,
            mu: 0.5,
            polyak_tau: 0.005,
            alpha: 0.05,
            inner_k: 10,
            inner_step_frac: 0.05,
            ball_radius: 0.9,
            lambda0: 0.5,
            hidden: 64,
            episodes: 200,
            steps_per_episode: 48,
            warmup_steps: 256,
            greedy_pickup_hops: 3,
        }
    }
}

/// Ablation switches (independent).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Execute the raw intention argmax with per-constraint clipping instead
    /// of the projection (the feeder cap is deliberately left unenforced).
    pub no_milp: bool,
    /// Plain duration-aware soft targets instead of robust ones.
    pub no_wdro: bool,
    /// Euclidean ground metric instead of the graph-aligned one.
    pub identity_metric: bool,
}

/// One log record per training step.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: u64,
    pub episode_return: f64,
    pub ma100: f64,
    pub loss_q1: f64,
    pub loss_q2: f64,
    pub loss_pi: f64,
    pub lambda: f64,
    pub rho_hat: f64,
    /// Cumulative (optimal, incumbent-timeout, fallback) projection counts.
    pub milp_status: (u64, u64, u64),
}

impl TrainConfig {
    pub fn solve_limits(&self) -> SolveLimits {
        SolveLimits { tau_max_s: self.tau_max_s, node_cap: self.milp_node_cap }
    }
}

pub const TRAIN_LOG_HEADER: &str =
    "step,episode_return,ma100,loss_q1,loss_q2,loss_pi,lambda,rho_hat,milp_status_counts";

pub fn train_log_row(row: &LogRow) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}|{}|{}",
        row.step,
        row.episode_return,
        row.ma100,
        row.loss_q1,
        row.loss_q2,
        row.loss_pi,
        row.lambda,
        row.rho_hat,
        row.milp_status.0,
        row.milp_status.1,
        row.milp_status.2
    )
}

/// Everything a training run produces.
pub struct TrainArtifacts {
    pub params: ParameterSet,
    pub log: Vec<LogRow>,
    pub episode_returns: Vec<f64>,
    pub lambda_trace: Vec<f64>,
    pub rho_hat_trace: Vec<f64>,
    pub milp_status: (u64, u64, u64),
    /// Set when training aborted on a non-finite loss; the parameters are
    /// the pre-abort snapshot for diagnostics.
    pub aborted: Option<String>,
}

pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample an intention at a state (throwaway tape); rollout path.
pub(crate) fn sample_intention(
    params: &ParameterSet,
    gm: &GraphMatrices,
    state: &SystemState,
    candidates: &[(usize, Vec<Candidate>)],
    rng: &mut ChaCha8Rng,
) -> (Intention, Vec<(usize, usize)>) {
    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let phi = featurize(state);
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let nodes = leaf_actor(&mut tape, params);
    let sample = actor_sample(&mut tape, params, &nodes, e, state, candidates, rng);
    let selected =
        sample.vehicles.iter().map(|v| (v.selected_mode, v.selected_candidate)).collect();
    (sample.intention, selected)
}

struct UpdateOutcome {
    loss_q1: f64,
    loss_q2: f64,
    loss_pi: f64,
    rho_hat_mean: f64,
}

struct Trainer<'a> {
    grid: &'a HexGrid,
    gm: GraphMatrices,
    dataset: &'a ScenarioDataset,
    env_params: &'a EnvParams,
    config: &'a TrainConfig,
    flags: AblationFlags,
    metric: Option<GroundMetric>,
    params: ParameterSet,
    adam_actor: Adam,
    adam_critic: Adam,
    adam_value: Adam,
    dual: DualState,
    replay: ReplayBuffer,
    global_step: u64,
    milp_status: (u64, u64, u64),
    seed: u64,
}

impl<'a> Trainer<'a> {
    /// Robust (or plain) critic targets for a batch, plus realized radii.
    fn targets(&self, batch: &[Arc<Transition>]) -> Vec<(f64, f64)> {
        let gamma = self.config.gamma;
        batch
            .par_iter()
            .enumerate()
            .map(|(idx, tr)| {
                if self.flags.no_wdro {
                    let y = self.plain_target(tr, idx);
                    (y, 0.0)
                } else {
                    let metric = self.metric.as_ref().expect("metric present unless no_wdro");
                    let set = SupportSet::new(
                        tr.cache.xi_hat.clone(),
                        self.config.ball_radius,
                        BoxKind::Scenario { m: tr.cache.m },
                    );
                    let inner = projected_subgradient_min(
                        |xi| {
                            let (phi, delta) =
                                resim_features(&tr.cache, self.grid, self.env_params, xi);
                            let (v, grad) =
                                state_value_and_grad(&self.params, &self.gm.a_hat, &phi, true);
                            let grad = grad?;
                            let disc = gamma.powf(delta);
                            let g = chain_feature_grad_to_scenario(&tr.cache, &grad);
                            Some((disc * v, g.into_iter().map(|x| x * disc).collect()))
                        },
                        metric,
                        &set,
                        self.dual.lambda,
                        self.config.inner_k,
                        self.config.inner_step_frac * self.config.ball_radius,
                    );
                    let y = robust_target(tr.reward, self.dual.lambda, self.config.rho, &inner);
                    (y, inner.rho_hat)
                }
            })
            .collect()
    }

    fn plain_target(&self, tr: &Transition, idx: usize) -> f64 {
        non_robust_target(
            &self.params,
            &self.gm,
            self.grid,
            self.env_params,
            self.config,
            self.flags,
            tr,
            mix_seed(self.seed, self.global_step * 131 + idx as u64),
        )
    }

    /// Critic regression against the targets; updates critics and the shared
    /// encoder. Returns the two mean losses.
    fn critic_update(&mut self, batch: &[Arc<Transition>], targets: &[(f64, f64)]) -> Result<(f64, f64), String> {
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(&self.gm.a_hat));
        let gcn = leaf_gcn(&mut tape, &self.params);
        let c1 = leaf_mlp(&mut tape, &self.params.critic1);
        let c2 = leaf_mlp(&mut tape, &self.params.critic2);
        let mut sq1: Option<TensorRef> = None;
        let mut sq2: Option<TensorRef> = None;
        for (tr, &(y, _)) in batch.iter().zip(targets) {
            let x = tape.leaf(mat_to_tensor(&tr.features));
            let e = gcn_forward(&mut tape, &gcn, a, x);
            let pooled = tape.mean_rows(e);
            let emb =
                tape.leaf(TensorData::from_vec(1, tr.action_emb.len(), tr.action_emb.clone()));
            let q1 = critic_q(&mut tape, &c1, pooled, emb);
            let q2 = critic_q(&mut tape, &c2, pooled, emb);
            let d1 = tape.add_scalar(q1, -y);
            let d2 = tape.add_scalar(q2, -y);
            let e1 = tape.square(d1);
            let e2 = tape.square(d2);
            sq1 = Some(match sq1 {
                Some(acc) => tape.add(acc, e1),
                None => e1,
            });
            sq2 = Some(match sq2 {
                Some(acc) => tape.add(acc, e2),
                None => e2,
            });
        }
        let n = batch.len() as f64;
        let l1 = tape.scale(sq1.unwrap(), 1.0 / n);
        let l2 = tape.scale(sq2.unwrap(), 1.0 / n);
        let loss = tape.add(l1, l2);
        tape.backward(loss).map_err(|e| e.to_string())?;

        let mut grads: HashMap<String, Vec<f64>> = HashMap::new();
        let pairs: [(&str, TensorRef); 12] = [
            ("gcn_w0", gcn.w0),
            ("gcn_b0", gcn.b0),
            ("gcn_w1", gcn.w1),
            ("gcn_b1", gcn.b1),
            ("critic1_w1", c1.w1),
            ("critic1_b1", c1.b1),
            ("critic1_w2", c1.w2),
            ("critic1_b2", c1.b2),
            ("critic2_w1", c2.w1),
            ("critic2_b1", c2.b1),
            ("critic2_w2", c2.w2),
            ("critic2_b2", c2.b2),
        ];
        for (name, node) in pairs {
            if let Some(g) = tape.grad(node) {
                grads.insert(name.to_string(), g.to_vec());
            }
        }
        let (lq1, lq2) = (tape.scalar_value(l1), tape.scalar_value(l2));
        self.adam_critic.step(&mut self.params, &grads);
        Ok((lq1, lq2))
    }

    /// Value regression toward `min_k Q_k(s, a_stored) - alpha log pi(a_stored|s)`
    /// with the stored projected action reused for replayed states.
    fn value_update(&mut self, batch: &[Arc<Transition>]) -> Result<(), String> {
        // targets with current critics and current policy log-probs
        let v_targets: Vec<f64> = batch
            .par_iter()
            .map(|tr| {
                let mut tape = Tape::new();
                let a = tape.leaf(mat_to_tensor(&self.gm.a_hat));
                let x = tape.leaf(mat_to_tensor(&tr.features));
                let gcn = leaf_gcn(&mut tape, &self.params);
                let e = gcn_forward(&mut tape, &gcn, a, x);
                let pooled = tape.mean_rows(e);
                let emb =
                    tape.leaf(TensorData::from_vec(1, tr.action_emb.len(), tr.action_emb.clone()));
                let c1 = leaf_mlp(&mut tape, &self.params.critic1);
                let c2 = leaf_mlp(&mut tape, &self.params.critic2);
                let q1n = critic_q(&mut tape, &c1, pooled, emb);
                let q2n = critic_q(&mut tape, &c2, pooled, emb);
                let q1 = tape.scalar_value(q1n);
                let q2 = tape.scalar_value(q2n);
                let log_p = self.stored_log_prob(&mut tape, e, tr);
                q1.min(q2) - self.params.alpha * log_p
            })
            .collect();

        // pooled embeddings are constants for the value head update
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(&self.gm.a_hat));
        let gcn = leaf_gcn(&mut tape, &self.params);
        let vh = leaf_mlp(&mut tape, &self.params.value);
        let mut sq: Option<TensorRef> = None;
        for (tr, &target) in batch.iter().zip(&v_targets) {
            let x = tape.leaf(mat_to_tensor(&tr.features));
            let e = gcn_forward(&mut tape, &gcn, a, x);
            let pooled = tape.mean_rows(e);
            let v = value_v(&mut tape, &vh, pooled);
            let d = tape.add_scalar(v, -target);
            let e2 = tape.square(d);
            sq = Some(match sq {
                Some(acc) => tape.add(acc, e2),
                None => e2,
            });
        }
        let loss = tape.scale(sq.unwrap(), 1.0 / batch.len() as f64);
        tape.backward(loss).map_err(|e| e.to_string())?;
        let mut grads: HashMap<String, Vec<f64>> = HashMap::new();
        for (name, node) in
            [("value_w1", vh.w1), ("value_b1", vh.b1), ("value_w2", vh.w2), ("value_b2", vh.b2)]
        {
            if let Some(g) = tape.grad(node) {
                grads.insert(name.to_string(), g.to_vec());
            }
        }
        self.adam_value.step(&mut self.params, &grads);
        Ok(())
    }

    /// Log-probability of the stored intention under the current policy,
    /// evaluated at the stored selections.
    fn stored_log_prob(&self, tape: &mut Tape, embeddings: TensorRef, tr: &Transition) -> f64 {
        let field = unflatten_scenario(&tr.cache.xi_hat, tr.cache.m);
        let candidates = build_candidates(&tr.cache.pre_state, self.grid, &field, self.env_params);
        if candidates.is_empty() {
            return 0.0;
        }
        let nodes = leaf_actor(tape, &self.params);
        let lp = stored_intention_log_prob(
            tape,
            &nodes,
            embeddings,
            &tr.cache.pre_state,
            &candidates,
            &tr.intention,
            &tr.selected,
        );
        tape.scalar_value(lp)
    }

    /// Actor update: fresh intentions at replayed states, re-projected, with
    /// straight-through gradients along the selected components.
    fn actor_update(&mut self, batch: &[Arc<Transition>]) -> Result<f64, String> {
        let results: Vec<Result<(f64, HashMap<String, Vec<f64>>), String>> = batch
            .par_iter()
            .enumerate()
            .map(|(idx, tr)| self.actor_element(tr, idx))
            .collect();
        let mut grads_sum: HashMap<String, Vec<f64>> = HashMap::new();
        let mut loss_sum = 0.0;
        let mut n = 0.0;
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            n += 1.0;
            for (k, g) in grads {
                match grads_sum.get_mut(&k) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => {
                        grads_sum.insert(k, g);
                    }
                }
            }
        }
        if n == 0.0 {
            return Ok(0.0);
        }
        for g in grads_sum.values_mut() {
            for v in g.iter_mut() {
                *v /= n;
            }
        }
        self.adam_actor.step(&mut self.params, &grads_sum);
        Ok(loss_sum / n)
    }

    fn actor_element(
        &self,
        tr: &Transition,
        idx: usize,
    ) -> Result<(f64, HashMap<String, Vec<f64>>), String> {
        let state = &tr.cache.pre_state;
        let field = unflatten_scenario(&tr.cache.xi_hat, tr.cache.m);
        let candidates = build_candidates(state, self.grid, &field, self.env_params);
        if candidates.is_empty() {
            return Ok((0.0, HashMap::new()));
        }
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(&self.gm.a_hat));
        let x = tape.leaf(mat_to_tensor(&tr.features));
        let gcn = leaf_gcn(&mut tape, &self.params);
        let e = gcn_forward(&mut tape, &gcn, a, x);
        let nodes = leaf_actor(&mut tape, &self.params);
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0xAC7_0B, self.global_step * 257 + idx as u64));
        let sample = actor_sample(&mut tape, &self.params, &nodes, e, state, &candidates, &mut rng);

        let action = if self.flags.no_milp {
            execute_intention_clipped(state, &sample.intention, &candidates, self.env_params)
        } else {
            project(
                state,
                &sample.intention,
                &candidates,
                self.config.mu,
                self.config.solve_limits(),
                self.grid,
                self.env_params,
            )
            .0
        };

        // straight-through action embedding: forward from the projected
        // action, backward onto the selected mode/target/power sample nodes
        let emb = action_embedding(state, &action);
        let emb_len = emb.len();
        let m = state.m();
        let n_veh = state.n_vehicles().max(1) as f64;
        let mut routes: Vec<(TensorRef, usize, usize, f64)> = Vec::new();
        for (slot, (vi, list)) in candidates.iter().enumerate() {
            let veh_nodes = &sample.vehicles[slot];
            let hex = state.vehicles[*vi].hex;
            let task = action
                .tasks
                .iter()
                .find(|(v, _)| v == vi)
                .map(|(_, t)| t.clone())
                .unwrap_or(VehicleTask::Idle);
            let (mode, cand_idx, station): (Option<usize>, Option<usize>, Option<usize>) = match task {
                VehicleTask::Serve { order_id } => (
                    Some(MODE_SERVE),
                    list.iter().position(
                        |c| matches!(c, Candidate::Serve { order_id: oid, .. } if *oid == order_id),
                    ),
                    None,
                ),
                VehicleTask::Reposition { target } => (
                    Some(MODE_REB),
                    list.iter().position(
                        |c| matches!(c, Candidate::Reposition { target: t, .. } if *t == target),
                    ),
                    None,
                ),
                VehicleTask::Charge { station_idx, .. } => (
                    Some(MODE_CHG),
                    list.iter().position(
                        |c| matches!(c, Candidate::Charge { station_idx: s, .. } if *s == station_idx),
                    ),
                    Some(station_idx),
                ),
                VehicleTask::Idle => (None, None, None),
            };
            match (mode, cand_idx) {
                (Some(mode), Some(ci)) => {
                    let channel = hex * 4 + mode;
                    let within = within_mode_index(list, mode, ci);
                    let mode_val = tape.value(veh_nodes.mode_node).data[mode];
                    if let Some(tn) = veh_nodes.target_nodes[mode] {
                        let t_val = tape.value(tn).data[within];
                        routes.push((veh_nodes.mode_node, mode, channel, t_val / n_veh));
                        routes.push((tn, within, channel, mode_val / n_veh));
                    }
                    if let (Some(si), Some(pn)) = (station, veh_nodes.power_node) {
                        let pch = 4 * m + si;
                        routes.push((pn, 0, pch, 1.0 / state.feeder_cap_kw.max(1e-9)));
                    }
                }
                _ => {
                    // idle: mass flows from modes with no candidates
                    let channel = hex * 4 + 3;
                    for mode in 0..3 {
                        if veh_nodes.target_nodes[mode].is_none() {
                            routes.push((veh_nodes.mode_node, mode, channel, 1.0 / n_veh));
                        }
                    }
                }
            }
        }
        let emb_node = tape.linear_route(TensorData::from_vec(1, emb_len, emb), routes);

        let pooled = tape.mean_rows(e);
        let c1 = leaf_mlp(&mut tape, &self.params.critic1);
        let c2 = leaf_mlp(&mut tape, &self.params.critic2);
        let q1 = critic_q(&mut tape, &c1, pooled, emb_node);
        let q2 = critic_q(&mut tape, &c2, pooled, emb_node);
        let qmin = if tape.scalar_value(q1) <= tape.scalar_value(q2) { q1 } else { q2 };
        let ent = tape.scale(sample.log_prob, self.params.alpha);
        let neg_q = tape.scale(qmin, -1.0);
        let loss = tape.add(ent, neg_q);
        let loss_val = tape.scalar_value(loss);
        tape.backward(loss).map_err(|e| e.to_string())?;

        let mut grads = HashMap::new();
        let head_pairs = [
            ("mode_head", &nodes.mode),
            ("score_serve", &nodes.serve),
            ("score_reb", &nodes.reb),
            ("score_chg", &nodes.chg),
            ("power_head", &nodes.power),
        ];
        for (name, mlp_nodes) in head_pairs {
            for (suffix, node) in [
                ("w1", mlp_nodes.w1),
                ("b1", mlp_nodes.b1),
                ("w2", mlp_nodes.w2),
                ("b2", mlp_nodes.b2),
            ] {
                if let Some(g) = tape.grad(node) {
                    grads.insert(format!("{name}_{suffix}"), g.to_vec());
                }
            }
        }
        Ok((loss_val, grads))
    }

    fn update(&mut self, rng: &mut ChaCha8Rng) -> Result<UpdateOutcome, String> {
        let timing = std::env::var("HEXFLEET_TIMING").is_ok();
        let batch = self.replay.sample(self.config.batch_size, rng);
        let t0 = std::time::Instant::now();
        let targets = self.targets(&batch);
        let t1 = std::time::Instant::now();
        let (loss_q1, loss_q2) = self.critic_update(&batch, &targets)?;
        let t2 = std::time::Instant::now();
        self.value_update(&batch)?;
        let t3 = std::time::Instant::now();
        let loss_pi = self.actor_update(&batch)?;
        if timing {
            eprintln!(
                "targets {:.0}ms critic {:.0}ms value {:.0}ms actor {:.0}ms",
                t1.duration_since(t0).as_secs_f64() * 1e3,
                t2.duration_since(t1).as_secs_f64() * 1e3,
                t3.duration_since(t2).as_secs_f64() * 1e3,
                t3.elapsed().as_secs_f64() * 1e3
            );
        }
        let rho_hat_mean = if self.flags.no_wdro {
            0.0
        } else {
            targets.iter().map(|&(_, r)| r).sum::<f64>() / targets.len() as f64
        };
        if !self.flags.no_wdro {
            self.dual.update(rho_hat_mean);
        }
        let tau = self.config.polyak_tau;
        polyak(&mut self.params.target1, &self.params.critic1.clone(), tau);
        polyak(&mut self.params.target2, &self.params.critic2.clone(), tau);
        Ok(UpdateOutcome { loss_q1, loss_q2, loss_pi, rho_hat_mean })
    }
}


/// Duration-aware soft target of the non-robust backup: fresh policy sample
/// at the resimulated successor, projected, scored by the target critics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn non_robust_target(
    params: &ParameterSet,
    gm: &GraphMatrices,
    grid: &HexGrid,
    env_params: &EnvParams,
    config: &TrainConfig,
    flags: AblationFlags,
    tr: &Transition,
    sample_seed: u64,
) -> f64 {
    let (s_prime, _) = resim_successor(&tr.cache, grid, env_params, &tr.cache.xi_hat);
    let field = unflatten_scenario(&tr.cache.xi_hat, tr.cache.m);
    let candidates = build_candidates(&s_prime, grid, &field, env_params);

    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&tr.successor_features));
    let gcn = leaf_gcn(&mut tape, params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let nodes = leaf_actor(&mut tape, params);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let sample = actor_sample(&mut tape, params, &nodes, e, &s_prime, &candidates, &mut rng);
    let log_p = tape.scalar_value(sample.log_prob);

    let action = if candidates.is_empty() {
        FeasibleAction::empty(s_prime.stations.len())
    } else if flags.no_milp {
        execute_intention_clipped(&s_prime, &sample.intention, &candidates, env_params)
    } else {
        project(&s_prime, &sample.intention, &candidates, config.mu, config.solve_limits(), grid, env_params).0
    };
    let emb = action_embedding(&s_prime, &action);
    let pooled = tape.mean_rows(e);
    let emb_node = tape.leaf(TensorData::from_vec(1, emb.len(), emb));
    let t1 = leaf_mlp(&mut tape, &params.target1);
    let t2 = leaf_mlp(&mut tape, &params.target2);
    let q1n = critic_q(&mut tape, &t1, pooled, emb_node);
    let q2n = critic_q(&mut tape, &t2, pooled, emb_node);
    let q1 = tape.scalar_value(q1n);
    let q2 = tape.scalar_value(q2n);
    tr.reward + config.gamma.powf(tr.epoch_duration) * (q1.min(q2) - params.alpha * log_p)
}

fn within_mode_index(list: &[Candidate], mode: usize, cand_idx: usize) -> usize {
    let mut k = 0;
    for (c, cand) in list.iter().enumerate() {
        let cm = match cand {
            Candidate::Serve { .. } => MODE_SERVE,
            Candidate::Reposition { .. } => MODE_REB,
            Candidate::Charge { .. } => MODE_CHG,
            Candidate::Idle => usize::MAX,
        };
        if c == cand_idx {
            return k;
        }
        if cm == mode {
            k += 1;
        }
    }
    unreachable!("candidate index out of range")
}

/// Run the full training loop. Never panics on numerical trouble: a
/// non-finite loss aborts with the diagnostic recorded in the artifacts.
pub fn pdrsac_train(
    grid: &HexGrid,
    dataset: &ScenarioDataset,
    fleet: &FleetConfig,
    env_params: &EnvParams,
    config: &TrainConfig,
    flags: AblationFlags,
    seed: u64,
) -> TrainArtifacts {
    assert!(config.gamma > 0.0 && config.gamma < 1.0, "discount must lie in (0,1)");
    let gm = graph_matrices(grid);
    let metric = if flags.no_wdro {
        None
    } else if flags.identity_metric {
        Some(GroundMetric::identity(2 * grid.len() * grid.len()))
    } else {
        Some(GroundMetric::from_dataset(dataset, &gm, config.beta))
    };
    let mut params =
        ParameterSet::new(grid.len(), FEATURE_DIM, grid.station_hexes().len(), config.hidden, seed);
    params.alpha = config.alpha;

    let mut trainer = Trainer {
        grid,
        gm,
        dataset,
        env_params,
        config,
        flags,
        metric,
        params,
        adam_actor: Adam::new(config.lr_actor),
        adam_critic: Adam::new(config.lr_critic),
        adam_value: Adam::new(config.lr_value),
        dual: DualState::new(config.lambda0, config.eta0, config.rho, config.rho_target),
        replay: ReplayBuffer::new(config.buffer_capacity),
        global_step: 0,
        milp_status: (0, 0, 0),
        seed,
    };

    let horizon = dataset.horizon().max(1);
    let mut log = Vec::new();
    let mut episode_returns: Vec<f64> = Vec::new();
    let mut lambda_trace = Vec::new();
    let mut rho_hat_trace = Vec::new();
    let mut aborted = None;
    let mut rng_train = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF00D));

    'outer: for episode in 0..config.episodes {
        let t0 = (episode * config.steps_per_episode) % horizon;
        let ep_seed = mix_seed(seed, episode as u64);
        let mut ep_rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let mut state =
            initial_state(grid, fleet, env_params, &trainer.dataset.fields[t0], ep_seed);
        state.step = t0;
        state.open_orders = sample_orders(&trainer.dataset.fields[t0], t0, ep_rng.random());
        let mut ep_return = 0.0;

        for k in 0..config.steps_per_episode {
            let fidx = (t0 + k) % horizon;
            let nidx = (t0 + k + 1) % horizon;
            let field = &trainer.dataset.fields[fidx];
            let next_field: &ScenarioField = &trainer.dataset.fields[nidx];

            let candidates = build_candidates(&state, grid, field, env_params);
            let (intention, selected) =
                sample_intention(&trainer.params, &trainer.gm, &state, &candidates, &mut ep_rng);
            let action = if candidates.is_empty() {
                FeasibleAction::empty(state.stations.len())
            } else if flags.no_milp {
                execute_intention_clipped(&state, &intention, &candidates, env_params)
            } else {
                let (action, report) = project(
                    &state,
                    &intention,
                    &candidates,
                    config.mu,
                    config.solve_limits(),
                    grid,
                    env_params,
                );
                match report.status {
                    SolveStatus::Optimal => trainer.milp_status.0 += 1,
                    SolveStatus::IncumbentTimeout => trainer.milp_status.1 += 1,
                    SolveStatus::Fallback => trainer.milp_status.2 += 1,
                }
                action
            };

            let arrival_seed = ep_rng.random::<u64>();
            let arrivals = sample_orders(next_field, state.step + 1, arrival_seed);
            let outcome = step(&state, &action, field, arrivals.clone(), grid, env_params);
            ep_return += outcome.reward;

            let cache = ResimCache {
                pre_state: state.clone(),
                action: action.clone(),
                arrivals,
                arrival_seed,
                xi_hat: flatten_scenario(field),
                frozen_demand_norm: outcome.next_state.demand_norm,
                m: grid.len(),
            };
            trainer.replay.push(Transition {
                features: featurize(&state),
                intention,
                selected,
                action_emb: action_embedding(&state, &action),
                action,
                reward: outcome.reward,
                revenue: outcome.revenue,
                drive_cost: outcome.drive_cost,
                elec_cost: outcome.elec_cost,
                penalty: outcome.penalty,
                successor_features: featurize(&outcome.next_state),
                durations: outcome.durations.clone(),
                epoch_duration: outcome.epoch_duration(),
                cache,
            });

            trainer.global_step += 1;
            trainer.params.tau_gumbel = tau_schedule(trainer.global_step);

            let mut row = LogRow {
                step: trainer.global_step,
                episode_return: episode_returns.last().copied().unwrap_or(0.0),
                ma100: moving_average(&episode_returns, 100),
                loss_q1: 0.0,
                loss_q2: 0.0,
                loss_pi: 0.0,
                lambda: trainer.dual.lambda,
                rho_hat: 0.0,
                milp_status: trainer.milp_status,
            };
            if trainer.replay.len() >= config.warmup_steps {
                match trainer.update(&mut rng_train) {
                    Ok(upd) => {
                        row.loss_q1 = upd.loss_q1;
                        row.loss_q2 = upd.loss_q2;
                        row.loss_pi = upd.loss_pi;
                        row.rho_hat = upd.rho_hat_mean;
                        row.lambda = trainer.dual.lambda;
                        lambda_trace.push(trainer.dual.lambda);
                        rho_hat_trace.push(upd.rho_hat_mean);
                    }
                    Err(e) => {
                        aborted = Some(format!("step {}: {}", trainer.global_step, e));
                        log.push(row);
                        break 'outer;
                    }
                }
            }
            log.push(row);

            state = outcome.next_state;
            state.refresh_demand(next_field);
        }
        episode_returns.push(ep_return);
    }

    TrainArtifacts {
        params: trainer.params,
        log,
        episode_returns,
        lambda_trace,
        rho_hat_trace,
        milp_status: trainer.milp_status,
        aborted,
    }
}

pub(crate) fn moving_average(values: &[f64], window: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len().min(window);
    values[values.len() - n..].iter().sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgrid::build_grid;
    use crate::scenario::{synth_scenario, SynthConfig};

    fn tiny_setup() -> (HexGrid, ScenarioDataset, FleetConfig, EnvParams, TrainConfig) {
        let grid = build_grid(3, 3, 0.8, 1, 0, None).unwrap();
        let dataset = synth_scenario(
            &grid,
            &SynthConfig { horizon: 48, hotspots: 2, peak_rate: 3.0, seed: 5, dt_min: 5.0 },
        );
        let fleet = FleetConfig { n_vehicles: 4, feeder_cap_kw: 40.0, ..FleetConfig::default() };
        let env_params = EnvParams::default();
        let config = TrainConfig {
            hidden: 16,
            episodes: 2,
            steps_per_episode: 10,
            warmup_steps: 6,
            batch_size: 4,
            inner_k: 3,
            buffer_capacity: 500,
            ..TrainConfig::default()
        };
        (grid, dataset, fleet, env_params, config)
    }

    #[test]
    fn tiny_training_run_completes() {
        let (grid, dataset, fleet, env_params, config) = tiny_setup();
        let artifacts =
            pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), 7);
        assert!(artifacts.aborted.is_none(), "{:?}", artifacts.aborted);
        assert_eq!(artifacts.episode_returns.len(), 2);
        assert_eq!(artifacts.log.len(), 20);
        // dual variable stays nonnegative
        assert!(artifacts.lambda_trace.iter().all(|&l| l >= 0.0));
        // losses finite once updates start
        assert!(artifacts.log.iter().all(|r| r.loss_q1.is_finite() && r.loss_pi.is_finite()));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (grid, dataset, fleet, env_params, config) = tiny_setup();
        let a = pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), 3);
        let b = pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), 3);
        assert_eq!(a.log.len(), b.log.len());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(train_log_row(ra), train_log_row(rb));
        }
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rates_freeze_parameters() {
        let (grid, dataset, fleet, env_params, mut config) = tiny_setup();
        config.lr_actor = 0.0;
        config.lr_critic = 0.0;
        config.lr_value = 0.0;
        let before = ParameterSet::new(
            grid.len(),
            FEATURE_DIM,
            grid.station_hexes().len(),
            config.hidden,
            11,
        );
        let artifacts =
            pdrsac_train(&grid, &dataset, &fleet, &env_params, &config, AblationFlags::default(), 11);
        // same seed constructs the same initial parameters; zero lr keeps
        // every tensor bitwise identical (polyak targets track identical
        // critics, so they stay equal too)
        for ((name_a, ta), (name_b, tb)) in
            artifacts.params.named_tensors().iter().zip(before.named_tensors().iter())
        {
            assert_eq!(name_a, name_b);
            assert_eq!(ta.data, tb.data, "{} changed", name_a);
        }
    }

    #[test]
    fn no_wdro_targets_match_independent_recomputation() {
        let (grid, dataset, fleet, env_params, mut config) = tiny_setup();
        config.episodes = 1;
        let flags = AblationFlags { no_wdro: true, ..AblationFlags::default() };
        // roll a few transitions through the public trainer to harvest a
        // replay item, then recompute the target by hand
        let gm = graph_matrices(&grid);
        let params =
            ParameterSet::new(grid.len(), FEATURE_DIM, grid.station_hexes().len(), config.hidden, 3);

        // build one transition manually
        let t0 = 0usize;
        let ep_seed = mix_seed(3, 0);
        let mut ep_rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let mut state = initial_state(&grid, &fleet, &env_params, &dataset.fields[t0], ep_seed);
        state.open_orders = sample_orders(&dataset.fields[t0], t0, ep_rng.random());
        let field = &dataset.fields[0];
        let next_field = &dataset.fields[1];
        let candidates = build_candidates(&state, &grid, field, &env_params);
        let (intention, selected) = sample_intention(&params, &gm, &state, &candidates, &mut ep_rng);
        let (action, _) =
            project(&state, &intention, &candidates, config.mu, config.solve_limits(), &grid, &env_params);
        let arrival_seed = ep_rng.random::<u64>();
        let arrivals = sample_orders(next_field, state.step + 1, arrival_seed);
        let outcome = step(&state, &action, field, arrivals.clone(), &grid, &env_params);
        let tr = Transition {
            features: featurize(&state),
            intention,
            selected,
            action_emb: action_embedding(&state, &action),
            action: action.clone(),
            reward: outcome.reward,
            revenue: outcome.revenue,
            drive_cost: outcome.drive_cost,
            elec_cost: outcome.elec_cost,
            penalty: outcome.penalty,
            successor_features: featurize(&outcome.next_state),
            durations: outcome.durations.clone(),
            epoch_duration: outcome.epoch_duration(),
            cache: ResimCache {
                pre_state: state.clone(),
                action,
                arrivals,
                arrival_seed,
                xi_hat: flatten_scenario(field),
                frozen_demand_norm: outcome.next_state.demand_norm,
                m: grid.len(),
            },
        };

        let sample_seed = 12345u64;
        let y = non_robust_target(&params, &gm, &grid, &env_params, &config, flags, &tr, sample_seed);

        // independent recomputation: same resim and fresh sample, but the
        // target-critic MLPs evaluated with hand-rolled matrix arithmetic
        let (s_prime, _) = resim_successor(&tr.cache, &grid, &env_params, &tr.cache.xi_hat);
        let field_hat = unflatten_scenario(&tr.cache.xi_hat, tr.cache.m);
        let cands2 = build_candidates(&s_prime, &grid, &field_hat, &env_params);
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(&gm.a_hat));
        let x = tape.leaf(mat_to_tensor(&tr.successor_features));
        let gcn = leaf_gcn(&mut tape, &params);
        let e = gcn_forward(&mut tape, &gcn, a, x);
        let nodes = leaf_actor(&mut tape, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let sample2 = actor_sample(&mut tape, &params, &nodes, e, &s_prime, &cands2, &mut rng);
        let logp = tape.scalar_value(sample2.log_prob);
        let (a2, _) = project(
            &s_prime,
            &sample2.intention,
            &cands2,
            config.mu,
            config.solve_limits(),
            &grid,
            &env_params,
        );
        let emb = action_embedding(&s_prime, &a2);
        // pooled embedding by hand from tape values
        let e_val = tape.value(e).clone();
        let h = config.hidden;
        let mut pooled = vec![0.0; h];
        for r in 0..e_val.rows {
            for c in 0..h {
                pooled[c] += e_val.data[r * h + c] / e_val.rows as f64;
            }
        }
        let manual_mlp = |mlp: &crate::neural::Mlp, input: &[f64]| -> f64 {
            let silu = |x: f64| x / (1.0 + (-x).exp());
            let d_h = mlp.b1.cols;
            let mut hidden = vec![0.0; d_h];
            for j in 0..d_h {
                let mut s = mlp.b1.data[j];
                for (i, &v) in input.iter().enumerate() {
                    s += v * mlp.w1.data[i * d_h + j];
                }
                hidden[j] = silu(s);
            }
            let mut out = mlp.b2.data[0];
            for (i, &v) in hidden.iter().enumerate() {
                out += v * mlp.w2.data[i];
            }
            out
        };
        let input: Vec<f64> = pooled.iter().cloned().chain(emb.iter().cloned()).collect();
        let q1 = manual_mlp(&params.target1, &input);
        let q2 = manual_mlp(&params.target2, &input);
        let y_independent =
            tr.reward + config.gamma.powf(tr.epoch_duration) * (q1.min(q2) - params.alpha * logp);
        assert!(
            (y - y_independent).abs() < 1e-12,
            "trainer {} vs independent {}",
            y,
            y_independent
        );
    }

    #[test]
    fn moving_average_windows() {
        let vals = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(moving_average(&vals, 2), 3.5);
        assert_eq!(moving_average(&vals, 10), 2.5);
        assert_eq!(moving_average(&[], 5), 0.0);
    }
}
