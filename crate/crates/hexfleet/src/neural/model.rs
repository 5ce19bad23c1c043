//! Fixed architecture on top of the tape: two-layer GCN encoder,
//! Gumbel-softmax mode/target heads, squashed-Gaussian power head, twin
//! critics with Polyak targets, and the value network, plus Adam and
//! checkpoint IO.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, TensorData, TensorRef};
use crate::env::{Candidate, SystemState};
use crate::linalg::Mat;
use crate::projection::{FeasibleAction, Intention, VehicleIntention, VehicleTask};

pub const MODE_SERVE: usize = 0;
pub const MODE_REB: usize = 1;
pub const MODE_CHG: usize = 2;

const FARE_SCALE: f64 = 10.0;
const DIST_SCALE: f64 = 5.0;
const LOG_SIGMA_MIN: f64 = -5.0;
const LOG_SIGMA_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Two-layer perceptron with SiLU hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: TensorData,
    pub b1: TensorData,
    pub w2: TensorData,
    pub b2: TensorData,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Mlp {
            w1: xavier(rng, d_in, d_hidden),
            b1: TensorData::zeros(1, d_hidden),
            w2: xavier(rng, d_hidden, d_out),
            b2: TensorData::zeros(1, d_out),
        }
    }

}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TensorData {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    TensorData::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
}

/// Serialized architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetSizes {
    pub m: usize,
    pub feature_dim: usize,
    pub n_stations: usize,
    pub hidden: usize,
    pub scorer_hidden: usize,
}

impl NetSizes {
    pub fn ctx_dim(&self) -> usize {
        self.hidden + 1
    }
    pub fn serve_in(&self) -> usize {
        self.ctx_dim() + 2 * self.hidden + 2
    }
    pub fn reb_in(&self) -> usize {
        self.ctx_dim() + self.hidden + 1
    }
    pub fn chg_in(&self) -> usize {
        self.ctx_dim() + self.hidden + 2
    }
    pub fn action_dim(&self) -> usize {
        4 * self.m + self.n_stations
    }
}

/// All trainable state: GCN encoder, actor heads, twin critics plus Polyak
/// targets, value network, and the two temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub sizes: NetSizes,
    pub gcn_w0: TensorData,
    pub gcn_b0: TensorData,
    pub gcn_w1: TensorData,
    pub gcn_b1: TensorData,
    pub mode_head: Mlp,
    pub score_serve: Mlp,
    pub score_reb: Mlp,
    pub score_chg: Mlp,
    pub power_head: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub value: Mlp,
    /// Entropy temperature.
    pub alpha: f64,
    /// Gumbel-softmax temperature (annealed during training).
    pub tau_gumbel: f64,
}

impl ParameterSet {
    pub fn new(m: usize, feature_dim: usize, n_stations: usize, hidden: usize, seed: u64) -> Self {
        let sizes = NetSizes { m, feature_dim, n_stations, hidden, scorer_hidden: 32 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let critic_in = hidden + sizes.action_dim();
        let critic1 = Mlp::init(&mut rng, critic_in, hidden, 1);
        let critic2 = Mlp::init(&mut rng, critic_in, hidden, 1);
        ParameterSet {
            sizes,
            gcn_w0: xavier(&mut rng, feature_dim, hidden),
            gcn_b0: TensorData::zeros(1, hidden),
            gcn_w1: xavier(&mut rng, hidden, hidden),
            gcn_b1: TensorData::zeros(1, hidden),
            mode_head: Mlp::init(&mut rng, sizes.ctx_dim(), sizes.scorer_hidden, 3),
            score_serve: Mlp::init(&mut rng, sizes.serve_in(), sizes.scorer_hidden, 1),
            score_reb: Mlp::init(&mut rng, sizes.reb_in(), sizes.scorer_hidden, 1),
            score_chg: Mlp::init(&mut rng, sizes.chg_in(), sizes.scorer_hidden, 1),
            power_head: Mlp::init(&mut rng, sizes.chg_in(), sizes.scorer_hidden, 2),
            target1: critic1.clone(),
            target2: critic2.clone(),
            critic1,
            critic2,
            value: Mlp::init(&mut rng, hidden, hidden, 1),
            alpha: 0.05,
            tau_gumbel: 1.0,
        }
    }

    /// Zeroed clone, mostly for tests of the zero-map properties.
    pub fn zeroed(&self) -> Self {
        let mut p = self.clone();
        for (_, t) in p.named_tensors_mut() {
            for v in t.data.iter_mut() {
                *v = 0.0;
            }
        }
        p
    }

    pub fn named_tensors(&self) -> Vec<(String, &TensorData)> {
        let mut out: Vec<(String, &TensorData)> = vec![
            ("gcn_w0".into(), &self.gcn_w0),
            ("gcn_b0".into(), &self.gcn_b0),
            ("gcn_w1".into(), &self.gcn_w1),
            ("gcn_b1".into(), &self.gcn_b1),
        ];
        for (name, mlp) in [
            ("mode_head", &self.mode_head),
            ("score_serve", &self.score_serve),
            ("score_reb", &self.score_reb),
            ("score_chg", &self.score_chg),
            ("power_head", &self.power_head),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("target1", &self.target1),
            ("target2", &self.target2),
            ("value", &self.value),
        ] {
            out.push((format!("{name}_w1"), &mlp.w1));
            out.push((format!("{name}_b1"), &mlp.b1));
            out.push((format!("{name}_w2"), &mlp.w2));
            out.push((format!("{name}_b2"), &mlp.b2));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut TensorData)> {
        let mut out: Vec<(String, &mut TensorData)> = vec![
            ("gcn_w0".into(), &mut self.gcn_w0),
            ("gcn_b0".into(), &mut self.gcn_b0),
            ("gcn_w1".into(), &mut self.gcn_w1),
            ("gcn_b1".into(), &mut self.gcn_b1),
        ];
        for (name, mlp) in [
            ("mode_head", &mut self.mode_head),
            ("score_serve", &mut self.score_serve),
            ("score_reb", &mut self.score_reb),
            ("score_chg", &mut self.score_chg),
            ("power_head", &mut self.power_head),
            ("critic1", &mut self.critic1),
            ("critic2", &mut self.critic2),
            ("target1", &mut self.target1),
            ("target2", &mut self.target2),
            ("value", &mut self.value),
        ] {
            out.push((format!("{name}_w1"), &mut mlp.w1));
            out.push((format!("{name}_b1"), &mut mlp.b1));
            out.push((format!("{name}_w2"), &mut mlp.w2));
            out.push((format!("{name}_b2"), &mut mlp.b2));
        }
        out
    }

    /// Names of the actor parameter group (heads only; the shared encoder is
    /// trained by the critic loss).
    pub fn actor_group() -> Vec<&'static str> {
        vec![
            "mode_head_w1", "mode_head_b1", "mode_head_w2", "mode_head_b2",
            "score_serve_w1", "score_serve_b1", "score_serve_w2", "score_serve_b2",
            "score_reb_w1", "score_reb_b1", "score_reb_w2", "score_reb_b2",
            "score_chg_w1", "score_chg_b1", "score_chg_w2", "score_chg_b2",
            "power_head_w1", "power_head_b1", "power_head_w2", "power_head_b2",
        ]
    }

    pub fn critic_group() -> Vec<&'static str> {
        vec![
            "critic1_w1", "critic1_b1", "critic1_w2", "critic1_b2",
            "critic2_w1", "critic2_b1", "critic2_w2", "critic2_b2",
            "gcn_w0", "gcn_b0", "gcn_w1", "gcn_b1",
        ]
    }

    pub fn value_group() -> Vec<&'static str> {
        vec!["value_w1", "value_b1", "value_w2", "value_b2"]
    }
}

/// Gumbel-softmax temperature anneal: `max(0.3, 0.9995^step)`.
pub fn tau_schedule(step: u64) -> f64 {
    (0.9995f64.powf(step as f64)).max(0.3)
}

/// Leaf the parameters of one MLP onto a tape.
pub struct MlpNodes {
    pub w1: TensorRef,
    pub b1: TensorRef,
    pub w2: TensorRef,
    pub b2: TensorRef,
}

pub fn leaf_mlp(tape: &mut Tape, mlp: &Mlp) -> MlpNodes {
    MlpNodes {
        w1: tape.leaf(mlp.w1.clone()),
        b1: tape.leaf(mlp.b1.clone()),
        w2: tape.leaf(mlp.w2.clone()),
        b2: tape.leaf(mlp.b2.clone()),
    }
}

pub fn mlp_forward(tape: &mut Tape, nodes: &MlpNodes, input: TensorRef) -> TensorRef {
    let h = tape.matmul(input, nodes.w1);
    let h = tape.add_row(h, nodes.b1);
    let h = tape.silu(h);
    let o = tape.matmul(h, nodes.w2);
    tape.add_row(o, nodes.b2)
}

/// GCN parameter leaves.
pub struct GcnNodes {
    pub w0: TensorRef,
    pub b0: TensorRef,
    pub w1: TensorRef,
    pub b1: TensorRef,
}

pub fn leaf_gcn(tape: &mut Tape, params: &ParameterSet) -> GcnNodes {
    GcnNodes {
        w0: tape.leaf(params.gcn_w0.clone()),
        b0: tape.leaf(params.gcn_b0.clone()),
        w1: tape.leaf(params.gcn_w1.clone()),
        b1: tape.leaf(params.gcn_b1.clone()),
    }
}

/// Two SiLU graph-convolution layers: `E = silu(A silu(A Phi W0 + b0) W1 + b1)`.
pub fn gcn_forward(
    tape: &mut Tape,
    gcn: &GcnNodes,
    a_hat: TensorRef,
    phi: TensorRef,
) -> TensorRef {
    let ax = tape.matmul(a_hat, phi);
    let h = tape.matmul(ax, gcn.w0);
    let h = tape.add_row(h, gcn.b0);
    let h = tape.silu(h);
    let ah = tape.matmul(a_hat, h);
    let e = tape.matmul(ah, gcn.w1);
    let e = tape.add_row(e, gcn.b1);
    tape.silu(e)
}

pub fn mat_to_tensor(m: &Mat) -> TensorData {
    TensorData::from_vec(m.rows, m.cols, m.data.clone())
}

/// Parameter leaves for every actor head on one tape.
pub struct ActorNodes {
    pub mode: MlpNodes,
    pub serve: MlpNodes,
    pub reb: MlpNodes,
    pub chg: MlpNodes,
    pub power: MlpNodes,
}

pub fn leaf_actor(tape: &mut Tape, params: &ParameterSet) -> ActorNodes {
    ActorNodes {
        mode: leaf_mlp(tape, &params.mode_head),
        serve: leaf_mlp(tape, &params.score_serve),
        reb: leaf_mlp(tape, &params.score_reb),
        chg: leaf_mlp(tape, &params.score_chg),
        power: leaf_mlp(tape, &params.power_head),
    }
}

/// One vehicle's sampled heads.
pub struct SampledVehicle {
    /// Gumbel-softmax mode sample, `1 x 3`.
    pub mode_node: TensorRef,
    /// Within-mode Gumbel-softmax target samples for non-empty modes.
    pub target_nodes: [Option<TensorRef>; 3],
    /// Squashed power sample node (present when a charge candidate exists).
    pub power_node: Option<TensorRef>,
    pub selected_mode: usize,
    /// Index into the full candidate list; the idle slot when the selected
    /// mode has no candidates.
    pub selected_candidate: usize,
    /// Within-mode candidate counts `[serve, reb, chg]`.
    pub mode_counts: [usize; 3],
}

pub struct ActorSample {
    pub intention: Intention,
    pub log_prob: TensorRef,
    pub vehicles: Vec<SampledVehicle>,
}

fn gumbel_noise(rng: &mut ChaCha8Rng, n: usize) -> TensorData {
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0);
            -((-u.ln()).ln())
        })
        .collect();
    TensorData::from_vec(1, n, data)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Pre-noise head outputs for one vehicle.
struct VehicleHeads {
    mode_logits: TensorRef,
    /// Score row per non-empty mode, `1 x K_mode`.
    target_logits: [Option<TensorRef>; 3],
    /// Positions of each mode's candidates in the full list.
    pos_lists: [Vec<usize>; 3],
    idle_pos: usize,
    /// Charging context input and the station power limit, when present.
    chg_input: Option<TensorRef>,
    chg_p_max: f64,
}

fn vehicle_heads(
    tape: &mut Tape,
    nodes: &ActorNodes,
    embeddings: TensorRef,
    state: &SystemState,
    vi: usize,
    list: &[Candidate],
) -> VehicleHeads {
    let v = &state.vehicles[vi];
    let soc = tape.leaf(TensorData::from_vec(1, 1, vec![v.energy / v.e_max.max(1e-9)]));
    let e_row = tape.row(embeddings, v.hex);
    let ctx = tape.concat_cols(&[e_row, soc]);

    let mut rows: [Vec<TensorRef>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut pos_lists: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut chg_input = None;
    let mut chg_p_max = 0.0;
    let mut idle_pos = list.len().saturating_sub(1);
    for (c, cand) in list.iter().enumerate() {
        match cand {
            Candidate::Serve { pickup, dest, fare, dist_km, .. } => {
                let epu = tape.row(embeddings, *pickup);
                let edo = tape.row(embeddings, *dest);
                let extras = tape.leaf(TensorData::from_vec(
                    1,
                    2,
                    vec![fare / FARE_SCALE, dist_km / DIST_SCALE],
                ));
                rows[MODE_SERVE].push(tape.concat_cols(&[ctx, epu, edo, extras]));
                pos_lists[MODE_SERVE].push(c);
            }
            Candidate::Reposition { target, dist_km, .. } => {
                let eg = tape.row(embeddings, *target);
                let extras = tape.leaf(TensorData::from_vec(1, 1, vec![dist_km / DIST_SCALE]));
                rows[MODE_REB].push(tape.concat_cols(&[ctx, eg, extras]));
                pos_lists[MODE_REB].push(c);
            }
            Candidate::Charge { hex, price, station_idx, .. } => {
                let es = tape.row(embeddings, *hex);
                let pmax = state.stations[*station_idx].p_max_kw;
                chg_p_max = pmax;
                let extras = tape.leaf(TensorData::from_vec(
                    1,
                    2,
                    vec![*price, pmax / state.feeder_cap_kw.max(1e-9)],
                ));
                let input = tape.concat_cols(&[ctx, es, extras]);
                rows[MODE_CHG].push(input);
                pos_lists[MODE_CHG].push(c);
                chg_input = Some(input);
            }
            Candidate::Idle => idle_pos = c,
        }
    }

    let mode_logits = mlp_forward(tape, &nodes.mode, ctx);
    let mut target_logits: [Option<TensorRef>; 3] = [None, None, None];
    let mode_mlps = [&nodes.serve, &nodes.reb, &nodes.chg];
    for mode in 0..3 {
        if rows[mode].is_empty() {
            continue;
        }
        let stacked = tape.concat_rows(&rows[mode]);
        let scores = mlp_forward(tape, mode_mlps[mode], stacked);
        target_logits[mode] = Some(tape.reshape(scores, 1, rows[mode].len()));
    }
    VehicleHeads { mode_logits, target_logits, pos_lists, idle_pos, chg_input, chg_p_max }
}

/// Squashed-Gaussian log-density on the tape at pre-squash point `u`:
/// `log N(u; mu, sigma) - log dp/du`.
fn power_log_density_node(
    tape: &mut Tape,
    mu: TensorRef,
    log_sigma: TensorRef,
    u: TensorRef,
    p_max: f64,
) -> TensorRef {
    let neg_log_sigma = tape.scale(log_sigma, -1.0);
    let inv_sigma = tape.exp(neg_log_sigma);
    let diff = tape.sub(u, mu);
    let z = tape.mul(diff, inv_sigma);
    let z2 = tape.square(z);
    let quad = tape.scale(z2, -0.5);
    let th = tape.tanh(u);
    let th2 = tape.square(th);
    let neg_th2 = tape.scale(th2, -1.0);
    let one_minus = tape.add_scalar(neg_th2, 1.0);
    let dpdu = tape.scale(one_minus, p_max / 2.0);
    let safe = tape.add_scalar(dpdu, 1e-12);
    let log_dpdu = tape.log(safe);
    let neg_corr = tape.scale(log_dpdu, -1.0);
    let s = tape.add(quad, neg_log_sigma);
    let s = tape.add(s, neg_corr);
    tape.add_scalar(s, -0.5 * LN_2PI)
}

/// Categorical log-probability of entry `idx` under `softmax(logits)`.
fn log_softmax_entry(tape: &mut Tape, logits: TensorRef, idx: usize) -> TensorRef {
    let sm = tape.softmax_row(logits);
    let lg = tape.log(sm);
    tape.entry(lg, 0, idx)
}

/// Sample intentions for every idle vehicle.
///
/// Mode and target draws use the Gumbel-softmax reparameterization at the
/// current temperature; charging power uses a tanh-squashed Gaussian scaled
/// to the station limit. The combined target weights over the full candidate
/// list multiply mode and within-mode sample weights; mode mass on empty
/// modes flows to the stay-idle slot. The log-density sums the categorical
/// mode and target terms at the selected components plus (for the charge
/// mode) the power density with the tanh change-of-variables correction.
pub fn actor_sample(
    tape: &mut Tape,
    params: &ParameterSet,
    nodes: &ActorNodes,
    embeddings: TensorRef,
    state: &SystemState,
    candidates: &[(usize, Vec<Candidate>)],
    rng: &mut ChaCha8Rng,
) -> ActorSample {
    let tau = params.tau_gumbel.max(1e-3);
    let mut per_vehicle = Vec::with_capacity(candidates.len());
    let mut vehicles = Vec::with_capacity(candidates.len());
    let mut log_prob_total: Option<TensorRef> = None;

    for (vi, list) in candidates {
        let heads = vehicle_heads(tape, nodes, embeddings, state, *vi, list);

        // gumbel-softmax draws
        let g = tape.add_const(heads.mode_logits, gumbel_noise(rng, 3));
        let scaled = tape.scale(g, 1.0 / tau);
        let mode_w = tape.softmax_row(scaled);
        let mut target_nodes: [Option<TensorRef>; 3] = [None, None, None];
        for mode in 0..3 {
            if let Some(logits) = heads.target_logits[mode] {
                let k = heads.pos_lists[mode].len();
                let g = tape.add_const(logits, gumbel_noise(rng, k));
                let scaled = tape.scale(g, 1.0 / tau);
                target_nodes[mode] = Some(tape.softmax_row(scaled));
            }
        }

        // power head on the charging context
        let mut power_node = None;
        let mut power_value = 0.0;
        let mut power_density = None;
        if let Some(chg_input) = heads.chg_input {
            let out = mlp_forward(tape, &nodes.power, chg_input);
            let mu = tape.entry(out, 0, 0);
            let log_sigma_raw = tape.entry(out, 0, 1);
            let log_sigma = tape.clamp(log_sigma_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
            let sigma = tape.exp(log_sigma);
            let eps: f64 = {
                let u1: f64 = rng.random_range(1e-12..1.0);
                let u2: f64 = rng.random::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let eps_leaf = tape.leaf(TensorData::scalar(eps));
            let noise = tape.mul(sigma, eps_leaf);
            let u = tape.add(mu, noise);
            let th = tape.tanh(u);
            let shifted = tape.add_scalar(th, 1.0);
            let p_hat = tape.scale(shifted, heads.chg_p_max / 2.0);
            power_value = tape.scalar_value(p_hat);
            power_node = Some(p_hat);
            power_density = Some(power_log_density_node(tape, mu, log_sigma, u, heads.chg_p_max));
        }

        // combined target weights over the full candidate list
        let mode_vals = tape.value(mode_w).data.clone();
        let mut tw = vec![0.0; list.len()];
        for mode in 0..3 {
            match target_nodes[mode] {
                Some(tn) => {
                    let tvals = tape.value(tn).data.clone();
                    for (k, &c) in heads.pos_lists[mode].iter().enumerate() {
                        tw[c] = mode_vals[mode] * tvals[k];
                    }
                }
                None => tw[heads.idle_pos] += mode_vals[mode],
            }
        }
        let s: f64 = tw.iter().sum();
        if s > 0.0 {
            for w in tw.iter_mut() {
                *w /= s;
            }
        }

        let selected_mode = argmax(&mode_vals);
        let (selected_candidate, selected_within) = match target_nodes[selected_mode] {
            Some(tn) => {
                let k = argmax(&tape.value(tn).data);
                (heads.pos_lists[selected_mode][k], Some(k))
            }
            None => (heads.idle_pos, None),
        };

        // log-probability of the selections under the current heads
        let mut lp = log_softmax_entry(tape, heads.mode_logits, selected_mode);
        if let (Some(logits), Some(k)) = (heads.target_logits[selected_mode], selected_within) {
            let term = log_softmax_entry(tape, logits, k);
            lp = tape.add(lp, term);
        }
        if selected_mode == MODE_CHG && selected_within.is_some() {
            if let Some(pd) = power_density {
                lp = tape.add(lp, pd);
            }
        }
        log_prob_total = Some(match log_prob_total {
            Some(acc) => tape.add(acc, lp),
            None => lp,
        });

        per_vehicle.push(VehicleIntention {
            mode_weights: [mode_vals[0], mode_vals[1], mode_vals[2]],
            target_weights: tw,
            power_kw: power_value,
        });
        vehicles.push(SampledVehicle {
            mode_node: mode_w,
            target_nodes,
            power_node,
            selected_mode,
            selected_candidate,
            mode_counts: [
                heads.pos_lists[0].len(),
                heads.pos_lists[1].len(),
                heads.pos_lists[2].len(),
            ],
        });
    }

    let log_prob = log_prob_total.unwrap_or_else(|| tape.leaf(TensorData::scalar(0.0)));
    ActorSample { intention: Intention { per_vehicle }, log_prob, vehicles }
}

/// Log-probability of a previously stored intention under the current
/// parameters: categorical terms at the stored selections plus the power
/// density at the stored squashed power.
pub fn stored_intention_log_prob(
    tape: &mut Tape,
    nodes: &ActorNodes,
    embeddings: TensorRef,
    state: &SystemState,
    candidates: &[(usize, Vec<Candidate>)],
    intention: &Intention,
    selected: &[(usize, usize)],
) -> TensorRef {
    let mut total: Option<TensorRef> = None;
    for (slot, (vi, list)) in candidates.iter().enumerate() {
        let heads = vehicle_heads(tape, nodes, embeddings, state, *vi, list);
        let (sel_mode, sel_cand) = selected[slot];
        let mut lp = log_softmax_entry(tape, heads.mode_logits, sel_mode);
        if let Some(logits) = heads.target_logits[sel_mode] {
            let within = heads.pos_lists[sel_mode]
                .iter()
                .position(|&c| c == sel_cand)
                .unwrap_or(0);
            let term = log_softmax_entry(tape, logits, within);
            lp = tape.add(lp, term);
            if sel_mode == MODE_CHG {
                if let Some(chg_input) = heads.chg_input {
                    let out = mlp_forward(tape, &nodes.power, chg_input);
                    let mu = tape.entry(out, 0, 0);
                    let log_sigma_raw = tape.entry(out, 0, 1);
                    let log_sigma = tape.clamp(log_sigma_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
                    let frac = (2.0 * intention.per_vehicle[slot].power_kw / heads.chg_p_max
                        - 1.0)
                        .clamp(-1.0 + 1e-9, 1.0 - 1e-9);
                    let u = tape.leaf(TensorData::scalar(frac.atanh()));
                    let pd = power_log_density_node(tape, mu, log_sigma, u, heads.chg_p_max);
                    lp = tape.add(lp, pd);
                }
            }
        }
        total = Some(match total {
            Some(acc) => tape.add(acc, lp),
            None => lp,
        });
    }
    total.unwrap_or_else(|| tape.leaf(TensorData::scalar(0.0)))
}


/// Dense action embedding for the critics: per-hex counts of the chosen
/// modes (serve, reposition, charge, idle) normalized by fleet size, then
/// per-station power normalized by the feeder cap.
pub fn action_embedding(state: &SystemState, action: &FeasibleAction) -> Vec<f64> {
    let m = state.m();
    let n = state.n_vehicles().max(1) as f64;
    let mut emb = vec![0.0; 4 * m + state.stations.len()];
    for &(vi, ref task) in &action.tasks {
        let hex = state.vehicles[vi].hex;
        let ch = match task {
            VehicleTask::Serve { .. } => 0,
            VehicleTask::Reposition { .. } => 1,
            VehicleTask::Charge { .. } => 2,
            VehicleTask::Idle => 3,
        };
        emb[hex * 4 + ch] += 1.0 / n;
    }
    let cap = state.feeder_cap_kw.max(1e-9);
    for (si, p) in action.station_power_kw.iter().enumerate() {
        emb[4 * m + si] = p / cap;
    }
    emb
}

/// Critic head on pooled embedding plus action embedding.
pub fn critic_q(
    tape: &mut Tape,
    nodes: &MlpNodes,
    pooled: TensorRef,
    action_emb: TensorRef,
) -> TensorRef {
    let input = tape.concat_cols(&[pooled, action_emb]);
    let out = mlp_forward(tape, nodes, input);
    tape.entry(out, 0, 0)
}

/// Value head on the pooled state embedding.
pub fn value_v(tape: &mut Tape, nodes: &MlpNodes, pooled: TensorRef) -> TensorRef {
    let out = mlp_forward(tape, nodes, pooled);
    tape.entry(out, 0, 0)
}

/// Convenience: value of a feature matrix, optionally with the gradient with
/// respect to the features (the scenario-gradient path).
pub fn state_value_and_grad(
    params: &ParameterSet,
    a_hat: &Mat,
    phi: &Mat,
    want_grad: bool,
) -> (f64, Option<Mat>) {
    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(a_hat));
    let x = tape.leaf(mat_to_tensor(phi));
    let gcn = leaf_gcn(&mut tape, params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let pooled = tape.mean_rows(e);
    let vnodes = leaf_mlp(&mut tape, &params.value);
    let v = value_v(&mut tape, &vnodes, pooled);
    let val = tape.scalar_value(v);
    if !want_grad {
        return (val, None);
    }
    if tape.backward(v).is_err() {
        return (val, None);
    }
    let g = tape.grad(x).map(|g| Mat { rows: phi.rows, cols: phi.cols, data: g.to_vec() });
    (val, g)
}

/// Polyak update: `target <- (1 - tau) target + tau online`.
pub fn polyak(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in [
        (&mut target.w1, &online.w1),
        (&mut target.b1, &online.b1),
        (&mut target.w2, &online.w2),
        (&mut target.b2, &online.b2),
    ] {
        for (tv, ov) in t.data.iter_mut().zip(&o.data) {
            *tv += tau * (ov - *tv);
        }
    }
}

/// Per-tensor Adam with bias correction.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    /// Apply one update to the named tensors present in `grads`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &HashMap<String, Vec<f64>>) {
        if self.lr == 0.0 || grads.is_empty() {
            return;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in params.named_tensors_mut() {
            let Some(g) = grads.get(&name) else {
                continue;
            };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                tensor.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    sizes: NetSizes,
    alpha: f64,
    tau_gumbel: f64,
    step: u64,
    tensors: Vec<(String, usize, usize)>,
}

/// Write a checkpoint: `manifest.json` plus one little-endian f64 binary per
/// tensor.
pub fn save_checkpoint(params: &ParameterSet, dir: &Path, step: u64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let tensors = params.named_tensors();
    let manifest = CheckpointManifest {
        sizes: params.sizes,
        alpha: params.alpha,
        tau_gumbel: params.tau_gumbel,
        step,
        tensors: tensors.iter().map(|(n, t)| (n.clone(), t.rows, t.cols)).collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    for (name, t) in tensors {
        let mut f = std::fs::File::create(dir.join(format!("{name}.bin")))?;
        for &x in &t.data {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> std::io::Result<(ParameterSet, u64)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let s = manifest.sizes;
    let mut params = ParameterSet::new(s.m, s.feature_dim, s.n_stations, s.hidden, 0);
    params.alpha = manifest.alpha;
    params.tau_gumbel = manifest.tau_gumbel;
    for (name, tensor) in params.named_tensors_mut() {
        let Some((_, rows, cols)) = manifest.tensors.iter().find(|(n, _, _)| *n == name) else {
            continue;
        };
        let mut f = std::fs::File::open(dir.join(format!("{name}.bin")))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        assert_eq!(bytes.len(), rows * cols * 8, "checkpoint size mismatch for {name}");
        *tensor = TensorData::from_vec(
            *rows,
            *cols,
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        );
    }
    Ok((params, manifest.step))
}
