//! Sampling-law checks: Gumbel-argmax frequency against the softmax law and
//! the squashed-Gaussian density normalization. Shared by unit tests, the
//! acceptance suite, and the CLI check runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Draw `n` Gumbel-softmax samples at temperature `tau` and count argmaxes.
pub fn gumbel_argmax_counts(logits: &[f64], tau: f64, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = logits.len();
    let mut counts = vec![0u64; k];
    for _ in 0..n {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (j, &l) in logits.iter().enumerate() {
            let u: f64 = rng.random_range(1e-12..1.0);
            let g = -((-u.ln()).ln());
            // argmax of softmax((l + g)/tau) equals argmax of (l + g)
            let v = (l + g) / tau;
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        counts[best] += 1;
    }
    counts
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Pearson chi-squared statistic of observed counts against expected
/// probabilities.
pub fn chi2_statistic(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// 0.99 quantile of the chi-squared distribution with `dof` degrees of
/// freedom (Wilson-Hilferty approximation, adequate at these sizes).
pub fn chi2_quantile_99(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 2.326_347_874_040_841; // standard normal 0.99 quantile
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}

/// Log-density of the tanh-squashed Gaussian power sample, expressed at the
/// pre-squash point `u`: `log N(u; mu, sigma) - log(dp/du)` with
/// `p = (p_max/2)(1 + tanh u)`.
pub fn squashed_log_density(u: f64, mu: f64, sigma: f64, p_max: f64) -> f64 {
    let z = (u - mu) / sigma;
    let gauss = -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let dpdu = (p_max / 2.0) * (1.0 - u.tanh().powi(2)) + 1e-12;
    gauss - dpdu.ln()
}

/// Trapezoid integral of the squashed density over `p in (0, p_max)`.
///
/// The grid is graded (uniform in the pre-squash coordinate) so the
/// integrable density spikes at the interval ends are resolved.
pub fn power_density_integral(mu: f64, sigma: f64, p_max: f64, grid: usize) -> f64 {
    let lo = mu - 10.0 * sigma;
    let hi = mu + 10.0 * sigma;
    let mut total = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=grid {
        let u = lo + (hi - lo) * i as f64 / grid as f64;
        let p = (p_max / 2.0) * (1.0 + u.tanh());
        let f = squashed_log_density(u, mu, sigma, p_max).exp();
        if let Some((p0, f0)) = prev {
            total += 0.5 * (f + f0) * (p - p0);
        }
        prev = Some((p, f));
    }
    total
}

use crate::env::{
    build_candidates, featurize, initial_state, EnvParams, FleetConfig,
};
use crate::hexgrid::{build_grid, graph_matrices};
use crate::scenario::{Order, OrderStatus, ScenarioField};

/// Result of the full-pipeline finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub tensors_checked: usize,
    pub coords_checked: usize,
    pub worst_param_rel_err: f64,
    pub pass: bool,
}

fn grad_fixture(
    seed: u64,
) -> (crate::hexgrid::HexGrid, crate::env::SystemState, EnvParams, ScenarioField) {
    let grid = build_grid(3, 3, 0.8, 1, seed, None).unwrap();
    let params = EnvParams::default();
    let field = ScenarioField::zeros(grid.len());
    let fleet = FleetConfig { n_vehicles: 3, ..FleetConfig::default() };
    let mut state = initial_state(&grid, &fleet, &params, &field, seed);
    state.vehicles[0].hex = grid.station_hexes()[0];
    state.open_orders = vec![
        Order { id: 0, origin: 1, dest: 7, arrival_step: 0, wait_steps: 0, status: OrderStatus::Open },
        Order { id: 1, origin: 4, dest: 2, arrival_step: 0, wait_steps: 0, status: OrderStatus::Open },
    ];
    (grid, state, params, field)
}

/// Composite loss touching every trained head: state value, both critics on
/// a fixed action embedding, and the actor log-probability (which exercises
/// the encoder, mode, target, and power heads, including the tanh
/// correction).
fn composite_loss(
    params: &super::ParameterSet,
    fixture: &(crate::hexgrid::HexGrid, crate::env::SystemState, EnvParams, ScenarioField),
    sample_seed: u64,
) -> f64 {
    use super::{
        actor_sample, critic_q, gcn_forward, leaf_actor, leaf_gcn, leaf_mlp, mat_to_tensor,
        value_v, Tape, TensorData,
    };
    use rand::SeedableRng;
    let (grid, state, env_params, field) = fixture;
    let gm = graph_matrices(grid);
    let phi = featurize(state);
    let candidates = build_candidates(state, grid, field, env_params);

    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let pooled = tape.mean_rows(e);
    let vh = leaf_mlp(&mut tape, &params.value);
    let v = value_v(&mut tape, &vh, pooled);
    let emb_len = params.sizes.action_dim();
    let emb_data: Vec<f64> = (0..emb_len).map(|i| ((i * 7 % 5) as f64) / 5.0).collect();
    let emb = tape.leaf(TensorData::from_vec(1, emb_len, emb_data));
    let c1 = leaf_mlp(&mut tape, &params.critic1);
    let c2 = leaf_mlp(&mut tape, &params.critic2);
    let q1 = critic_q(&mut tape, &c1, pooled, emb);
    let q2 = critic_q(&mut tape, &c2, pooled, emb);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sample_seed);
    let anodes = leaf_actor(&mut tape, params);
    let sample = actor_sample(&mut tape, params, &anodes, e, state, &candidates, &mut rng);
    let s1 = tape.add(v, q1);
    let s2 = tape.add(s1, q2);
    let loss = tape.add(s2, sample.log_prob);
    tape.scalar_value(loss)
}

/// Central finite differences against reverse-mode gradients over every
/// trained parameter tensor (targets are Polyak copies, never trained).
pub fn full_gradient_check(seed: u64, probes_per_tensor: usize, rel_tol: f64) -> GradientCheck {
    use super::{
        actor_sample, critic_q, gcn_forward, leaf_actor, leaf_gcn, leaf_mlp, mat_to_tensor,
        value_v, ParameterSet, Tape, TensorData,
    };
    use rand::SeedableRng;
    use std::collections::HashMap;

    let fixture = grad_fixture(3);
    let mut params =
        ParameterSet::new(fixture.0.len(), crate::env::FEATURE_DIM, 1, 8, seed);
    let sample_seed = seed.wrapping_mul(0x9E37_79B9).wrapping_add(17);

    // reverse-mode gradients for all trained leaves
    let grads: HashMap<String, Vec<f64>> = {
        let (grid, state, env_params, field) = &fixture;
        let gm = graph_matrices(grid);
        let phi = featurize(state);
        let candidates = build_candidates(state, grid, field, env_params);
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(&gm.a_hat));
        let x = tape.leaf(mat_to_tensor(&phi));
        let gcn = leaf_gcn(&mut tape, &params);
        let e = gcn_forward(&mut tape, &gcn, a, x);
        let pooled = tape.mean_rows(e);
        let vh = leaf_mlp(&mut tape, &params.value);
        let v = value_v(&mut tape, &vh, pooled);
        let emb_len = params.sizes.action_dim();
        let emb_data: Vec<f64> = (0..emb_len).map(|i| ((i * 7 % 5) as f64) / 5.0).collect();
        let emb = tape.leaf(TensorData::from_vec(1, emb_len, emb_data));
        let c1 = leaf_mlp(&mut tape, &params.critic1);
        let c2 = leaf_mlp(&mut tape, &params.critic2);
        let q1 = critic_q(&mut tape, &c1, pooled, emb);
        let q2 = critic_q(&mut tape, &c2, pooled, emb);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sample_seed);
        let anodes = leaf_actor(&mut tape, &params);
        let sample = actor_sample(&mut tape, &params, &anodes, e, state, &candidates, &mut rng);
        let s1 = tape.add(v, q1);
        let s2 = tape.add(s1, q2);
        let loss = tape.add(s2, sample.log_prob);
        tape.backward(loss).expect("finite loss");
        let mut out = HashMap::new();
        let mut record = |name: &str, node: super::TensorRef| {
            out.insert(name.to_string(), tape.grad(node).map(|g| g.to_vec()).unwrap_or_default());
        };
        record("gcn_w0", gcn.w0);
        record("gcn_b0", gcn.b0);
        record("gcn_w1", gcn.w1);
        record("gcn_b1", gcn.b1);
        record("value_w1", vh.w1);
        record("value_b1", vh.b1);
        record("value_w2", vh.w2);
        record("value_b2", vh.b2);
        for (prefix, nodes) in [
            ("critic1", &c1),
            ("critic2", &c2),
            ("mode_head", &anodes.mode),
            ("score_serve", &anodes.serve),
            ("score_reb", &anodes.reb),
            ("score_chg", &anodes.chg),
            ("power_head", &anodes.power),
        ] {
            record(&format!("{prefix}_w1"), nodes.w1);
            record(&format!("{prefix}_b1"), nodes.b1);
            record(&format!("{prefix}_w2"), nodes.w2);
            record(&format!("{prefix}_b2"), nodes.b2);
        }
        out
    };

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut coords = 0usize;
    let names: Vec<String> = grads.keys().cloned().collect();
    for name in &names {
        let g = &grads[name];
        if g.is_empty() {
            continue;
        }
        let len = g.len();
        let stride = (len / probes_per_tensor).max(1);
        for i in (0..len).step_by(stride) {
            let orig = {
                let mut val = 0.0;
                for (n, t) in params.named_tensors_mut() {
                    if &n == name {
                        val = t.data[i];
                        t.data[i] += h;
                    }
                }
                val
            };
            let fp = composite_loss(&params, &fixture, sample_seed);
            for (n, t) in params.named_tensors_mut() {
                if &n == name {
                    t.data[i] = orig - h;
                }
            }
            let fm = composite_loss(&params, &fixture, sample_seed);
            for (n, t) in params.named_tensors_mut() {
                if &n == name {
                    t.data[i] = orig;
                }
            }
            let fd = (fp - fm) / (2.0 * h);
            let ad = g[i];
            let denom = fd.abs().max(ad.abs()).max(1e-6);
            worst = worst.max((fd - ad).abs() / denom);
            coords += 1;
        }
    }
    GradientCheck {
        tensors_checked: names.len(),
        coords_checked: coords,
        worst_param_rel_err: worst,
        pass: worst <= rel_tol,
    }
}
