use super::checks;
use super::*;
use crate::env::{candidate_set, featurize, initial_state, EnvParams, FleetConfig};
use crate::hexgrid::{build_grid, graph_matrices};
use crate::linalg::Mat;
use crate::scenario::{synth_scenario, Order, OrderStatus, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn tiny_env(seed: u64) -> (crate::hexgrid::HexGrid, crate::env::SystemState, EnvParams, crate::scenario::ScenarioField) {
    let grid = build_grid(3, 3, 0.8, 1, seed, None).unwrap();
    let params = EnvParams::default();
    let ds = synth_scenario(
        &grid,
        &SynthConfig { horizon: 2, hotspots: 1, peak_rate: 3.0, seed, dt_min: 5.0 },
    );
    let fleet = FleetConfig { n_vehicles: 3, ..FleetConfig::default() };
    let mut state = initial_state(&grid, &fleet, &params, &ds.fields[0], seed);
    state.vehicles[0].hex = grid.station_hexes()[0];
    state.open_orders = vec![
        Order { id: 0, origin: 1, dest: 7, arrival_step: 0, wait_steps: 0, status: OrderStatus::Open },
        Order { id: 1, origin: 4, dest: 2, arrival_step: 0, wait_steps: 0, status: OrderStatus::Open },
    ];
    (grid, state, params, ds.fields[0].clone())
}

#[test]
fn gcn_zero_params_give_zero_embeddings() {
    let (grid, state, ..) = tiny_env(0);
    let gm = graph_matrices(&grid);
    let params = ParameterSet::new(grid.len(), crate::env::FEATURE_DIM, 1, 16, 0).zeroed();
    let phi = featurize(&state);
    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, &params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    assert!(tape.value(e).data.iter().all(|&v| v == 0.0));
}

#[test]
fn single_hex_gcn_reduces_to_mlp() {
    let grid = build_grid(1, 1, 0.8, 0, 0, None).unwrap();
    let gm = graph_matrices(&grid);
    assert_eq!(gm.a_hat.data, vec![1.0]);
    let params = ParameterSet::new(1, 3, 0, 8, 3);
    let phi = Mat { rows: 1, cols: 3, data: vec![0.3, -0.7, 1.2] };
    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, &params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    // manual two-layer MLP on the single row
    let silu = |x: f64| x / (1.0 + (-x).exp());
    let h: Vec<f64> = (0..8)
        .map(|j| {
            let mut s = params.gcn_b0.data[j];
            for k in 0..3 {
                s += phi.data[k] * params.gcn_w0.data[k * 8 + j];
            }
            silu(s)
        })
        .collect();
    let out: Vec<f64> = (0..8)
        .map(|j| {
            let mut s = params.gcn_b1.data[j];
            for k in 0..8 {
                s += h[k] * params.gcn_w1.data[k * 8 + j];
            }
            silu(s)
        })
        .collect();
    for (a, b) in tape.value(e).data.iter().zip(&out) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gcn_is_permutation_equivariant() {
    let grid = build_grid(3, 4, 0.8, 0, 0, None).unwrap();
    let m = grid.len();
    let gm = graph_matrices(&grid);
    let params = ParameterSet::new(m, 5, 0, 12, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phi = Mat { rows: m, cols: 5, data: (0..m * 5).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let run = |a_hat: &Mat, phi: &Mat| -> Vec<f64> {
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(a_hat));
        let x = tape.leaf(mat_to_tensor(phi));
        let gcn = leaf_gcn(&mut tape, &params);
        let e = gcn_forward(&mut tape, &gcn, a, x);
        tape.value(e).data.clone()
    };
    let base = run(&gm.a_hat, &phi);

    // random permutation
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut a_perm = Mat::zeros(m, m);
    let mut phi_perm = Mat::zeros(m, 5);
    for i in 0..m {
        for j in 0..m {
            a_perm[(i, j)] = gm.a_hat[(perm[i], perm[j])];
        }
        for c in 0..5 {
            phi_perm[(i, c)] = phi[(perm[i], c)];
        }
    }
    let permuted = run(&a_perm, &phi_perm);
    let h = params.sizes.hidden;
    for i in 0..m {
        for c in 0..h {
            assert!((permuted[i * h + c] - base[perm[i] * h + c]).abs() < 1e-10);
        }
    }
}

/// Full composite loss over a small net: value of the state plus a critic
/// score plus the actor log-probability. Deterministic per seed.
fn composite_loss(
    params: &ParameterSet,
    seed: u64,
) -> (f64, Option<HashMap<String, Vec<f64>>>, Option<Vec<f64>>) {
    let (grid, state, env_params, field) = tiny_env(3);
    let gm = graph_matrices(&grid);
    let phi = featurize(&state);
    let candidates: Vec<(usize, Vec<Candidate>)> = state
        .vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_idle())
        .map(|(i, _)| (i, candidate_set(&state, i, &grid, &field, &env_params)))
        .collect();
    use crate::env::Candidate;

    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let pooled = tape.mean_rows(e);
    let vnodes = leaf_mlp(&mut tape, &params.value);
    let v = crate::neural::value_v(&mut tape, &vnodes, pooled);

    let emb_len = params.sizes.action_dim();
    let emb_data: Vec<f64> = (0..emb_len).map(|i| ((i * 7 % 5) as f64) / 5.0).collect();
    let emb = tape.leaf(TensorData::from_vec(1, emb_len, emb_data));
    let c1nodes = leaf_mlp(&mut tape, &params.critic1);
    let q1 = critic_q(&mut tape, &c1nodes, pooled, emb);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anodes = leaf_actor(&mut tape, params);
    let sample = actor_sample(&mut tape, params, &anodes, e, &state, &candidates, &mut rng);

    let s1 = tape.add(v, q1);
    let loss = tape.add(s1, sample.log_prob);
    let value = tape.scalar_value(loss);
    if tape.backward(loss).is_err() {
        return (value, None, None);
    }
    let mut grads = HashMap::new();
    // leaves are pushed in a deterministic order; recover by rebuilding the
    // same graph bindings
    let named: Vec<(String, TensorRef)> = vec![
        ("gcn_w0".into(), gcn.w0),
        ("gcn_b0".into(), gcn.b0),
        ("gcn_w1".into(), gcn.w1),
        ("gcn_b1".into(), gcn.b1),
    ];
    for (name, node) in named {
        if let Some(g) = tape.grad(node) {
            grads.insert(name, g.to_vec());
        }
    }
    let input_grad = tape.grad(x).map(|g| g.to_vec());
    (value, Some(grads), input_grad)
}

#[test]
fn finite_difference_gcn_and_input_gradient() {
    let mut params = ParameterSet::new(9, crate::env::FEATURE_DIM, 1, 8, 11);
    let seed = 42;
    let (_, grads, input_grad) = composite_loss(&params, seed);
    let grads = grads.unwrap();
    let h = 1e-5;
    for name in ["gcn_w0", "gcn_b0", "gcn_w1", "gcn_b1"] {
        let g = grads.get(name).cloned().unwrap_or_default();
        let len = params.named_tensors().iter().find(|(n, _)| n == name).unwrap().1.len();
        // probe a spread of coordinates in each tensor
        let probes: Vec<usize> = (0..len).step_by((len / 6).max(1)).collect();
        for &i in &probes {
            let orig = {
                let mut t = 0.0;
                for (n, tensor) in params.named_tensors_mut() {
                    if n == name {
                        t = tensor.data[i];
                        tensor.data[i] += h;
                    }
                }
                t
            };
            let (fp, _, _) = composite_loss(&params, seed);
            for (n, tensor) in params.named_tensors_mut() {
                if n == name {
                    tensor.data[i] = orig - h;
                }
            }
            let (fm, _, _) = composite_loss(&params, seed);
            for (n, tensor) in params.named_tensors_mut() {
                if n == name {
                    tensor.data[i] = orig;
                }
            }
            let fd = (fp - fm) / (2.0 * h);
            let ad = g[i];
            let denom = fd.abs().max(ad.abs()).max(1e-6);
            assert!(
                (fd - ad).abs() / denom < 1e-4,
                "{}[{}]: fd {} ad {}",
                name,
                i,
                fd,
                ad
            );
        }
    }
    // scenario-input gradient exists and is finite
    let ig = input_grad.unwrap();
    assert!(ig.iter().all(|v| v.is_finite()));
}

#[test]
fn actor_sample_weights_are_simplex() {
    let (grid, state, env_params, field) = tiny_env(1);
    let gm = graph_matrices(&grid);
    let params = ParameterSet::new(grid.len(), crate::env::FEATURE_DIM, 1, 16, 2);
    let phi = featurize(&state);
    let candidates: Vec<_> = state
        .vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_idle())
        .map(|(i, _)| (i, candidate_set(&state, i, &grid, &field, &env_params)))
        .collect();
    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, &params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let anodes = leaf_actor(&mut tape, &params);
    let sample = actor_sample(&mut tape, &params, &anodes, e, &state, &candidates, &mut rng);
    for (vi, intent) in sample.intention.per_vehicle.iter().enumerate() {
        let ms: f64 = intent.mode_weights.iter().sum();
        assert!((ms - 1.0).abs() < 1e-9, "mode weights sum {}", ms);
        assert!(intent.mode_weights.iter().all(|&w| w >= 0.0));
        let ts: f64 = intent.target_weights.iter().sum();
        assert!((ts - 1.0).abs() < 1e-9, "target weights sum {} for vehicle {}", ts, vi);
        assert!(intent.target_weights.iter().all(|&w| w >= 0.0));
    }
    assert!(tape.scalar_value(sample.log_prob).is_finite());
}

#[test]
fn actor_sample_deterministic_per_seed() {
    let (grid, state, env_params, field) = tiny_env(4);
    let gm = graph_matrices(&grid);
    let params = ParameterSet::new(grid.len(), crate::env::FEATURE_DIM, 1, 16, 2);
    let phi = featurize(&state);
    let candidates: Vec<_> = state
        .vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_idle())
        .map(|(i, _)| (i, candidate_set(&state, i, &grid, &field, &env_params)))
        .collect();
    let run = || {
        let mut tape = Tape::new();
        let a = tape.leaf(mat_to_tensor(&gm.a_hat));
        let x = tape.leaf(mat_to_tensor(&phi));
        let gcn = leaf_gcn(&mut tape, &params);
        let e = gcn_forward(&mut tape, &gcn, a, x);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let anodes = leaf_actor(&mut tape, &params);
        actor_sample(&mut tape, &params, &anodes, e, &state, &candidates, &mut rng).intention
    };
    assert_eq!(run(), run());
}

#[test]
fn squash_limits() {
    let p_max = 30.0;
    let squash = |u: f64| (p_max / 2.0) * (1.0 + u.tanh());
    assert!((squash(0.0) - p_max / 2.0).abs() < 1e-12);
    assert!((squash(50.0) - p_max).abs() < 1e-9);
    assert!(squash(-50.0).abs() < 1e-9);
}

#[test]
fn power_density_integrates_to_one() {
    for (mu, sigma) in [(0.0, 1.0), (0.5, 0.6), (-0.8, 1.5)] {
        let integral = checks::power_density_integral(mu, sigma, 30.0, 40_000);
        assert!((integral - 1.0).abs() <= 1e-3, "mu {} sigma {}: {}", mu, sigma, integral);
    }
}

#[test]
fn gumbel_argmax_matches_softmax_law() {
    let logits = vec![0.5, -0.2, 1.1, 0.0, -1.0];
    let counts = checks::gumbel_argmax_counts(&logits, 0.7, 100_000, 99);
    let probs = checks::softmax(&logits);
    let stat = checks::chi2_statistic(&counts, &probs);
    let crit = checks::chi2_quantile_99(logits.len() - 1);
    assert!(stat < crit, "chi2 {} >= {}", stat, crit);
}

#[test]
fn zero_heads_give_zero_outputs() {
    let params = ParameterSet::new(4, 6, 1, 8, 0).zeroed();
    let mut tape = Tape::new();
    let pooled = tape.leaf(TensorData::from_vec(1, 8, vec![0.3; 8]));
    let emb = tape.leaf(TensorData::from_vec(1, params.sizes.action_dim(), vec![0.1; params.sizes.action_dim()]));
    let c1 = leaf_mlp(&mut tape, &params.critic1);
    let c2 = leaf_mlp(&mut tape, &params.critic2);
    let vn = leaf_mlp(&mut tape, &params.value);
    let q1 = critic_q(&mut tape, &c1, pooled, emb);
    let q2 = critic_q(&mut tape, &c2, pooled, emb);
    let v = crate::neural::value_v(&mut tape, &vn, pooled);
    assert_eq!(tape.scalar_value(q1), 0.0);
    assert_eq!(tape.scalar_value(q2), 0.0);
    assert_eq!(tape.scalar_value(v), 0.0);
}

#[test]
fn identical_critics_agree_exactly() {
    let mut params = ParameterSet::new(4, 6, 1, 8, 5);
    params.critic2 = params.critic1.clone();
    let mut tape = Tape::new();
    let pooled = tape.leaf(TensorData::from_vec(1, 8, (0..8).map(|i| i as f64 * 0.1).collect()));
    let emb_len = params.sizes.action_dim();
    let emb = tape.leaf(TensorData::from_vec(1, emb_len, (0..emb_len).map(|i| (i % 3) as f64 * 0.2).collect()));
    let c1 = leaf_mlp(&mut tape, &params.critic1);
    let c2 = leaf_mlp(&mut tape, &params.critic2);
    let q1 = critic_q(&mut tape, &c1, pooled, emb);
    let q2 = critic_q(&mut tape, &c2, pooled, emb);
    assert_eq!(tape.scalar_value(q1), tape.scalar_value(q2));
}

#[test]
fn polyak_extremes_and_geometric_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let make = |rng: &mut ChaCha8Rng| Mlp {
        w1: TensorData::from_vec(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()),
        b1: TensorData::from_vec(1, 2, vec![0.1, -0.2]),
        w2: TensorData::from_vec(2, 1, vec![0.5, -0.5]),
        b2: TensorData::from_vec(1, 1, vec![0.0]),
    };
    let online = make(&mut rng);
    let mut target = make(&mut rng);

    let snapshot = target.clone();
    polyak(&mut target, &online, 0.0);
    assert_eq!(target, snapshot);

    polyak(&mut target, &online, 1.0);
    assert_eq!(target, online);

    // geometric: after k steps at rate tau, gap scales by (1 - tau)^k
    let mut target = make(&mut rng);
    let gap0 = target.w1.data[0] - online.w1.data[0];
    let tau = 0.25;
    for _ in 0..10 {
        polyak(&mut target, &online, tau);
    }
    let gap = target.w1.data[0] - online.w1.data[0];
    assert!((gap - gap0 * (1.0 - tau).powi(10)).abs() < 1e-12);
}

#[test]
fn adam_zero_lr_freezes_parameters() {
    let mut params = ParameterSet::new(4, 6, 1, 8, 5);
    let before = params.clone();
    let mut adam = Adam::new(0.0);
    let mut grads = HashMap::new();
    grads.insert("gcn_w0".to_string(), vec![1.0; params.gcn_w0.len()]);
    adam.step(&mut params, &grads);
    assert_eq!(params, before);
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = ParameterSet::new(5, 7, 2, 8, 77);
    params.alpha = 0.03;
    params.tau_gumbel = 0.44;
    save_checkpoint(&params, dir.path(), 123).unwrap();
    let (back, step) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(step, 123);
    assert_eq!(back, params);
}

#[test]
fn tau_schedule_floors() {
    assert!((tau_schedule(0) - 1.0).abs() < 1e-12);
    assert!(tau_schedule(10_000) >= 0.3);
    assert_eq!(tau_schedule(1_000_000), 0.3);
}

#[test]
fn tape_power_log_density_matches_closed_form() {
    // the graph the actor builds for the power term must agree with the
    // scalar formula used by the quadrature check
    let (mu, sigma, p_max, eps) = (0.4, 0.9, 30.0, -0.3);
    let u = mu + sigma * eps;
    let want = checks::squashed_log_density(u, mu, sigma, p_max);

    let mut tape = Tape::new();
    let mu_n = tape.leaf(TensorData::scalar(mu));
    let log_sigma_n = tape.leaf(TensorData::scalar(sigma.ln()));
    let sigma_n = tape.exp(log_sigma_n);
    let eps_n = tape.leaf(TensorData::scalar(eps));
    let noise = tape.mul(sigma_n, eps_n);
    let u_n = tape.add(mu_n, noise);
    let th = tape.tanh(u_n);
    let neg_log_sigma = tape.scale(log_sigma_n, -1.0);
    let inv_sigma = tape.exp(neg_log_sigma);
    let diff = tape.sub(u_n, mu_n);
    let z = tape.mul(diff, inv_sigma);
    let z2 = tape.square(z);
    let quad = tape.scale(z2, -0.5);
    let th2 = tape.square(th);
    let neg = tape.scale(th2, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let dpdu = tape.scale(one_minus, p_max / 2.0);
    let safe = tape.add_scalar(dpdu, 1e-12);
    let logd = tape.log(safe);
    let negc = tape.scale(logd, -1.0);
    let s1 = tape.add(quad, neg_log_sigma);
    let s2 = tape.add(s1, negc);
    let lp = tape.add_scalar(s2, -0.5 * 1.837_877_066_409_345_3);
    assert!((tape.scalar_value(lp) - want).abs() < 1e-12);
}
