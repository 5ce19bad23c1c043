//! Executable numerical checks of the stack's three structural guarantees:
//! contraction of the robust soft backup operator, the Kantorovich-
//! Rubinstein Lipschitz lower bound over Wasserstein balls, and no-regret
//! tracking of the risk budget by the primal-dual update. Each check builds
//! its own enumerable micro problem and reports a pass flag with the
//! measured margins; the acceptance suite and the CLI both run them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Mat;
use crate::wdro::{DualState, GroundMetric};

/// One scenario branch in the micro model: duration, successor, and the
/// transport distance from the empirical sample.
#[derive(Debug, Clone, Copy)]
pub struct MicroScenario {
    pub delta: u32,
    pub successor: usize,
    pub dist: f64,
}

/// Enumerable micro decision process for the contraction check.
#[derive(Debug, Clone)]
pub struct MicroMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Policy, one simplex row per state.
    pub pi: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
    pub scenarios: Vec<Vec<Vec<MicroScenario>>>,
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl MicroMdp {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_states = rng.random_range(3..=20);
        let n_actions = rng.random_range(2..=4);
        let pi = (0..n_states)
            .map(|_| {
                let mut row: Vec<f64> = (0..n_actions).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = row.iter().sum();
                for w in row.iter_mut() {
                    *w /= s;
                }
                row
            })
            .collect();
        let reward =
            (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let scenarios = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| {
                        (0..rng.random_range(1..=4))
                            .map(|_| MicroScenario {
                                delta: rng.random_range(1..=3),
                                successor: rng.random_range(0..n_states),
                                dist: rng.random_range(0.0..2.0),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MicroMdp {
            n_states,
            n_actions,
            pi,
            reward,
            scenarios,
            gamma: rng.random_range(0.8..0.999),
            alpha: rng.random_range(0.0..0.5),
            lambda: rng.random_range(0.0..1.0),
        }
    }

    /// The robust soft backup applied exactly by enumeration:
    /// `(T V)(s) = E_a[ r - alpha log pi + sup_xi ( gamma^Delta V(s') - lambda d ) ]`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_states);
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        let sup = self.scenarios[s][a]
                            .iter()
                            .map(|sc| {
                                self.gamma.powi(sc.delta as i32) * v[sc.successor]
                                    - self.lambda * sc.dist
                            })
                            .fold(f64::NEG_INFINITY, f64::max);
                        self.pi[s][a] * (self.reward[s][a] - self.alpha * self.pi[s][a].ln() + sup)
                    })
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ContractionCheck {
    pub trials: usize,
    /// Worst observed `||TV1 - TV2||_inf - gamma ||V1 - V2||_inf`.
    pub worst_excess: f64,
    pub pass: bool,
}

/// Contraction of the robust soft operator on random micro models and
/// value-table pairs.
pub fn theorem1_contraction(trials: usize, seed: u64) -> ContractionCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for t in 0..trials {
        let mdp = MicroMdp::random(seed.wrapping_add(1 + t as u64));
        let v1: Vec<f64> = (0..mdp.n_states).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v2: Vec<f64> = (0..mdp.n_states).map(|_| rng.random_range(-5.0..5.0)).collect();
        let tv1 = mdp.apply(&v1);
        let tv2 = mdp.apply(&v2);
        let lhs = tv1.iter().zip(&tv2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let rhs = v1.iter().zip(&v2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let excess = lhs - mdp.gamma * rhs;
        worst = worst.max(excess);
        if excess > 1e-9 {
            pass = false;
        }
    }
    ContractionCheck { trials, worst_excess: worst, pass }
}

#[derive(Debug, Clone)]
pub struct KrBoundCheck {
    pub trials: usize,
    /// Worst observed `E_P[g] - (E_Phat[g] - L rho)`; negative means failure.
    pub worst_slack: f64,
    pub pass: bool,
}

/// Lipschitz lower bound over the Wasserstein ball: piecewise-linear `g`
/// (min of affine pieces), a discrete empirical distribution, and perturbed
/// distributions built by bounded mass transport.
pub fn theorem2_kr_bound(trials: usize, seed: u64) -> KrBoundCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut pass = true;
    for _ in 0..trials {
        let dim = rng.random_range(3..=7);
        // random SPD ground metric
        let mut a = Mat::zeros(dim, dim);
        for v in a.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let psd = a.transpose().matmul(&a);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..2.0)).collect();
        let metric = GroundMetric::build(&w, rng.random_range(0.0..1.0), &psd);

        // g = min of affine pieces; Lipschitz constant under d_Q is the max
        // dual norm of the slopes
        let n_pieces = rng.random_range(2..=4);
        let pieces: Vec<(Vec<f64>, f64)> = (0..n_pieces)
            .map(|_| {
                let slope: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (slope, rng.random_range(-0.5..0.5))
            })
            .collect();
        let lip = pieces.iter().map(|(s, _)| metric.inv_norm(s)).fold(0.0, f64::max);
        let g = |x: &[f64]| -> f64 {
            pieces
                .iter()
                .map(|(s, b)| s.iter().zip(x).map(|(si, xi)| si * xi).sum::<f64>() + b)
                .fold(f64::INFINITY, f64::min)
        };

        // empirical atoms and a transported distribution with cost <= rho
        let k = rng.random_range(3..=6);
        let atoms: Vec<Vec<f64>> =
            (0..k).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let rho = rng.random_range(0.1..1.0);
        let moves: Vec<Vec<f64>> =
            (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let raw_cost: f64 = atoms
            .iter()
            .zip(&moves)
            .map(|(x, mv)| {
                let y: Vec<f64> = x.iter().zip(mv).map(|(a, b)| a + b).collect();
                metric.dist(x, &y) / k as f64
            })
            .sum();
        let scale = if raw_cost > rho { rho / raw_cost } else { 1.0 };
        let transported: Vec<Vec<f64>> = atoms
            .iter()
            .zip(&moves)
            .map(|(x, mv)| x.iter().zip(mv).map(|(a, b)| a + scale * b).collect())
            .collect();
        // the plan moving each atom to its image certifies W1 <= cost
        let cost: f64 =
            atoms.iter().zip(&transported).map(|(x, y)| metric.dist(x, y) / k as f64).sum();
        assert!(cost <= rho + 1e-9);

        let e_hat: f64 = atoms.iter().map(|x| g(x)).sum::<f64>() / k as f64;
        let e_p: f64 = transported.iter().map(|x| g(x)).sum::<f64>() / k as f64;
        let slack = e_p - (e_hat - lip * rho);
        worst = worst.min(slack);
        if slack < -1e-9 {
            pass = false;
        }
    }
    KrBoundCheck { trials, worst_slack: worst, pass }
}

#[derive(Debug, Clone)]
pub struct NoRegretCheck {
    /// `(window, average positive violation over that prefix)`.
    pub window_averages: Vec<(usize, f64)>,
    /// Bound `G` on `|rho_hat - rho_target|` for the synthetic stream.
    pub g_bound: f64,
    pub lambda_nonneg: bool,
    pub pass: bool,
}

/// Drive the dual update with a bounded synthetic realized-radius stream
/// that responds to the dual variable (a stronger penalty shrinks the
/// adversary's reach); prefix averages of the positive budget violation
/// must be non-increasing over growing windows and small at the end.
pub fn theorem3_no_regret(seed: u64) -> NoRegretCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho_target = 0.2;
    let rho_ambition = 0.35;
    let kappa = 0.5;
    let noise_amp = 0.02;
    let mut dual = DualState::new(0.0, 0.1, 0.3, rho_target);
    let windows = [100usize, 1_000, 10_000];
    let horizon = windows[windows.len() - 1];

    let g_bound: f64 = (rho_ambition + noise_amp - rho_target).max(rho_target);
    let mut cum_violation = 0.0;
    let mut averages = Vec::new();
    let mut lambda_nonneg = true;
    for t in 1..=horizon {
        let noise = noise_amp * ((0.7 * t as f64).sin() + 0.4 * rng.random_range(-1.0..1.0));
        let rho_hat = (rho_ambition - kappa * dual.lambda + noise).clamp(0.0, rho_ambition + noise_amp);
        cum_violation += (rho_hat - rho_target).max(0.0);
        dual.update(rho_hat);
        if dual.lambda < 0.0 {
            lambda_nonneg = false;
        }
        if windows.contains(&t) {
            averages.push((t, cum_violation / t as f64));
        }
    }
    let non_increasing = averages.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let final_ok = averages.last().is_some_and(|&(_, avg)| avg <= 0.1 * g_bound);
    NoRegretCheck {
        window_averages: averages,
        g_bound,
        lambda_nonneg,
        pass: non_increasing && final_ok && lambda_nonneg,
    }
}
