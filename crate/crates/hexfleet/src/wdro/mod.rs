//! Graph-aligned Wasserstein-1 robustness: the Mahalanobis ground metric,
//! bounded scenario support sets, the penalized inner minimization over
//! scenarios, robust value targets, and the primal-dual risk-budget update.
//!
//! Scenario vectors are laid out as the row-major demand block followed by
//! the relaxed (continuous) travel-time block, dimension `q = 2 m^2`.

mod resim;

pub use resim::{chain_feature_grad_to_scenario, resim_features, resim_successor, ResimCache};

use crate::hexgrid::GraphMatrices;
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, Mat};
use crate::scenario::{ScenarioDataset, ScenarioField};

/// Flatten a scenario field into the adversary coordinate space.
pub fn flatten_scenario(field: &ScenarioField) -> Vec<f64> {
    let m2 = field.m() * field.m();
    let mut v = Vec::with_capacity(2 * m2);
    v.extend_from_slice(field.demand_raw());
    v.extend(field.travel_raw().iter().map(|&t| t as f64));
    v
}

/// Rebuild a field from a scenario vector: demand clamped at zero, relaxed
/// travel times rounded with a floor of one and a unit diagonal.
pub fn unflatten_scenario(xi: &[f64], m: usize) -> ScenarioField {
    let m2 = m * m;
    assert_eq!(xi.len(), 2 * m2, "scenario vector length mismatch");
    let demand: Vec<f64> = xi[..m2].iter().map(|&d| d.max(0.0)).collect();
    let mut travel: Vec<i32> = xi[m2..].iter().map(|&t| (t.round() as i32).max(1)).collect();
    for h in 0..m {
        travel[h * m + h] = 1;
    }
    ScenarioField::new(m, demand, travel)
}

/// How `Q v` and `v' Q v` are evaluated.
#[derive(Debug, Clone)]
enum QForm {
    /// Plain Euclidean (identity-metric ablation).
    Identity,
    /// Explicit dense matrix.
    Dense(Mat),
    /// `Q = diag(w) + beta * blockdiag(K, K)` with `K = L (x) I + I (x) L`,
    /// applied through the Kronecker-sum identity `K vec(X) = vec(LX + XL)`.
    GraphSum { weights: Vec<f64>, beta: f64, laplacian: Mat, m: usize },
}

impl QForm {
    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            QForm::Identity => v.to_vec(),
            QForm::Dense(q) => q.matvec(v),
            QForm::GraphSum { weights, beta, laplacian, m } => {
                let m = *m;
                let m2 = m * m;
                let mut out = vec![0.0; v.len()];
                for (o, (wi, vi)) in out.iter_mut().zip(weights.iter().zip(v)) {
                    *o = wi * vi;
                }
                for block in 0..2 {
                    let x = &v[block * m2..(block + 1) * m2];
                    // Y = L X + X L, row-major
                    for i in 0..m {
                        for k in 0..m {
                            let lik = laplacian[(i, k)];
                            if lik == 0.0 {
                                continue;
                            }
                            let xrow = &x[k * m..(k + 1) * m];
                            let orow = &mut out[block * m2 + i * m..block * m2 + (i + 1) * m];
                            for (o, &xv) in orow.iter_mut().zip(xrow) {
                                *o += beta * lik * xv;
                            }
                        }
                    }
                    for i in 0..m {
                        let xrow = &x[i * m..(i + 1) * m];
                        let orow = &mut out[block * m2 + i * m..block * m2 + (i + 1) * m];
                        for j in 0..m {
                            let mut s = 0.0;
                            for l in 0..m {
                                s += xrow[l] * laplacian[(l, j)];
                            }
                            orow[j] += beta * s;
                        }
                    }
                }
                out
            }
        }
    }

    fn quad(&self, v: &[f64]) -> f64 {
        match self {
            QForm::Identity => v.iter().map(|x| x * x).sum(),
            QForm::Dense(_) | QForm::GraphSum { .. } => {
                let qv = self.matvec(v);
                v.iter().zip(&qv).map(|(a, b)| a * b).sum()
            }
        }
    }
}

/// Mahalanobis ground metric `d_Q(a, b) = ||Q^{1/2}(a - b)||_2` with
/// `Q = diag(w) + beta * Q_graph` (plus a positive-definiteness jitter).
/// The Cholesky factor validates positive definiteness at construction and
/// backs the dual-norm evaluations; distances use the structured quadratic
/// form, which agrees with the factor route to floating-point accuracy.
#[derive(Debug, Clone)]
pub struct GroundMetric {
    form: QForm,
    chol: Mat,
    epsilon: f64,
}

fn chol_with_jitter(q: &Mat) -> (Mat, f64) {
    let n = q.rows;
    let mut jitter = 1e-10;
    loop {
        let mut qj = q.clone();
        for i in 0..n {
            qj[(i, i)] += jitter;
        }
        if let Some(chol) = cholesky(&qj) {
            return (chol, jitter);
        }
        jitter *= 10.0;
        assert!(jitter < 1.0, "ground metric is numerically indefinite");
    }
}

impl GroundMetric {
    /// Build from explicit inverse-variance weights and a dense graph matrix.
    pub fn build(weights: &[f64], beta: f64, q_graph: &Mat) -> Self {
        assert_eq!(q_graph.rows, weights.len(), "weight/graph dimension mismatch");
        let n = weights.len();
        let mut q = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = beta * q_graph[(i, j)];
            }
            q[(i, i)] += weights[i];
        }
        let (chol, jitter) = chol_with_jitter(&q);
        for i in 0..n {
            q[(i, i)] += jitter;
        }
        GroundMetric { form: QForm::Dense(q), chol, epsilon: 1e-8 }
    }

    /// Build from a grid Laplacian, exploiting the Kronecker-sum structure
    /// of the OD-space lift in every hot operation.
    pub fn from_graph_weights(weights: &[f64], beta: f64, graph: &GraphMatrices) -> Self {
        let q2 = graph.q_graph.rows;
        assert_eq!(weights.len(), q2, "weight/graph dimension mismatch");
        let m = graph.laplacian.rows;
        let mut q = Mat::zeros(q2, q2);
        for i in 0..q2 {
            for j in 0..q2 {
                q[(i, j)] = beta * graph.q_graph[(i, j)];
            }
            q[(i, i)] += weights[i];
        }
        let (chol, jitter) = chol_with_jitter(&q);
        let weights = weights.iter().map(|w| w + jitter).collect();
        GroundMetric {
            form: QForm::GraphSum { weights, beta, laplacian: graph.laplacian.clone(), m },
            chol,
            epsilon: 1e-8,
        }
    }

    /// Inverse-variance weights from a dataset: `w = 1 / (var + 1e-6)`.
    pub fn from_dataset(dataset: &ScenarioDataset, graph: &GraphMatrices, beta: f64) -> Self {
        let var = dataset.coordinate_variance();
        let weights: Vec<f64> = var.iter().map(|v| 1.0 / (v + 1e-6)).collect();
        GroundMetric::from_graph_weights(&weights, beta, graph)
    }

    /// Plain Euclidean metric (the identity-metric ablation).
    pub fn identity(dim: usize) -> Self {
        GroundMetric { form: QForm::Identity, chol: Mat::eye(dim), epsilon: 1e-8 }
    }

    pub fn dim(&self) -> usize {
        self.chol.rows
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `d_Q(a, b) = sqrt((a-b)' Q (a-b))`.
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "dimension mismatch");
        assert_eq!(b.len(), self.dim(), "dimension mismatch");
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.form.quad(&diff).max(0.0).sqrt()
    }

    /// Distance evaluated through the Cholesky factor, `||L^T (a - b)||_2`;
    /// agrees with [`GroundMetric::dist`] to floating-point accuracy.
    pub fn dist_via_factor(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in i..n {
                s += self.chol[(j, i)] * (a[j] - b[j]);
            }
            total += s * s;
        }
        total.sqrt()
    }

    pub fn q_matvec(&self, v: &[f64]) -> Vec<f64> {
        self.form.matvec(v)
    }

    /// Subgradient of `xi -> d_Q(xi, center)`: `Q(xi - center) / max(eps, d)`;
    /// the zero vector at the kink.
    pub fn subgrad(&self, xi: &[f64], center: &[f64]) -> Vec<f64> {
        let d = self.dist(xi, center);
        self.subgrad_given_dist(xi, center, d)
    }

    /// [`GroundMetric::subgrad`] when the distance is already known.
    pub fn subgrad_given_dist(&self, xi: &[f64], center: &[f64], d: f64) -> Vec<f64> {
        let diff: Vec<f64> = xi.iter().zip(center).map(|(a, b)| a - b).collect();
        if diff.iter().all(|&x| x == 0.0) {
            return vec![0.0; self.dim()];
        }
        let qv = self.form.matvec(&diff);
        let denom = d.max(self.epsilon);
        qv.into_iter().map(|x| x / denom).collect()
    }

    /// `||v||_{Q^{-1}}` via two triangular solves (test support).
    pub fn inv_norm(&self, v: &[f64]) -> f64 {
        let y = solve_lower(&self.chol, v);
        let x = solve_lower_transpose(&self.chol, &y);
        v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }
}

/// Box component of the support set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxKind {
    /// Demand coordinates floored at zero, travel coordinates at one.
    Scenario { m: usize },
    /// No box (toy problems).
    Free,
}

/// Bounded support set: a `d_Q` ball around the empirical sample intersected
/// with the scenario box.
#[derive(Debug, Clone)]
pub struct SupportSet {
    center: Vec<f64>,
    radius: f64,
    box_kind: BoxKind,
}

impl SupportSet {
    pub fn new(center: Vec<f64>, radius: f64, box_kind: BoxKind) -> Self {
        assert!(radius >= 0.0);
        SupportSet { center, radius, box_kind }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn clamp_box(&self, xi: &mut [f64]) {
        match self.box_kind {
            BoxKind::Free => {}
            BoxKind::Scenario { m } => {
                let m2 = m * m;
                for v in xi[..m2].iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                for v in xi[m2..].iter_mut() {
                    if *v < 1.0 {
                        *v = 1.0;
                    }
                }
            }
        }
    }

    fn ball_step(&self, metric: &GroundMetric, xi: &mut [f64], radius: f64) {
        let d = metric.dist(xi, &self.center);
        if d > radius && d > 0.0 {
            let s = radius / d;
            for (x, c) in xi.iter_mut().zip(&self.center) {
                *x = c + (*x - c) * s;
            }
        }
    }

    /// Project onto ball-and-box: alternating passes ending with the box so
    /// the box holds exactly; residual ball violation beyond tolerance
    /// triggers a radius shrink and more passes.
    pub fn project(&self, metric: &GroundMetric, xi: &[f64]) -> Vec<f64> {
        self.project_and_dist(metric, xi).0
    }

    /// [`SupportSet::project`] returning the projected point's distance to
    /// the center as well (saves a metric evaluation in descent loops).
    pub fn project_and_dist(&self, metric: &GroundMetric, xi: &[f64]) -> (Vec<f64>, f64) {
        let mut out = xi.to_vec();
        let mut radius = self.radius;
        for _round in 0..20 {
            for pass in 0..3 {
                // the first ball step of the first pass can reuse no prior
                // distance; subsequent checks are cheap relative to descent
                let _ = pass;
                self.ball_step(metric, &mut out, radius);
                self.clamp_box(&mut out);
            }
            let d = metric.dist(&out, &self.center);
            if d <= self.radius * (1.0 + 1e-6) + 1e-12 {
                return (out, d);
            }
            radius *= 0.97;
        }
        // radius shrink always terminates in practice; falling back to the
        // center keeps the contract (the center satisfies both sets)
        let mut c = self.center.clone();
        self.clamp_box(&mut c);
        let d = metric.dist(&c, &self.center);
        (c, d)
    }
}

/// Primal-dual risk-budget tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: f64,
    pub eta0: f64,
    /// Update counter; the step size is `eta0 / sqrt(t)`.
    pub t: u64,
    pub rho: f64,
    pub rho_target: f64,
    /// Running sum of positive budget violations `(rho_hat - rho_target)_+`.
    pub violation_sum: f64,
}

impl DualState {
    pub fn new(lambda0: f64, eta0: f64, rho: f64, rho_target: f64) -> Self {
        assert!(lambda0 >= 0.0);
        DualState { lambda: lambda0, eta0, t: 1, rho, rho_target, violation_sum: 0.0 }
    }

    /// `lambda <- [lambda + eta_t (rho_hat - rho_target)]_+`, `eta_t = eta0/sqrt(t)`.
    pub fn update(&mut self, rho_hat: f64) {
        assert!(rho_hat >= 0.0, "realized radius must be nonnegative");
        let eta = self.eta0 / (self.t as f64).sqrt();
        self.lambda = (self.lambda + eta * (rho_hat - self.rho_target)).max(0.0);
        self.violation_sum += (rho_hat - self.rho_target).max(0.0);
        self.t += 1;
    }
}

/// Outcome of the inner minimization.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub xi_star: Vec<f64>,
    /// Realized adversarial radius `d_Q(xi_star, xi_hat)`.
    pub rho_hat: f64,
    /// `gamma^{Delta(xi_star)} V(s'(xi_star))`.
    pub discounted_value: f64,
    pub f_star: f64,
    pub iterations: usize,
}

/// Projected subgradient descent on
/// `f(xi) = value_part(xi) + lambda d_Q(xi, center)` over the support set,
/// starting at the center. `value_part` returns the (already discounted)
/// value and its gradient, or `None` on a non-finite evaluation, which
/// aborts the loop and returns the best finite iterate. Best-iterate
/// selection, so `f(xi_star) <= f(center)` always.
pub fn projected_subgradient_min<F>(
    mut value_part: F,
    metric: &GroundMetric,
    set: &SupportSet,
    lambda: f64,
    iterations: usize,
    step: f64,
) -> InnerResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    assert!(iterations >= 1, "need at least one iteration");
    assert!(step > 0.0, "step must be positive");
    let center = set.center().to_vec();
    let mut xi = center.clone();
    let mut dist = 0.0;
    let mut best: Option<InnerResult> = None;
    let mut done = 0;
    for k in 0..=iterations {
        let Some((value, value_grad)) = value_part(&xi) else {
            break;
        };
        if !value.is_finite() {
            break;
        }
        let f = value + lambda * dist;
        if best.as_ref().is_none_or(|b| f < b.f_star) {
            best = Some(InnerResult {
                xi_star: xi.clone(),
                rho_hat: dist,
                discounted_value: value,
                f_star: f,
                iterations: k,
            });
        }
        done = k;
        if k == iterations {
            break;
        }
        let sub = metric.subgrad_given_dist(&xi, &center, dist);
        let stepped: Vec<f64> = xi
            .iter()
            .zip(value_grad.iter().zip(&sub))
            .map(|(x, (gv, gd))| x - step * (gv + lambda * gd))
            .collect();
        let (projected, d) = set.project_and_dist(metric, &stepped);
        xi = projected;
        dist = d;
    }
    let mut out = best.expect("at least the center evaluates finitely");
    out.iterations = done;
    out
}

/// The practical robust target
/// `r - lambda rho + gamma^{Delta(xi*)} V(s'(xi*)) + lambda d_Q(xi*, xi_hat)`.
pub fn robust_target(reward: f64, lambda: f64, rho: f64, inner: &InnerResult) -> f64 {
    reward - lambda * rho + inner.discounted_value + lambda * inner.rho_hat
}
