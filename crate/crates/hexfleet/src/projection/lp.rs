//! Bounded-variable primal simplex.
//!
//! Dense two-phase implementation sized for desk-scale projection LPs (a few
//! hundred columns). Entering variables follow Dantzig pricing until a
//! degeneracy stall is detected, then Bland's rule takes over for cycling
//! safety. Bounds may be infinite on one side; nonbasic variables rest at a
//! finite bound.

/// Row sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// One constraint row in sparse form.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `maximize c'x  s.t.  rows, lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    /// Iteration cap hit; treat as a numerical failure.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarStatus {
    Basic(usize),
    AtLower,
    AtUpper,
}

const TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const MAX_ITERS: usize = 200_000;
const STALL_LIMIT: usize = 60;
const REFACTOR_EVERY: usize = 120;

struct Tableau {
    n_total: usize,
    n_rows: usize,
    /// Dense column-major constraint matrix (rows x all vars).
    a: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    status: Vec<VarStatus>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    x: Vec<f64>,
    bland: bool,
    stall: usize,
    pivots_since_refactor: usize,
}

impl Tableau {
    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.n_rows..(j + 1) * self.n_rows]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            VarStatus::AtLower => self.lower[j],
            VarStatus::AtUpper => self.upper[j],
            VarStatus::Basic(_) => unreachable!(),
        }
    }

    /// Recompute basic values from scratch: x_B = Binv (b - A_N x_N).
    fn recompute_basics(&mut self, b: &[f64]) {
        let m = self.n_rows;
        let mut resid = b.to_vec();
        for j in 0..self.n_total {
            if let VarStatus::Basic(_) = self.status[j] {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v != 0.0 {
                let col = &self.a[j * m..(j + 1) * m];
                for i in 0..m {
                    resid[i] -= col[i] * v;
                }
            }
        }
        for i in 0..m {
            let mut s = 0.0;
            for k in 0..m {
                s += self.binv[i * m + k] * resid[k];
            }
            self.x[self.basis[i]] = s;
        }
    }

    /// Rebuild the basis inverse by Gauss-Jordan elimination.
    fn refactorize(&mut self) -> bool {
        let m = self.n_rows;
        let mut mat = vec![0.0; m * 2 * m];
        for (i, &bj) in self.basis.iter().enumerate() {
            let col = &self.a[bj * m..(bj + 1) * m];
            for r in 0..m {
                mat[r * 2 * m + i] = col[r];
            }
        }
        for r in 0..m {
            mat[r * 2 * m + m + r] = 1.0;
        }
        for c in 0..m {
            let mut piv = c;
            let mut best = mat[c * 2 * m + c].abs();
            for r in (c + 1)..m {
                let v = mat[r * 2 * m + c].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-12 {
                return false;
            }
            if piv != c {
                for k in 0..2 * m {
                    mat.swap(c * 2 * m + k, piv * 2 * m + k);
                }
            }
            let d = mat[c * 2 * m + c];
            for k in 0..2 * m {
                mat[c * 2 * m + k] /= d;
            }
            for r in 0..m {
                if r != c {
                    let f = mat[r * 2 * m + c];
                    if f != 0.0 {
                        for k in 0..2 * m {
                            mat[r * 2 * m + k] -= f * mat[c * 2 * m + k];
                        }
                    }
                }
            }
        }
        for r in 0..m {
            for k in 0..m {
                self.binv[r * m + k] = mat[r * 2 * m + m + k];
            }
        }
        self.pivots_since_refactor = 0;
        true
    }

    /// Run simplex iterations with the given cost vector until optimal.
    fn optimize(&mut self, b: &[f64]) -> Result<(), LpOutcome> {
        let m = self.n_rows;
        for _iter in 0..MAX_ITERS {
            // price: y = c_B' Binv
            let mut y = vec![0.0; m];
            for i in 0..m {
                let cb = self.cost[self.basis[i]];
                if cb != 0.0 {
                    for k in 0..m {
                        y[k] += cb * self.binv[i * m + k];
                    }
                }
            }
            // entering variable
            let mut enter: Option<(usize, f64, f64)> = None; // (var, reduced cost, dir)
            for j in 0..self.n_total {
                let status = self.status[j];
                if matches!(status, VarStatus::Basic(_)) {
                    continue;
                }
                if self.upper[j] - self.lower[j] < 1e-12 {
                    continue; // fixed, cannot move
                }
                let col = self.col(j);
                let mut d = self.cost[j];
                for i in 0..m {
                    d -= y[i] * col[i];
                }
                let (eligible, dir) = match status {
                    VarStatus::AtLower => (d > TOL, 1.0),
                    VarStatus::AtUpper => (d < -TOL, -1.0),
                    VarStatus::Basic(_) => unreachable!(),
                };
                if !eligible {
                    continue;
                }
                if self.bland {
                    enter = Some((j, d, dir));
                    break;
                }
                match enter {
                    Some((_, dbest, _)) if d.abs() <= dbest.abs() => {}
                    _ => enter = Some((j, d, dir)),
                }
            }
            let Some((j_enter, _d, dir)) = enter else {
                return Ok(()); // optimal
            };

            // direction through the basis: t = Binv a_j
            let col = self.col(j_enter).to_vec();
            let mut t = vec![0.0; m];
            for i in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    s += self.binv[i * m + k] * col[k];
                }
                t[i] = s;
            }

            // ratio test: bound flip vs blocking basic
            let mut theta = self.upper[j_enter] - self.lower[j_enter];
            let mut leave: Option<(usize, bool)> = None; // (row, hits_lower)
            for i in 0..m {
                let ti = dir * t[i];
                let bv = self.basis[i];
                let xv = self.x[bv];
                if ti > TOL {
                    let lim = (xv - self.lower[bv]) / ti;
                    if lim < theta - TOL
                        || (lim < theta + TOL
                            && leave.is_some_and(|(r, _)| self.basis[r] > bv))
                    {
                        theta = lim.max(0.0);
                        leave = Some((i, true));
                    }
                } else if ti < -TOL {
                    let lim = (self.upper[bv] - xv) / (-ti);
                    if lim < theta - TOL
                        || (lim < theta + TOL
                            && leave.is_some_and(|(r, _)| self.basis[r] > bv))
                    {
                        theta = lim.max(0.0);
                        leave = Some((i, false));
                    }
                }
            }
            if theta.is_infinite() {
                return Err(LpOutcome::Unbounded);
            }
            if theta < TOL {
                self.stall += 1;
                if self.stall > STALL_LIMIT {
                    self.bland = true;
                }
            } else {
                self.stall = 0;
            }

            // apply movement
            let delta = dir * theta;
            for i in 0..m {
                let bv = self.basis[i];
                self.x[bv] -= delta * t[i];
            }
            match leave {
                None => {
                    // bound flip
                    self.status[j_enter] = match self.status[j_enter] {
                        VarStatus::AtLower => VarStatus::AtUpper,
                        VarStatus::AtUpper => VarStatus::AtLower,
                        VarStatus::Basic(_) => unreachable!(),
                    };
                    self.x[j_enter] = self.nonbasic_value(j_enter);
                }
                Some((row, hits_lower)) => {
                    let leaving = self.basis[row];
                    let enter_from = self.nonbasic_value(j_enter);
                    self.x[j_enter] = enter_from + delta;
                    self.x[leaving] =
                        if hits_lower { self.lower[leaving] } else { self.upper[leaving] };
                    self.status[leaving] =
                        if hits_lower { VarStatus::AtLower } else { VarStatus::AtUpper };
                    self.status[j_enter] = VarStatus::Basic(row);
                    self.basis[row] = j_enter;
                    // eta update of Binv
                    let tr = t[row];
                    if tr.abs() < 1e-11 {
                        if !self.refactorize() {
                            return Err(LpOutcome::Stalled);
                        }
                        self.recompute_basics(b);
                    } else {
                        for k in 0..m {
                            self.binv[row * m + k] /= tr;
                        }
                        for i in 0..m {
                            if i != row {
                                let f = t[i];
                                if f != 0.0 {
                                    for k in 0..m {
                                        self.binv[i * m + k] -= f * self.binv[row * m + k];
                                    }
                                }
                            }
                        }
                        self.pivots_since_refactor += 1;
                        if self.pivots_since_refactor >= REFACTOR_EVERY {
                            if !self.refactorize() {
                                return Err(LpOutcome::Stalled);
                            }
                            self.recompute_basics(b);
                        }
                    }
                }
            }
        }
        Err(LpOutcome::Stalled)
    }
}

/// Solve the LP. Deterministic for fixed input.
pub fn solve_lp(lp: &LinearProgram) -> LpOutcome {
    let n = lp.objective.len();
    let m = lp.rows.len();
    debug_assert_eq!(lp.lower.len(), n);
    debug_assert_eq!(lp.upper.len(), n);

    for j in 0..n {
        if lp.lower[j] > lp.upper[j] + 1e-12 {
            return LpOutcome::Infeasible;
        }
    }
    if m == 0 {
        // box-only problem: each variable at its favorable bound
        let mut x = vec![0.0; n];
        let mut obj = 0.0;
        for j in 0..n {
            x[j] = if lp.objective[j] >= 0.0 { lp.upper[j] } else { lp.lower[j] };
            if !x[j].is_finite() {
                return LpOutcome::Unbounded;
            }
            obj += lp.objective[j] * x[j];
        }
        return LpOutcome::Optimal { x, objective: obj };
    }

    // layout: structurals | slacks (Le/Ge rows) | artificials
    let mut slack_of_row = vec![usize::MAX; m];
    let mut n_slacks = 0usize;
    for (r, row) in lp.rows.iter().enumerate() {
        if row.sense != Sense::Eq {
            slack_of_row[r] = n + n_slacks;
            n_slacks += 1;
        }
    }

    // residuals with structurals at initial bounds (lower when finite, else upper)
    let init_value = |j: usize| -> f64 {
        if lp.lower[j].is_finite() {
            lp.lower[j]
        } else {
            lp.upper[j]
        }
    };
    let mut resid: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
    for (r, row) in lp.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            resid[r] -= a * init_value(j);
        }
    }

    let mut artificial_rows: Vec<usize> = Vec::new();
    for (r, row) in lp.rows.iter().enumerate() {
        let ok = match row.sense {
            Sense::Le => resid[r] >= 0.0,
            Sense::Ge => resid[r] <= 0.0,
            Sense::Eq => false,
        };
        if !ok {
            artificial_rows.push(r);
        }
    }
    let n_art = artificial_rows.len();
    let n_total = n + n_slacks + n_art;

    let mut a = vec![0.0; n_total * m];
    for (r, row) in lp.rows.iter().enumerate() {
        for &(j, coef) in &row.coeffs {
            a[j * m + r] += coef;
        }
    }
    for (r, &sj) in slack_of_row.iter().enumerate() {
        if sj != usize::MAX {
            a[sj * m + r] = 1.0;
        }
    }
    for (k, &r) in artificial_rows.iter().enumerate() {
        let j = n + n_slacks + k;
        a[j * m + r] = if resid[r] >= 0.0 { 1.0 } else { -1.0 };
    }

    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    for (r, row) in lp.rows.iter().enumerate() {
        if slack_of_row[r] == usize::MAX {
            continue;
        }
        match row.sense {
            Sense::Le => {
                lower.push(0.0);
                upper.push(f64::INFINITY);
            }
            Sense::Ge => {
                lower.push(f64::NEG_INFINITY);
                upper.push(0.0);
            }
            Sense::Eq => unreachable!(),
        }
        let _ = r;
    }
    for _ in 0..n_art {
        lower.push(0.0);
        upper.push(f64::INFINITY);
    }

    let mut status = Vec::with_capacity(n_total);
    for j in 0..n {
        status.push(if lp.lower[j].is_finite() { VarStatus::AtLower } else { VarStatus::AtUpper });
    }
    for _ in 0..(n_slacks + n_art) {
        status.push(VarStatus::AtLower); // placeholder, fixed below
    }

    let mut basis = vec![usize::MAX; m];
    let mut x = vec![0.0; n_total];
    for j in 0..n {
        x[j] = init_value(j);
    }
    let mut art_seen = 0usize;
    for (r, row) in lp.rows.iter().enumerate() {
        let has_art = artificial_rows.contains(&r);
        if has_art {
            let j = n + n_slacks + art_seen;
            art_seen += 1;
            basis[r] = j;
            status[j] = VarStatus::Basic(r);
            x[j] = resid[r].abs();
            if slack_of_row[r] != usize::MAX {
                let sj = slack_of_row[r];
                status[sj] = match row.sense {
                    Sense::Le => VarStatus::AtLower, // slack in [0, inf)
                    Sense::Ge => VarStatus::AtUpper, // slack in (-inf, 0]
                    Sense::Eq => unreachable!(),
                };
                x[sj] = 0.0;
            }
        } else {
            let sj = slack_of_row[r];
            basis[r] = sj;
            status[sj] = VarStatus::Basic(r);
            x[sj] = resid[r];
        }
    }

    let b: Vec<f64> = lp.rows.iter().map(|r| r.rhs).collect();
    let mut binv = vec![0.0; m * m];
    for i in 0..m {
        binv[i * m + i] = 1.0;
    }
    // initial basis may contain -1-signed artificial columns
    for (k, &r) in artificial_rows.iter().enumerate() {
        let j = n + n_slacks + k;
        if a[j * m + r] < 0.0 {
            for kk in 0..m {
                binv[r * m + kk] = -binv[r * m + kk];
            }
        }
    }

    let mut tab = Tableau {
        n_total,
        n_rows: m,
        a,
        lower,
        upper,
        cost: vec![0.0; n_total],
        status,
        basis,
        binv,
        x,
        bland: false,
        stall: 0,
        pivots_since_refactor: 0,
    };

    // Phase 1: drive artificials to zero.
    if n_art > 0 {
        for k in 0..n_art {
            tab.cost[n + n_slacks + k] = -1.0;
        }
        match tab.optimize(&b) {
            Ok(()) => {}
            Err(LpOutcome::Unbounded) => return LpOutcome::Stalled, // cannot happen with this cost
            Err(other) => return other,
        }
        let art_sum: f64 = (0..n_art).map(|k| tab.x[n + n_slacks + k]).sum();
        if art_sum > FEAS_TOL {
            return LpOutcome::Infeasible;
        }
        // freeze artificials at zero
        for k in 0..n_art {
            let j = n + n_slacks + k;
            tab.lower[j] = 0.0;
            tab.upper[j] = 0.0;
            tab.cost[j] = 0.0;
        }
        tab.bland = false;
        tab.stall = 0;
    }

    // Phase 2: true objective.
    for j in 0..n {
        tab.cost[j] = lp.objective[j];
    }
    for j in n..n_total {
        tab.cost[j] = 0.0;
    }
    match tab.optimize(&b) {
        Ok(()) => {}
        Err(out) => return out,
    }

    let x_out: Vec<f64> = (0..n).map(|j| tab.x[j]).collect();
    // feasibility sanity on the reported point
    for (r, row) in lp.rows.iter().enumerate() {
        let lhs: f64 = row.coeffs.iter().map(|&(j, c)| c * x_out[j]).sum();
        let viol = match row.sense {
            Sense::Le => (lhs - row.rhs).max(0.0),
            Sense::Ge => (row.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - row.rhs).abs(),
        };
        if viol > 1e-5 * (1.0 + row.rhs.abs()) {
            let _ = r;
            return LpOutcome::Stalled;
        }
    }
    let objective = lp.objective.iter().zip(&x_out).map(|(c, v)| c * v).sum();
    LpOutcome::Optimal { x: x_out, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(obj: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, rows: Vec<LpRow>) -> LinearProgram {
        LinearProgram { objective: obj, lower, upper, rows }
    }

    #[test]
    fn simple_box_problem() {
        let p = lp(vec![1.0, -2.0], vec![0.0, 0.0], vec![3.0, 5.0], vec![]);
        match solve_lp(&p) {
            LpOutcome::Optimal { x, objective } => {
                assert_eq!(x, vec![3.0, 0.0]);
                assert_eq!(objective, 3.0);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn knapsack_relaxation() {
        // max x0 + 2 x1, x0 + x1 <= 1.5, 0 <= x <= 1  ->  x = (0.5, 1), obj 2.5
        let p = lp(
            vec![1.0, 2.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![LpRow { coeffs: vec![(0, 1.0), (1, 1.0)], sense: Sense::Le, rhs: 1.5 }],
        );
        match solve_lp(&p) {
            LpOutcome::Optimal { x, objective } => {
                assert!((objective - 2.5).abs() < 1e-9);
                assert!((x[0] - 0.5).abs() < 1e-9);
                assert!((x[1] - 1.0).abs() < 1e-9);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn equality_rows_need_phase_one() {
        // max x0 + x1 + x2, x0 + x1 + x2 = 1, x1 >= 0.2, all in [0,1]
        let p = lp(
            vec![1.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![
                LpRow { coeffs: vec![(0, 1.0), (1, 1.0), (2, 1.0)], sense: Sense::Eq, rhs: 1.0 },
                LpRow { coeffs: vec![(1, 1.0)], sense: Sense::Ge, rhs: 0.2 },
            ],
        );
        match solve_lp(&p) {
            LpOutcome::Optimal { x, objective } => {
                assert!((objective - 1.0).abs() < 1e-9);
                assert!(x[1] >= 0.2 - 1e-9);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn detects_infeasible() {
        let p = lp(
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![LpRow { coeffs: vec![(0, 1.0)], sense: Sense::Ge, rhs: 2.0 }],
        );
        assert_eq!(solve_lp(&p), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let p = lp(
            vec![1.0],
            vec![0.0],
            vec![f64::INFINITY],
            vec![LpRow { coeffs: vec![(0, -1.0)], sense: Sense::Le, rhs: 0.0 }],
        );
        assert_eq!(solve_lp(&p), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_equality() {
        // x0 - x1 = -2, minimize-ish: max -x0 - x1 with x in [0, 5]: x0=0, x1=2
        let p = lp(
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![LpRow { coeffs: vec![(0, 1.0), (1, -1.0)], sense: Sense::Eq, rhs: -2.0 }],
        );
        match solve_lp(&p) {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 0.0).abs() < 1e-9);
                assert!((x[1] - 2.0).abs() < 1e-9);
                assert!((objective + 2.0).abs() < 1e-9);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn degenerate_transport_like() {
        // assignment polytope corner with many ties
        let mut rows = Vec::new();
        for i in 0..3 {
            rows.push(LpRow {
                coeffs: (0..3).map(|j| (i * 3 + j, 1.0)).collect(),
                sense: Sense::Eq,
                rhs: 1.0,
            });
        }
        for j in 0..3 {
            rows.push(LpRow {
                coeffs: (0..3).map(|i| (i * 3 + j, 1.0)).collect(),
                sense: Sense::Le,
                rhs: 1.0,
            });
        }
        let costs = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
        let p = lp(costs, vec![0.0; 9], vec![1.0; 9], rows);
        match solve_lp(&p) {
            LpOutcome::Optimal { objective, .. } => {
                // best assignment: 3 + 9 + 6 = 18 (cols 0, 2, 1 for rows 0, 1, 2)
                assert!((objective - 18.0).abs() < 1e-8, "got {}", objective);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn random_lps_against_enumerated_vertices() {
        // Small random LPs with box bounds and one <= row: check against a
        // brute-force scan over candidate vertex values on a fine lattice.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = 3;
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
            let cap = rng.random_range(0.5..2.5);
            let p = lp(
                c.clone(),
                vec![0.0; n],
                vec![1.0; n],
                vec![LpRow {
                    coeffs: w.iter().cloned().enumerate().collect(),
                    sense: Sense::Le,
                    rhs: cap,
                }],
            );
            let got = match solve_lp(&p) {
                LpOutcome::Optimal { objective, .. } => objective,
                other => panic!("{:?}", other),
            };
            // lattice scan (fine enough for 1e-3 agreement on this family)
            let steps = 60;
            let mut best = f64::NEG_INFINITY;
            for a in 0..=steps {
                for bq in 0..=steps {
                    for cq in 0..=steps {
                        let x = [a as f64 / steps as f64, bq as f64 / steps as f64, cq as f64 / steps as f64];
                        let load: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum();
                        if load <= cap + 1e-12 {
                            let v: f64 = x.iter().zip(&c).map(|(xi, ci)| xi * ci).sum();
                            best = best.max(v);
                        }
                    }
                }
            }
            assert!(got >= best - 1e-9, "lp {} < lattice {}", got, best);
            assert!(got <= best + 0.15, "lp {} should be near lattice {}", got, best);
        }
    }
}
