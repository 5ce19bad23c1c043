//! Minimal reverse-mode autodiff over dense row-major tensors.
//!
//! Define-by-run: each op evaluates eagerly and records itself on the tape;
//! `backward` sweeps the tape once and leaves gradients on every node,
//! including input leaves (the scenario-gradient path needs those).

use thiserror::Error;

/// Dense row-major tensor. 64-bit throughout; see the `f32-weights` note in
/// the crate docs for the narrower storage switch.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TensorData { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor shape mismatch");
        TensorData { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        TensorData { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    AddConst(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Silu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    SoftmaxRow(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    Entry(usize, usize, usize),
    /// Forward constant with a hand-specified linear backward: each route is
    /// `(target node, target flat index, source flat index, scale)`.
    LinearRoute(Vec<(usize, usize, usize, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddConst(..) => "add_const",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Silu(..) => "silu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::SoftmaxRow(..) => "softmax_row",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Reshape(..) => "reshape",
            Op::Entry(..) => "entry",
            Op::LinearRoute(..) => "linear_route",
        }
    }
}

struct Node {
    op: Op,
    value: TensorData,
}

/// The autodiff tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: TensorData) -> TensorRef {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        TensorRef(self.nodes.len() - 1)
    }

    pub fn value(&self, t: TensorRef) -> &TensorData {
        &self.nodes[t.0].value
    }

    pub fn scalar_value(&self, t: TensorRef) -> f64 {
        debug_assert_eq!(self.nodes[t.0].value.len(), 1);
        self.nodes[t.0].value.data[0]
    }

    /// Gradient of the last `backward` target with respect to node `t`.
    pub fn grad(&self, t: TensorRef) -> Option<&[f64]> {
        self.grads[t.0].as_deref()
    }

    pub fn leaf(&mut self, value: TensorData) -> TensorRef {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.cols, bv.rows, "matmul shapes {}x{} . {}x{}", av.rows, av.cols, bv.rows, bv.cols);
        let (m, k, n) = (av.rows, av.cols, bv.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = av.data[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv.data[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += aik * bb;
                }
            }
        }
        self.push(Op::MatMul(a.0, b.0), TensorData::from_vec(m, n, out))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let out = TensorData::from_vec(av.rows, av.cols, data);
        self.push(Op::Add(a.0, b.0), out)
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "sub shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect();
        let out = TensorData::from_vec(av.rows, av.cols, data);
        self.push(Op::Sub(a.0, b.0), out)
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "mul shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let out = TensorData::from_vec(av.rows, av.cols, data);
        self.push(Op::Mul(a.0, b.0), out)
    }

    /// Matrix plus a broadcast row vector.
    pub fn add_row(&mut self, a: TensorRef, row: TensorRef) -> TensorRef {
        let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(rv.rows, 1, "bias must be a row vector");
        assert_eq!(av.cols, rv.cols, "bias width mismatch");
        let mut data = av.data.clone();
        for i in 0..av.rows {
            for j in 0..av.cols {
                data[i * av.cols + j] += rv.data[j];
            }
        }
        let out = TensorData::from_vec(av.rows, av.cols, data);
        self.push(Op::AddRow(a.0, row.0), out)
    }

    /// Add a constant tensor (no gradient into the constant).
    pub fn add_const(&mut self, a: TensorRef, c: TensorData) -> TensorRef {
        let av = &self.nodes[a.0].value;
        assert_eq!((av.rows, av.cols), (c.rows, c.cols), "add_const shape mismatch");
        let data = av.data.iter().zip(&c.data).map(|(x, y)| x + y).collect();
        let out = TensorData::from_vec(av.rows, av.cols, data);
        self.push(Op::AddConst(a.0), out)
    }

    pub fn scale(&mut self, a: TensorRef, s: f64) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out = TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * s).collect());
        self.push(Op::Scale(a.0, s), out)
    }

    pub fn add_scalar(&mut self, a: TensorRef, s: f64) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out = TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x + s).collect());
        self.push(Op::AddScalar(a.0), out)
    }

    pub fn silu(&mut self, a: TensorRef) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out =
            TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|&x| x * sigmoid(x)).collect());
        self.push(Op::Silu(a.0), out)
    }

    pub fn tanh(&mut self, a: TensorRef) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out = TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x.tanh()).collect());
        self.push(Op::Tanh(a.0), out)
    }

    pub fn exp(&mut self, a: TensorRef) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out = TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x.exp()).collect());
        self.push(Op::Exp(a.0), out)
    }

    pub fn log(&mut self, a: TensorRef) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out = TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x.ln()).collect());
        self.push(Op::Log(a.0), out)
    }

    pub fn square(&mut self, a: TensorRef) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out = TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * x).collect());
        self.push(Op::Square(a.0), out)
    }

    /// Clamp with pass-through gradient strictly inside the range.
    pub fn clamp(&mut self, a: TensorRef, lo: f64, hi: f64) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let out =
            TensorData::from_vec(av.rows, av.cols, av.data.iter().map(|x| x.clamp(lo, hi)).collect());
        self.push(Op::Clamp(a.0, lo, hi), out)
    }

    /// Row-wise softmax.
    pub fn softmax_row(&mut self, a: TensorRef) -> TensorRef {
        let av = &self.nodes[a.0].value;
        let mut data = vec![0.0; av.len()];
        for i in 0..av.rows {
            let row = &av.data[i * av.cols..(i + 1) * av.cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                data[i * av.cols + j] = e;
                sum += e;
            }
            for j in 0..av.cols {
                data[i * av.cols + j] /= sum;
            }
        }
        let out = TensorData::from_vec(av.rows, av.cols, data);
        self.push(Op::SoftmaxRow(a.0), out)
    }

    pub fn sum(&mut self, a: TensorRef) -> TensorRef {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Op::Sum(a.0), TensorData::scalar(s))
    }

    pub fn mean(&mut self, a: TensorRef) -> TensorRef {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a.0), TensorData::scalar(s))
    }

    /// Column means over rows: `m x n -> 1 x n` (mean pooling over hexes).
    pub fn mean_rows(&mut self, a: TensorRef) -> TensorRef {
        let v = &self.nodes[a.0].value;
        let mut out = vec![0.0; v.cols];
        for i in 0..v.rows {
            for j in 0..v.cols {
                out[j] += v.data[i * v.cols + j];
            }
        }
        for o in out.iter_mut() {
            *o /= v.rows as f64;
        }
        self.push(Op::MeanRows(a.0), TensorData::from_vec(1, v.cols, out))
    }

    /// Concatenate row vectors into one longer row vector.
    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> TensorRef {
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows, 1, "concat_cols expects row vectors");
            data.extend_from_slice(&v.data);
        }
        let out = TensorData::from_vec(1, data.len(), data);
        self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), out)
    }

    /// Stack row vectors of equal width into a `k x c` matrix.
    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> TensorRef {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.cols;
        let mut data = Vec::with_capacity(parts.len() * cols);
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows, 1, "concat_rows expects row vectors");
            assert_eq!(v.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&v.data);
        }
        let out = TensorData::from_vec(parts.len(), cols, data);
        self.push(Op::ConcatRows(parts.iter().map(|p| p.0).collect()), out)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: TensorRef, rows: usize, cols: usize) -> TensorRef {
        let v = &self.nodes[a.0].value;
        assert_eq!(v.len(), rows * cols, "reshape length mismatch");
        let out = TensorData::from_vec(rows, cols, v.data.clone());
        self.push(Op::Reshape(a.0), out)
    }

    /// One entry as a scalar node.
    pub fn entry(&mut self, a: TensorRef, r: usize, c: usize) -> TensorRef {
        let v = &self.nodes[a.0].value;
        let val = v.data[r * v.cols + c];
        self.push(Op::Entry(a.0, r, c), TensorData::scalar(val))
    }

    /// The row `r` of a matrix as a `1 x cols` node (gather with gradient).
    pub fn row(&mut self, a: TensorRef, r: usize) -> TensorRef {
        let v = &self.nodes[a.0].value;
        let cols = v.cols;
        let data = v.data[r * cols..(r + 1) * cols].to_vec();
        let routes = (0..cols).map(|j| (a.0, r * cols + j, j, 1.0)).collect();
        let value = TensorData::from_vec(1, cols, data);
        self.push(Op::LinearRoute(routes), value)
    }

    /// Forward-constant node with an explicit linear backward map; the
    /// straight-through estimator for the projected action embedding uses
    /// this to route gradients onto the selected intention components.
    pub fn linear_route(
        &mut self,
        value: TensorData,
        routes: Vec<(TensorRef, usize, usize, f64)>,
    ) -> TensorRef {
        let raw = routes.into_iter().map(|(t, ti, si, s)| (t.0, ti, si, s)).collect();
        self.push(Op::LinearRoute(raw), value)
    }

    /// Reverse sweep from a scalar node. Gradients accumulate on every node
    /// reachable from `target`, including leaves.
    pub fn backward(&mut self, target: TensorRef) -> Result<(), TapeError> {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.value.data.iter().any(|v| !v.is_finite()) {
                return Err(TapeError::NonFinite { node: i, op: node.op.name() });
            }
        }
        assert_eq!(self.nodes[target.0].value.len(), 1, "backward target must be scalar");
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[target.0] = Some(vec![1.0]);

        for i in (0..=target.0.min(n - 1)).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            // reborrow pattern: compute contributions, then write back
            macro_rules! acc {
                ($j:expr, $contrib:expr) => {{
                    let j: usize = $j;
                    let contrib: Vec<f64> = $contrib;
                    let slot = &mut self.grads[j];
                    match slot {
                        Some(g) => {
                            for (a, b) in g.iter_mut().zip(&contrib) {
                                *a += b;
                            }
                        }
                        None => *slot = Some(contrib),
                    }
                }};
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    let (m, k, nn) = (av.rows, av.cols, bv.cols);
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for ii in 0..m {
                        for jj in 0..nn {
                            let g = gout[ii * nn + jj];
                            if g == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                da[ii * k + kk] += g * bv.data[kk * nn + jj];
                            }
                        }
                    }
                    // dB = A^T G
                    let mut db = vec![0.0; k * nn];
                    for ii in 0..m {
                        for kk in 0..k {
                            let a_ik = av.data[ii * k + kk];
                            if a_ik == 0.0 {
                                continue;
                            }
                            for jj in 0..nn {
                                db[kk * nn + jj] += a_ik * gout[ii * nn + jj];
                            }
                        }
                    }
                    acc!(a, da);
                    acc!(b, db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc!(a, gout.clone());
                    acc!(b, gout.clone());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    acc!(a, gout.clone());
                    acc!(b, gout.iter().map(|g| -g).collect());
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a].value.data.clone();
                    let bv = self.nodes[b].value.data.clone();
                    acc!(a, gout.iter().zip(&bv).map(|(g, y)| g * y).collect());
                    acc!(b, gout.iter().zip(&av).map(|(g, x)| g * x).collect());
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let av = &self.nodes[a].value;
                    let (m, c) = (av.rows, av.cols);
                    let mut drow = vec![0.0; c];
                    for ii in 0..m {
                        for jj in 0..c {
                            drow[jj] += gout[ii * c + jj];
                        }
                    }
                    acc!(a, gout.clone());
                    acc!(row, drow);
                }
                Op::AddConst(a) => {
                    let a = *a;
                    acc!(a, gout.clone());
                }
                Op::Scale(a, s) => {
                    let (a, s) = (*a, *s);
                    acc!(a, gout.iter().map(|g| g * s).collect());
                }
                Op::AddScalar(a) => {
                    let a = *a;
                    acc!(a, gout.clone());
                }
                Op::Silu(a) => {
                    let a = *a;
                    let av = self.nodes[a].value.data.clone();
                    acc!(
                        a,
                        gout.iter()
                            .zip(&av)
                            .map(|(g, &x)| {
                                let s = sigmoid(x);
                                g * (s + x * s * (1.0 - s))
                            })
                            .collect()
                    );
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let yv = self.nodes[i].value.data.clone();
                    acc!(a, gout.iter().zip(&yv).map(|(g, y)| g * (1.0 - y * y)).collect());
                }
                Op::Exp(a) => {
                    let a = *a;
                    let yv = self.nodes[i].value.data.clone();
                    acc!(a, gout.iter().zip(&yv).map(|(g, y)| g * y).collect());
                }
                Op::Log(a) => {
                    let a = *a;
                    let xv = self.nodes[a].value.data.clone();
                    acc!(a, gout.iter().zip(&xv).map(|(g, x)| g / x).collect());
                }
                Op::Square(a) => {
                    let a = *a;
                    let xv = self.nodes[a].value.data.clone();
                    acc!(a, gout.iter().zip(&xv).map(|(g, x)| 2.0 * g * x).collect());
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let xv = self.nodes[a].value.data.clone();
                    acc!(
                        a,
                        gout.iter()
                            .zip(&xv)
                            .map(|(g, &x)| if x > lo && x < hi { *g } else { 0.0 })
                            .collect()
                    );
                }
                Op::SoftmaxRow(a) => {
                    let a = *a;
                    let yv = &self.nodes[i].value;
                    let (m, c) = (yv.rows, yv.cols);
                    let mut dx = vec![0.0; m * c];
                    for ii in 0..m {
                        let yrow = &yv.data[ii * c..(ii + 1) * c];
                        let grow = &gout[ii * c..(ii + 1) * c];
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for jj in 0..c {
                            dx[ii * c + jj] = yrow[jj] * (grow[jj] - dot);
                        }
                    }
                    acc!(a, dx);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let len = self.nodes[a].value.len();
                    acc!(a, vec![gout[0]; len]);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let len = self.nodes[a].value.len();
                    acc!(a, vec![gout[0] / len as f64; len]);
                }
                Op::MeanRows(a) => {
                    let a = *a;
                    let v = &self.nodes[a].value;
                    let (m, c) = (v.rows, v.cols);
                    let mut dx = vec![0.0; m * c];
                    for ii in 0..m {
                        for jj in 0..c {
                            dx[ii * c + jj] = gout[jj] / m as f64;
                        }
                    }
                    acc!(a, dx);
                }
                Op::ConcatCols(parts) | Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p].value.len();
                        acc!(p, gout[off..off + len].to_vec());
                        off += len;
                    }
                }
                Op::Reshape(a) => {
                    let a = *a;
                    acc!(a, gout.clone());
                }
                Op::Entry(a, r, c) => {
                    let (a, r, c) = (*a, *r, *c);
                    let v = &self.nodes[a].value;
                    let mut dx = vec![0.0; v.len()];
                    dx[r * v.cols + c] = gout[0];
                    acc!(a, dx);
                }
                Op::LinearRoute(routes) => {
                    let routes = routes.clone();
                    for (tgt, ti, si, s) in routes {
                        let len = self.nodes[tgt].value.len();
                        let mut dx = vec![0.0; len];
                        dx[ti] = gout[si] * s;
                        acc!(tgt, dx);
                    }
                }
            }
            self.grads[i] = Some(gout);
        }
        Ok(())
    }
}
