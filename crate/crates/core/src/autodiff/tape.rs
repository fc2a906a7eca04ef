use std::sync::Arc;

use super::matrix::matmul_into;
use super::Matrix;

/// Smallest divisor used by the row and column normalizations.
const NORM_FLOOR: f64 = 1e-300;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Undirected adjacency for gated mean aggregation.
///
/// Each node averages itself (weight 1) with its gated neighbours:
/// `out_u = (h_u + sum_e g_e h_v) / (deg_u + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    inv_norm: Vec<f64>,
}

impl MessageGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> MessageGraph {
        let mut deg = vec![0usize; n];
        for &(a, b) in &edges {
            assert!(a < n && b < n, "edge ({a}, {b}) out of range for {n} nodes");
            deg[a] += 1;
            deg[b] += 1;
        }
        let inv_norm = deg.iter().map(|&d| 1.0 / (d as f64 + 1.0)).collect();
        MessageGraph { n, edges, inv_norm }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Exp(Var),
    Neg(Var),
    Relu(Var),
    ClampMax(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    LogSumExpRows(Var),
    LogSumExpCols(Var),
    AddRowBroadcast(Var, Var),
    SubRowBroadcast(Var, Var),
    SubColBroadcast(Var, Var),
    NormalizeRows(Var, Vec<f64>),
    NormalizeCols(Var, Vec<f64>),
    Frobenius(Var),
    Sum(Var),
    PadMin { input: Var, argmin: usize },
    Crop(Var),
    GatedAggregate { h: Var, gate: Var, graph: Arc<MessageGraph> },
    ScalarMlp { x: Var, w1: Var, b1: Var, w2: Var, b2: Var },
}

struct Node {
    value: Matrix,
    shape: (usize, usize),
    requires_grad: bool,
    is_param: bool,
    op: Op,
}

/// Records a computation for a single reverse pass.
///
/// Operations panic on shape mismatch. An operation none of whose inputs
/// requires a gradient is evaluated eagerly and stored as a constant.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn same_shape(op: &str, a: &Matrix, b: &Matrix) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_node(value, true, true, Op::Leaf)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_node(value, false, false, Op::Leaf)
    }

    fn push_node(&mut self, value: Matrix, requires_grad: bool, is_param: bool, op: Op) -> Var {
        let shape = value.shape();
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            is_param,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_node(value, requires_grad, false, op)
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).matmul(self.val(b)).expect("matmul");
        self.push(value, &[a, b], Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.val(a).transpose();
        self.push(value, &[a], Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape("add", self.val(a), self.val(b));
        let value = self.val(a).zip_map(self.val(b), |x, y| x + y);
        self.push(value, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape("sub", self.val(a), self.val(b));
        let value = self.val(a).zip_map(self.val(b), |x, y| x - y);
        self.push(value, &[a, b], Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        same_shape("hadamard", self.val(a), self.val(b));
        let value = self.val(a).zip_map(self.val(b), |x, y| x * y);
        self.push(value, &[a, b], Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.val(a).map(|x| x * k);
        self.push(value, &[a], Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.val(a).map(|x| x + k);
        self.push(value, &[a], Op::AddScalar(a))
    }

    /// Multiplies every entry of `a` by the 1x1 value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.val(s).item();
        let value = self.val(a).map(|x| x * k);
        self.push(value, &[a, s], Op::ScaleBy(a, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.val(a).map(f64::exp);
        self.push(value, &[a], Op::Exp(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| -x);
        self.push(value, &[a], Op::Neg(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| x.max(0.0));
        self.push(value, &[a], Op::Relu(a))
    }

    /// `min(a, hi)` entrywise; the gradient is zero where the bound is active.
    pub fn clamp_max(&mut self, a: Var, hi: f64) -> Var {
        let value = self.val(a).map(|x| x.min(hi));
        self.push(value, &[a], Op::ClampMax(a, hi))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).map(sigmoid);
        self.push(value, &[a], Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.val(a).map(softplus);
        self.push(value, &[a], Op::Softplus(a))
    }

    /// Per-row log-sum-exp, an `n x 1` column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let data = (0..m.rows()).map(|r| logsumexp(m.row(r).iter().copied())).collect();
        let value = Matrix::from_vec(m.rows(), 1, data).expect("column");
        self.push(value, &[a], Op::LogSumExpRows(a))
    }

    /// Per-column log-sum-exp, a `1 x m` row.
    pub fn logsumexp_cols(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let (rows, cols) = m.shape();
        let data = (0..cols)
            .map(|c| logsumexp((0..rows).map(move |r| m.data()[r * cols + c])))
            .collect();
        let value = Matrix::from_vec(1, cols, data).expect("row");
        self.push(value, &[a], Op::LogSumExpCols(a))
    }

    /// `a + row` with the `1 x m` row added to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let value = self.broadcast_row(a, row, 1.0, "add_row_broadcast");
        self.push(value, &[a, row], Op::AddRowBroadcast(a, row))
    }

    /// `a - row` with the `1 x m` row subtracted from every row of `a`.
    pub fn sub_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let value = self.broadcast_row(a, row, -1.0, "sub_row_broadcast");
        self.push(value, &[a, row], Op::SubRowBroadcast(a, row))
    }

    fn broadcast_row(&self, a: Var, row: Var, sign: f64, op: &str) -> Matrix {
        let (m, r) = (self.val(a), self.val(row));
        assert_eq!(r.shape(), (1, m.cols()), "{op}: shape mismatch");
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (x, y) in out.row_mut(i).iter_mut().zip(r.data()) {
                *x += sign * y;
            }
        }
        out
    }

    /// `a - col` with the `n x 1` column subtracted from every column of `a`.
    pub fn sub_col_broadcast(&mut self, a: Var, col: Var) -> Var {
        let (m, c) = (self.val(a), self.val(col));
        assert_eq!(c.shape(), (m.rows(), 1), "sub_col_broadcast: shape mismatch");
        let mut out = m.clone();
        for i in 0..out.rows() {
            let y = c.data()[i];
            out.row_mut(i).iter_mut().for_each(|x| *x -= y);
        }
        self.push(out, &[a, col], Op::SubColBroadcast(a, col))
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let sums: Vec<f64> = m.row_sums().into_iter().map(|s| s.max(NORM_FLOOR)).collect();
        let mut out = m.clone();
        for (i, s) in sums.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        self.push(out, &[a], Op::NormalizeRows(a, sums))
    }

    /// Divides each column by its sum.
    pub fn normalize_cols(&mut self, a: Var) -> Var {
        let m = self.val(a);
        let sums: Vec<f64> = m.col_sums().into_iter().map(|s| s.max(NORM_FLOOR)).collect();
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(&sums) {
                *x /= s;
            }
        }
        self.push(out, &[a], Op::NormalizeCols(a, sums))
    }

    /// Frobenius norm as a 1x1 value.
    pub fn frobenius(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.val(a).frobenius_norm());
        self.push(value, &[a], Op::Frobenius(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.val(a).sum());
        self.push(value, &[a], Op::Sum(a))
    }

    /// Pads `a` to `n x n`, filling new entries with the minimum entry of
    /// `a`. The fill's gradient flows to the (first) minimal entry.
    pub fn pad_min(&mut self, a: Var, n: usize) -> Var {
        let m = self.val(a);
        let (rows, cols) = m.shape();
        assert!(rows <= n && cols <= n && rows * cols > 0, "pad_min: bad target size");
        let mut argmin = 0;
        for (i, &x) in m.data().iter().enumerate() {
            if x < m.data()[argmin] {
                argmin = i;
            }
        }
        let fill = m.data()[argmin];
        let out = Matrix::from_fn(n, n, |r, c| if r < rows && c < cols { m.get(r, c) } else { fill });
        self.push(out, &[a], Op::PadMin { input: a, argmin })
    }

    /// Top-left `rows x cols` block.
    pub fn crop(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.val(a).block(rows, cols);
        self.push(value, &[a], Op::Crop(a))
    }

    /// Gated mean aggregation over `graph`; `gate` is an `E x 1` column
    /// aligned with `graph.edges`.
    pub fn gated_aggregate(&mut self, h: Var, gate: Var, graph: &Arc<MessageGraph>) -> Var {
        let (hv, gv) = (self.val(h), self.val(gate));
        assert_eq!(hv.rows(), graph.n, "gated_aggregate: node count");
        assert_eq!(gv.shape(), (graph.edges.len(), 1), "gated_aggregate: gate shape");
        let mut out = hv.clone();
        for (e, &(a, b)) in graph.edges.iter().enumerate() {
            let g = gv.data()[e];
            for c in 0..hv.cols() {
                let (ha, hb) = (hv.get(a, c), hv.get(b, c));
                out.data_mut()[a * hv.cols() + c] += g * hb;
                out.data_mut()[b * hv.cols() + c] += g * ha;
            }
        }
        for (u, w) in graph.inv_norm.iter().enumerate() {
            out.row_mut(u).iter_mut().for_each(|x| *x *= w);
        }
        let graph = Arc::clone(graph);
        self.push(out, &[h, gate], Op::GatedAggregate { h, gate, graph })
    }

    /// Applies the scalar MLP `x -> w2 . relu(w1 x + b1) + b2` to every entry
    /// of `x`. Shapes: `w1`, `b1` are `1 x H`, `w2` is `H x 1`, `b2` is `1 x 1`.
    pub fn scalar_mlp(&mut self, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
        let hidden = self.val(w1).cols();
        assert_eq!(self.val(w1).shape(), (1, hidden), "scalar_mlp: w1");
        assert_eq!(self.val(b1).shape(), (1, hidden), "scalar_mlp: b1");
        assert_eq!(self.val(w2).shape(), (hidden, 1), "scalar_mlp: w2");
        assert_eq!(self.val(b2).shape(), (1, 1), "scalar_mlp: b2");
        let (w1v, b1v, w2v) = (self.val(w1).data(), self.val(b1).data(), self.val(w2).data());
        let b2v = self.val(b2).item();
        let value = self.val(x).map(|t| {
            let mut y = b2v;
            for k in 0..hidden {
                let z = w1v[k] * t + b1v[k];
                if z > 0.0 {
                    y += w2v[k] * z;
                }
            }
            y
        });
        self.push(value, &[x, w1, b1, w2, b2], Op::ScalarMlp { x, w1, b1, w2, b2 })
    }

    /// Reverse pass from the 1x1 value `loss`, consuming the tape.
    pub fn backward(mut self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].shape, (1, 1), "backward needs a scalar loss");
        let n = self.nodes.len();
        let shapes: Vec<_> = self.nodes.iter().map(|node| node.shape).collect();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        let mut param_grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Matrix::scalar(1.0));
        }
        self.nodes.truncate(loss.0 + 1);
        while let Some(node) = self.nodes.pop() {
            let i = self.nodes.len();
            let Some(g) = grads[i].take() else { continue };
            if node.is_param {
                param_grads[i] = Some(g);
                continue;
            }
            self.backprop(node, g, &mut grads);
        }
        Gradients {
            grads: param_grads,
            shapes,
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, node: Node, g: Matrix, grads: &mut [Option<Matrix>]) {
        let out = node.value;
        let mut acc = |v: Var, m: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&m),
            slot => *slot = Some(m),
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    let bt = self.val(b).transpose();
                    acc(a, g.matmul(&bt).expect("matmul grad"));
                }
                if self.wants(b) {
                    let at = self.val(a).transpose();
                    let mut gb = Matrix::zeros(at.rows(), g.cols());
                    matmul_into(&at, &g, &mut gb);
                    acc(b, gb);
                }
            }
            Op::Transpose(a) => acc(a, g.transpose()),
            Op::Add(a, b) => {
                if self.wants(a) && self.wants(b) {
                    acc(a, g.clone());
                    acc(b, g);
                } else if self.wants(a) {
                    acc(a, g);
                } else {
                    acc(b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(b) {
                    acc(b, g.map(|x| -x));
                }
                if self.wants(a) {
                    acc(a, g);
                }
            }
            Op::Hadamard(a, b) => {
                if self.wants(a) {
                    acc(a, g.zip_map(self.val(b), |x, y| x * y));
                }
                if self.wants(b) {
                    acc(b, g.zip_map(self.val(a), |x, y| x * y));
                }
            }
            Op::Scale(a, k) => acc(a, g.map(|x| x * k)),
            Op::AddScalar(a) => acc(a, g),
            Op::ScaleBy(a, s) => {
                if self.wants(s) {
                    let d: f64 = g.data().iter().zip(self.val(a).data()).map(|(x, y)| x * y).sum();
                    acc(s, Matrix::scalar(d));
                }
                if self.wants(a) {
                    let k = self.val(s).item();
                    acc(a, g.map(|x| x * k));
                }
            }
            Op::Exp(a) => acc(a, g.zip_map(&out, |x, y| x * y)),
            Op::Neg(a) => acc(a, g.map(|x| -x)),
            Op::Relu(a) => acc(a, g.zip_map(self.val(a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::ClampMax(a, hi) => acc(a, g.zip_map(self.val(a), |x, y| if y < hi { x } else { 0.0 })),
            Op::Sigmoid(a) => acc(a, g.zip_map(&out, |x, y| x * y * (1.0 - y))),
            Op::Softplus(a) => acc(a, g.zip_map(self.val(a), |x, y| x * sigmoid(y))),
            Op::LogSumExpRows(a) => {
                let av = self.val(a);
                let ga = Matrix::from_fn(av.rows(), av.cols(), |r, c| {
                    g.data()[r] * (av.get(r, c) - out.data()[r]).exp()
                });
                acc(a, ga);
            }
            Op::LogSumExpCols(a) => {
                let av = self.val(a);
                let ga = Matrix::from_fn(av.rows(), av.cols(), |r, c| {
                    g.data()[c] * (av.get(r, c) - out.data()[c]).exp()
                });
                acc(a, ga);
            }
            Op::AddRowBroadcast(a, row) | Op::SubRowBroadcast(a, row) => {
                let sign = if matches!(node.op, Op::AddRowBroadcast(..)) { 1.0 } else { -1.0 };
                if self.wants(row) {
                    let sums = g.col_sums().into_iter().map(|s| sign * s).collect();
                    acc(row, Matrix::from_vec(1, g.cols(), sums).expect("row"));
                }
                if self.wants(a) {
                    acc(a, g);
                }
            }
            Op::SubColBroadcast(a, col) => {
                if self.wants(col) {
                    let sums = g.row_sums().into_iter().map(|s| -s).collect();
                    acc(col, Matrix::from_vec(g.rows(), 1, sums).expect("column"));
                }
                if self.wants(a) {
                    acc(a, g);
                }
            }
            Op::NormalizeRows(a, sums) => {
                // y = x / s  =>  dx_ij = (g_ij - <g_i, y_i>) / s_i
                let mut ga = g;
                for (r, s) in sums.iter().enumerate() {
                    let dot: f64 = ga.row(r).iter().zip(out.row(r)).map(|(x, y)| x * y).sum();
                    ga.row_mut(r).iter_mut().for_each(|x| *x = (*x - dot) / s);
                }
                acc(a, ga);
            }
            Op::NormalizeCols(a, sums) => {
                let mut dots = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for ((d, x), y) in dots.iter_mut().zip(g.row(r)).zip(out.row(r)) {
                        *d += x * y;
                    }
                }
                let mut ga = g;
                for r in 0..ga.rows() {
                    for ((x, d), s) in ga.row_mut(r).iter_mut().zip(&dots).zip(&sums) {
                        *x = (*x - d) / s;
                    }
                }
                acc(a, ga);
            }
            Op::Frobenius(a) => {
                let norm = out.item();
                let k = if norm > 0.0 { g.item() / norm } else { 0.0 };
                acc(a, self.val(a).map(|x| x * k));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(a);
                acc(a, Matrix::filled(r, c, g.item()));
            }
            Op::PadMin { input, argmin } => {
                let (rows, cols) = self.shape(input);
                let mut ga = g.block(rows, cols);
                let mut spill = 0.0;
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        if r >= rows || c >= cols {
                            spill += g.get(r, c);
                        }
                    }
                }
                ga.data_mut()[argmin] += spill;
                acc(input, ga);
            }
            Op::Crop(a) => {
                let (rows, cols) = self.shape(a);
                let ga = Matrix::from_fn(rows, cols, |r, c| {
                    if r < g.rows() && c < g.cols() {
                        g.get(r, c)
                    } else {
                        0.0
                    }
                });
                acc(a, ga);
            }
            Op::GatedAggregate { h, gate, graph } => {
                let hv = self.val(h);
                let gv = self.val(gate);
                let width = hv.cols();
                // Upstream gradient scaled by each node's normalizer.
                let mut gs = g;
                for (u, w) in graph.inv_norm.iter().enumerate() {
                    gs.row_mut(u).iter_mut().for_each(|x| *x *= w);
                }
                if self.wants(gate) {
                    let mut ggate = Matrix::zeros(graph.edges.len(), 1);
                    for (e, &(a, b)) in graph.edges.iter().enumerate() {
                        let d: f64 = (0..width)
                            .map(|c| gs.get(a, c) * hv.get(b, c) + gs.get(b, c) * hv.get(a, c))
                            .sum();
                        ggate.data_mut()[e] = d;
                    }
                    acc(gate, ggate);
                }
                if self.wants(h) {
                    let mut gh = gs.clone();
                    for (e, &(a, b)) in graph.edges.iter().enumerate() {
                        let w = gv.data()[e];
                        for c in 0..width {
                            gh.data_mut()[b * width + c] += w * gs.get(a, c);
                            gh.data_mut()[a * width + c] += w * gs.get(b, c);
                        }
                    }
                    acc(h, gh);
                }
            }
            Op::ScalarMlp { x, w1, b1, w2, b2 } => {
                let xv = self.val(x);
                let (w1v, b1v, w2v) = (self.val(w1).data(), self.val(b1).data(), self.val(w2).data());
                let hidden = w1v.len();
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                let mut gw1 = vec![0.0; hidden];
                let mut gb1 = vec![0.0; hidden];
                let mut gw2 = vec![0.0; hidden];
                let mut gb2 = 0.0;
                for (i, (&t, &gi)) in xv.data().iter().zip(g.data()).enumerate() {
                    gb2 += gi;
                    let mut dx = 0.0;
                    for k in 0..hidden {
                        let z = w1v[k] * t + b1v[k];
                        if z > 0.0 {
                            gw2[k] += gi * z;
                            let gz = gi * w2v[k];
                            gw1[k] += gz * t;
                            gb1[k] += gz;
                            dx += gz * w1v[k];
                        }
                    }
                    gx.data_mut()[i] = dx;
                }
                if self.wants(x) {
                    acc(x, gx);
                }
                if self.wants(w1) {
                    acc(w1, Matrix::from_vec(1, hidden, gw1).expect("w1"));
                }
                if self.wants(b1) {
                    acc(b1, Matrix::from_vec(1, hidden, gb1).expect("b1"));
                }
                if self.wants(w2) {
                    acc(w2, Matrix::from_vec(hidden, 1, gw2).expect("w2"));
                }
                if self.wants(b2) {
                    acc(b2, Matrix::scalar(gb2));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
    }

    /// Compares analytic gradients of `f` with central differences.
    fn check<F>(inputs: Vec<Matrix>, f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let eval = |xs: &[Matrix]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
            let out = f(&mut t, &vars);
            t.value(out).item()
        };
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
        let out = f(&mut t, &vars);
        let grads = t.backward(out);
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]);
            for i in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - numeric).abs() / numeric.abs().max(a.abs()).max(1e-3);
                assert!(err < 1e-5, "input {k} entry {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    /// Random fixed weights so every op's gradient reaches a scalar non-trivially.
    fn weigh(t: &mut Tape, v: Var, seed: u64) -> Var {
        let (r, c) = t.shape(v);
        let w = random(&mut ChaCha8Rng::seed_from_u64(seed), r, c, -1.0, 1.0);
        let w = t.constant(w);
        let p = t.hadamard(v, w);
        t.sum(p)
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4, -2.0, 2.0);
        let b = random(&mut rng, 3, 4, -2.0, 2.0);
        check(vec![a, b], |t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let d = t.sub(d, v[0]);
            let h = t.hadamard(v[0], v[1]);
            let e = t.exp(h);
            let n = t.neg(e);
            let sg = t.sigmoid(v[0]);
            let sg = t.clamp_max(sg, 0.9);
            let sp = t.softplus(v[1]);
            let x = t.add(n, sg);
            let x = t.add(x, sp);
            let x = t.add(x, d);
            let x = t.scale(x, 0.7);
            let x = t.add_scalar(x, 3.0);
            weigh(t, x, 9)
        });
    }

    #[test]
    fn relu_away_from_kink() {
        let a = Matrix::from_rows(&[[-1.0, 0.5], [2.0, -0.25]]);
        check(vec![a], |t, v| {
            let r = t.relu(v[0]);
            weigh(t, r, 2)
        });
    }

    #[test]
    fn relu_derivative_is_zero_at_zero() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_rows(&[[0.0, 1.0]]));
        let r = t.relu(a);
        let s = t.sum(r);
        assert_eq!(t.backward(s).get(a).data(), &[0.0, 1.0]);
    }

    #[test]
    fn matmul_transpose_and_broadcasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 3, 2, -1.0, 1.0);
        let b = random(&mut rng, 4, 2, -1.0, 1.0);
        let row = random(&mut rng, 1, 4, -1.0, 1.0);
        let col = random(&mut rng, 3, 1, -1.0, 1.0);
        check(vec![a, b, row, col], |t, v| {
            let bt = t.transpose(v[1]);
            let m = t.matmul(v[0], bt);
            let m = t.add_row_broadcast(m, v[2]);
            let m = t.sub_row_broadcast(m, v[2]);
            let m = t.add_row_broadcast(m, v[2]);
            let m = t.sub_col_broadcast(m, v[3]);
            weigh(t, m, 3)
        });
    }

    #[test]
    fn scale_by_scalar_var() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 2, 3, -1.0, 1.0);
        check(vec![a, Matrix::scalar(0.3)], |t, v| {
            let one_minus = t.neg(v[1]);
            let one_minus = t.add_scalar(one_minus, 1.0);
            let x = t.scale_by(v[0], v[1]);
            let y = t.scale_by(v[0], one_minus);
            let y = t.exp(y);
            let z = t.add(x, y);
            weigh(t, z, 4)
        });
    }

    #[test]
    fn logsumexp_and_normalizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 3, 5, -1.0, 1.0);
        check(vec![a], |t, v| {
            let c = t.logsumexp_cols(v[0]);
            let x = t.sub_row_broadcast(v[0], c);
            let r = t.logsumexp_rows(x);
            let x = t.sub_col_broadcast(x, r);
            let e = t.exp(x);
            let e = t.normalize_cols(e);
            let e = t.normalize_rows(e);
            weigh(t, e, 5)
        });
    }

    #[test]
    fn norms_padding_and_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 2, 3, -1.0, 1.0);
        check(vec![a], |t, v| {
            let p = t.pad_min(v[0], 4);
            let p = t.exp(p);
            let p = t.normalize_rows(p);
            let c = t.crop(p, 2, 3);
            let f = t.frobenius(c);
            let w = weigh(t, p, 6);
            t.add(f, w)
        });
    }

    #[test]
    fn pad_fill_is_the_minimum() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_rows(&[[3.0, -1.0, 2.0]]));
        let p = t.pad_min(a, 3);
        assert_eq!(t.value(p).row(0), &[3.0, -1.0, 2.0]);
        assert_eq!(t.value(p).row(2), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn gated_aggregate_values_and_gradients() {
        let graph = Arc::new(MessageGraph::new(4, vec![(0, 1), (1, 2), (1, 3)]));
        let mut t = Tape::new();
        let h = t.constant(Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]));
        let g = t.constant(Matrix::from_rows(&[[1.0], [0.5], [0.0]]));
        let out = t.gated_aggregate(h, g, &graph);
        // node 1: (2 + 1*1 + 0.5*3 + 0*4) / 4
        assert_eq!(t.value(out).data(), &[1.5, 4.5 / 4.0, 2.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random(&mut rng, 4, 3, -1.0, 1.0);
        let gate = random(&mut rng, 3, 1, 0.1, 0.9);
        check(vec![h, gate], move |t, v| {
            let o = t.gated_aggregate(v[0], v[1], &graph);
            weigh(t, o, 7)
        });
    }

    #[test]
    fn scalar_mlp_matches_composed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 3, 4, 0.0, 1.0);
        let w1 = random(&mut rng, 1, 6, -1.0, 1.0);
        let b1 = random(&mut rng, 1, 6, -0.5, 0.5);
        let w2 = random(&mut rng, 6, 1, -1.0, 1.0);
        let b2 = Matrix::scalar(0.2);
        check(vec![x.clone(), w1.clone(), b1.clone(), w2.clone(), b2.clone()], |t, v| {
            let y = t.scalar_mlp(v[0], v[1], v[2], v[3], v[4]);
            weigh(t, y, 8)
        });

        let mut t = Tape::new();
        let fused = {
            let vars: Vec<Var> = [&x, &w1, &b1, &w2, &b2].iter().map(|m| t.constant((*m).clone())).collect();
            t.scalar_mlp(vars[0], vars[1], vars[2], vars[3], vars[4])
        };
        for r in 0..3 {
            for c in 0..4 {
                let s = x.get(r, c);
                let mut y = b2.item();
                for k in 0..6 {
                    y += w2.get(k, 0) * (w1.get(0, k) * s + b1.get(0, k)).max(0.0);
                }
                assert!((t.value(fused).get(r, c) - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn disconnected_params_get_zero_gradients() {
        let mut t = Tape::new();
        let a = t.param(Matrix::filled(2, 2, 1.0));
        let b = t.param(Matrix::filled(3, 1, 1.0));
        let s = t.sum(a);
        let grads = t.backward(s);
        assert_eq!(grads.get(b), Matrix::zeros(3, 1));
        assert_eq!(grads.get(a), Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn constant_ops_are_not_recorded() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::scalar(2.0));
        let b = t.exp(a);
        assert!(!t.nodes[b.0].requires_grad);
        assert!(matches!(t.nodes[b.0].op, Op::Leaf));
    }

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(3.0));
        let y = t.hadamard(x, x);
        assert_eq!(t.backward(y).get(x).item(), 6.0);
    }

    #[test]
    fn logsumexp_of_zero_row_is_ln3() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_rows(&[[0.0, 0.0, 0.0]]));
        let l = t.logsumexp_rows(a);
        assert!((t.value(l).item() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn frobenius_of_masked_matrix_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random(&mut rng, 3, 3, -1.0, 1.0);
        let s = random(&mut rng, 3, 3, 0.0, 1.0);
        let mut t = Tape::new();
        let av = t.constant(a.clone());
        let sv = t.param(s.clone());
        let p = t.hadamard(av, sv);
        let f = t.frobenius(p);
        let norm = t.value(f).item();
        let g = t.backward(f).get(sv);
        let expected = Matrix::from_fn(3, 3, |r, c| a.get(r, c) * a.get(r, c) * s.get(r, c) / norm);
        assert!(g.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(30);
            let mut t = Tape::new();
            let a = t.param(random(&mut rng, 5, 5, -1.0, 1.0));
            let e = t.exp(a);
            let n = t.normalize_rows(e);
            let f = t.frobenius(n);
            let v = t.value(f).item();
            (v, t.backward(f).get(a))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stable_activations() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
