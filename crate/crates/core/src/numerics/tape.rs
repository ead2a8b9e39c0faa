//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Each recorded node
//! is addressed by a [`Var`]. Calling [`Tape::backward`] on a scalar node
//! propagates adjoints back through the tape; [`Tape::param_grads`] then
//! collects the gradient of every bound parameter of a [`ParamStore`].
//!
//! Parameters are bound lazily: the first [`Tape::param`] call for a given id
//! creates one leaf, and every later call returns that same leaf. Shared
//! weights therefore accumulate their gradient contributions in one place.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::gaussian::ONE_MINUS_RHO2_FLOOR;
use super::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a learnable matrix in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named collection of learnable matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        assert!(
            value.is_finite(),
            "parameter initialized with non-finite values"
        );
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Flat index of every scalar: `(param, offset)`.
    pub fn scalar_index(&self) -> Vec<(ParamId, usize)> {
        self.ids()
            .flat_map(|id| (0..self.get(id).len()).map(move |k| (id, k)))
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `1 × c` row to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Multiplies every row elementwise by a `1 × c` row.
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    MaskedFill(Var, Vec<bool>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    /// Output row `i` is row `idx[i]` of the input, or zeros for `None`.
    SelectRows(Var, Vec<Option<usize>>),
    Sum(Var),
    CrossEntropySum(Var, Vec<usize>),
    BvnNllSum(Var, Matrix),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

/// Adjoints of the leaves reached by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (or input) leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to `id`; the same leaf is returned on every call.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.bound[id.0] = Some(v);
        v
    }

    /// Number of distinct parameters bound so far.
    pub fn bound_param_count(&self) -> usize {
        self.bound.iter().filter(|b| b.is_some()).count()
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.bound.get(id.0).copied().flatten().is_some()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows(), 1);
        assert_eq!(rm.cols(), am.cols(), "add_row width mismatch");
        let mut v = am.clone();
        for r in 0..v.rows() {
            for (o, b) in v.row_mut(r).iter_mut().zip(rm.as_slice()) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows(), 1);
        assert_eq!(rm.cols(), am.cols(), "mul_row width mismatch");
        let mut v = am.clone();
        for r in 0..v.rows() {
            for (o, b) in v.row_mut(r).iter_mut().zip(rm.as_slice()) {
                *o *= b;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row-wise shift-stabilized softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Replaces entries where `mask` is true with `fill`; those entries get no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(mask.len(), v.len(), "mask size mismatch");
        for (x, &m) in v.as_mut_slice().iter_mut().zip(mask) {
            if m {
                *x = fill;
            }
        }
        self.push(v, Op::MaskedFill(a, mask.to_vec()))
    }

    /// Row-wise layer normalization with `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        assert_eq!(self.value(gain).shape(), (1, cols));
        assert_eq!(self.value(bias).shape(), (1, cols));
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let out = Matrix::from_fn(rows, cols, |r, c| {
            normalized[(r, c)] * g[(0, c)] + b[(0, c)]
        });
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Gathers rows by index; `None` yields a zero row.
    pub fn select_rows(&mut self, a: Var, idx: &[Option<usize>]) -> Var {
        let m = self.value(a);
        let cols = m.cols();
        let mut out = Matrix::zeros(idx.len(), cols);
        for (i, src) in idx.iter().enumerate() {
            if let Some(s) = *src {
                out.row_mut(i).copy_from_slice(m.row(s));
            }
        }
        self.push(out, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let idx: Vec<Option<usize>> = idx.iter().map(|&i| Some(i)).collect();
        self.select_rows(a, &idx)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// `Σ_i −log softmax(logits_i)[target_i]` as a `1 × 1` node.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Var {
        let m = self.value(logits);
        assert_eq!(m.rows(), targets.len(), "one target per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = m.row(r);
            assert!(t < row.len(), "target class out of range");
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        self.push(
            Matrix::filled(1, 1, total),
            Op::CrossEntropySum(logits, targets.to_vec()),
        )
    }

    /// Bivariate-normal negative log-likelihood summed over rows.
    ///
    /// `raw` is `n × 5` = `(mx, my, log sx, log sy, atanh rho)`; `targets` is `n × 2`.
    pub fn bvn_nll_sum(&mut self, raw: Var, targets: &Matrix) -> Var {
        let m = self.value(raw);
        assert_eq!(m.cols(), 5);
        assert_eq!(targets.shape(), (m.rows(), 2));
        let mut total = 0.0;
        for r in 0..m.rows() {
            total += bvn_terms(m.row(r), targets.row(r)).0;
        }
        self.push(
            Matrix::filled(1, 1, total),
            Op::BvnNllSum(raw, targets.clone()),
        )
    }

    /// Propagates adjoints from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward from a non-scalar"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // interior adjoints are consumed; only leaves keep theirs
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ; d a = g b; d b = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let gr = column_sums(&g);
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, gr);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulRow(a, row) => {
                    let (am, rm) = (self.value(*a), self.value(*row));
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |r, c| g[(r, c)] * rm[(0, c)]);
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr[(0, c)] += g[(r, c)] * am[(r, c)];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            ga[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaskedFill(a, mask) => {
                    let mut ga = g;
                    for (x, &m) in ga.as_mut_slice().iter_mut().zip(mask) {
                        if m {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gm = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let n = cols as f64;
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut gg = Matrix::zeros(1, cols);
                    let gb = column_sums(&g);
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..cols).map(|c| g[(r, c)] * gm[(0, c)]).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat
                            .iter()
                            .zip(normalized.row(r))
                            .map(|(d, xh)| d * xh)
                            .sum();
                        for c in 0..cols {
                            let xh = normalized[(r, c)];
                            gx[(r, c)] = inv_std[r] / n * (n * dxhat[c] - sum_d - xh * sum_dx);
                            gg[(0, c)] += g[(r, c)] * xh;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, gg);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let gp = Matrix::from_fn(g.rows(), w, |r, c| g[(r, offset + c)]);
                        accumulate(&mut grads, p, gp);
                        offset += w;
                    }
                }
                Op::SelectRows(a, idx) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (i, s) in idx.iter().enumerate() {
                        if let Some(s) = *s {
                            for (o, v) in ga.row_mut(s).iter_mut().zip(g.row(i)) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::CrossEntropySum(logits, targets) => {
                    let up = g[(0, 0)];
                    let m = self.value(*logits);
                    let mut gl = Matrix::zeros(m.rows(), m.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let mut p = m.row(r).to_vec();
                        softmax_in_place(&mut p);
                        for c in 0..m.cols() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[(r, c)] = up * (p[c] - onehot);
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::BvnNllSum(raw, targets) => {
                    let up = g[(0, 0)];
                    let m = self.value(*raw);
                    let mut gr = Matrix::zeros(m.rows(), 5);
                    for r in 0..m.rows() {
                        let (_, d) = bvn_terms(m.row(r), targets.row(r));
                        for c in 0..5 {
                            gr[(r, c)] = up * d[c];
                        }
                    }
                    accumulate(&mut grads, *raw, gr);
                }
            }
        }
        Gradients { grads }
    }

    /// Gradient for every parameter in `store` (zeros for unbound ones).
    pub fn param_grads(&self, store: &ParamStore, grads: &Gradients) -> Vec<Matrix> {
        store
            .ids()
            .map(|id| {
                let shape = store.get(id).shape();
                self.bound
                    .get(id.0)
                    .copied()
                    .flatten()
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// NLL of one target under raw head outputs, and its gradient wrt the raw 5-vector.
fn bvn_terms(raw: &[f64], target: &[f64]) -> (f64, [f64; 5]) {
    let (mx, my, lsx, lsy, t) = (raw[0], raw[1], raw[2], raw[3], raw[4]);
    let (sx, sy, rho) = (lsx.exp(), lsy.exp(), t.tanh());
    let zx = (target[0] - mx) / sx;
    let zy = (target[1] - my) / sy;
    let raw_om = 1.0 - rho * rho;
    let clamped = raw_om < ONE_MINUS_RHO2_FLOOR;
    let om = if clamped {
        ONE_MINUS_RHO2_FLOOR
    } else {
        raw_om
    };
    let num = zx * zx - 2.0 * rho * zx * zy + zy * zy;
    let q = num / om;
    let nll = (2.0 * PI).ln() + lsx + lsy + 0.5 * om.ln() + 0.5 * q;

    let dq_dzx = (2.0 * zx - 2.0 * rho * zy) / om;
    let dq_dzy = (2.0 * zy - 2.0 * rho * zx) / om;
    let d_mx = 0.5 * dq_dzx * (-1.0 / sx);
    let d_my = 0.5 * dq_dzy * (-1.0 / sy);
    let d_lsx = 1.0 + 0.5 * dq_dzx * (-zx);
    let d_lsy = 1.0 + 0.5 * dq_dzy * (-zy);
    let d_rho = if clamped {
        0.5 * (-2.0 * zx * zy) / om
    } else {
        -rho / om + 0.5 * ((-2.0 * zx * zy) / om + 2.0 * rho * num / (om * om))
    };
    let d_t = d_rho * (1.0 - rho * rho);
    (nll, [d_mx, d_my, d_lsx, d_lsy, d_t])
}
