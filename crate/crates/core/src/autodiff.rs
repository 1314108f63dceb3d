//! Minimal tape-based reverse-mode automatic differentiation over `f64`
//! matrices.
//!
//! The context-aware matcher needs exact gradients of a scalar loss with
//! respect to every network tensor. Rather than hand-deriving the backward
//! pass through attention, Sinkhorn iterations, and the loss, the forward
//! pass is recorded on a [`Tape`] of matrix ops, each with a known
//! vector-Jacobian product. [`Tape::backward`] then walks the tape in reverse
//! and accumulates gradients.
//!
//! The op set is deliberately small: just what the matcher's forward pass
//! uses. Reductions that are numerically delicate (log-sum-exp, softmax) are
//! primitives with max-shifted implementations rather than compositions.

use nalgebra::DMatrix;

/// Dense matrix alias used throughout the autodiff and matcher code.
pub type Mat = DMatrix<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a (n×m) + bias (1×m)` broadcast down rows.
    AddRowBroadcast(Var, Var),
    /// `a (n×m) − col (n×1)` broadcast across columns.
    SubColBroadcast(Var, Var),
    /// `a (n×m) − row (1×m)` broadcast down rows.
    SubRowBroadcast(Var, Var),
    Hadamard(Var, Var),
    HadamardConst(Var, Mat),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    SoftmaxRows(Var),
    /// Row-wise log-sum-exp, `n×m → n×1`.
    LseRows(Var),
    /// Column-wise log-sum-exp, `n×m → 1×m`.
    LseCols(Var),
    Transpose(Var),
    SumAll(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Pairwise bias: `q (n×d), r (n·n×d) → b (n×n)`, `b[i,j] = q[i]·r[i·n+j]`.
    PairBias(Var, Var),
}

struct Node {
    value: Mat,
    op: Op,
    /// Whether any parameter leaf feeds this node.
    active: bool,
}

/// Recording tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero matrices are materialized lazily,
    /// so inactive nodes return `None`.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
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
    // ln(1 + e^x), stable for large |x|.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let active = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].active),
        };
        self.nodes.push(Node { value, op, active });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::SubColBroadcast(a, b)
            | Op::SubRowBroadcast(a, b)
            | Op::Hadamard(a, b)
            | Op::PairBias(a, b) => vec![*a, *b],
            Op::HadamardConst(a, _)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::SoftmaxRows(a)
            | Op::LseRows(a)
            | Op::LseCols(a)
            | Op::Transpose(a)
            | Op::SumAll(a)
            | Op::SliceRows(a, _, _)
            | Op::SliceCols(a, _, _) => vec![*a],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
        }
    }

    /// Parameter leaf (participates in gradients).
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf { requires_grad: true })
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(
            value,
            Op::Leaf {
                requires_grad: false,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    /// `a + bias` with `bias` a `1×m` row broadcast over all rows of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let (n, m) = self.value(a).shape();
        debug_assert_eq!(self.value(bias).shape(), (1, m));
        let mut value = self.value(a).clone();
        for i in 0..n {
            for j in 0..m {
                value[(i, j)] += self.value(bias)[(0, j)];
            }
        }
        self.push(value, Op::AddRowBroadcast(a, bias))
    }

    /// `a − col` with `col` an `n×1` column broadcast across all columns.
    pub fn sub_col_broadcast(&mut self, a: Var, col: Var) -> Var {
        let (n, m) = self.value(a).shape();
        debug_assert_eq!(self.value(col).shape(), (n, 1));
        let mut value = self.value(a).clone();
        for i in 0..n {
            for j in 0..m {
                value[(i, j)] -= self.value(col)[(i, 0)];
            }
        }
        self.push(value, Op::SubColBroadcast(a, col))
    }

    /// `a − row` with `row` a `1×m` row broadcast down all rows.
    pub fn sub_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let (n, m) = self.value(a).shape();
        debug_assert_eq!(self.value(row).shape(), (1, m));
        let mut value = self.value(a).clone();
        for i in 0..n {
            for j in 0..m {
                value[(i, j)] -= self.value(row)[(0, j)];
            }
        }
        self.push(value, Op::SubRowBroadcast(a, row))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).shape(), self.value(b).shape());
        let value = self.value(a).component_mul(self.value(b));
        self.push(value, Op::Hadamard(a, b))
    }

    /// Elementwise product with a constant matrix (e.g. a selection mask).
    pub fn hadamard_const(&mut self, a: Var, k: Mat) -> Var {
        debug_assert_eq!(self.value(a).shape(), k.shape());
        let value = self.value(a).component_mul(&k);
        self.push(value, Op::HadamardConst(a, k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        self.push(value, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn lse_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (n, _) = m.shape();
        let mut out = Mat::zeros(n, 1);
        for i in 0..n {
            out[(i, 0)] = lse_iter(m.row(i).iter().copied());
        }
        self.push(out, Op::LseRows(a))
    }

    pub fn lse_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (_, c) = m.shape();
        let mut out = Mat::zeros(1, c);
        for j in 0..c {
            out[(0, j)] = lse_iter(m.column(j).iter().copied());
        }
        self.push(out, Op::LseCols(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum::<f64>();
        self.push(Mat::from_element(1, 1, s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).ncols();
        let total: usize = parts.iter().map(|v| self.value(*v).nrows()).sum();
        let mut out = Mat::zeros(total, cols);
        let mut at = 0;
        for v in parts {
            let m = self.value(*v);
            debug_assert_eq!(m.ncols(), cols);
            out.rows_mut(at, m.nrows()).copy_from(m);
            at += m.nrows();
        }
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).rows(start, len).into_owned();
        self.push(value, Op::SliceRows(a, start, len))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|v| self.value(*v).ncols()).sum();
        let mut out = Mat::zeros(rows, total);
        let mut at = 0;
        for v in parts {
            let m = self.value(*v);
            debug_assert_eq!(m.nrows(), rows);
            out.columns_mut(at, m.ncols()).copy_from(m);
            at += m.ncols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).columns(start, len).into_owned();
        self.push(value, Op::SliceCols(a, start, len))
    }

    /// Pairwise bias `b[i,j] = q[i,:] · r[i·n + j,:]` where `q` is `n×d` and
    /// `r` stacks the `n·n` pair encodings row-major by `(i, j)`.
    pub fn pair_bias(&mut self, q: Var, r: Var) -> Var {
        let qm = self.value(q);
        let rm = self.value(r);
        let (n, d) = qm.shape();
        debug_assert_eq!(rm.shape(), (n * n, d));
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += qm[(i, k)] * rm[(i * n + j, k)];
                }
                out[(i, j)] = s;
            }
        }
        self.push(out, Op::PairBias(q, r))
    }

    /// Reverse pass from a `1×1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Mat::from_element(1, 1, 1.0));
        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.active {
                continue;
            }
            self.accumulate(&node.op, idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Gradients { grads }
    }

    fn accumulate(&self, op: &Op, idx: usize, gout: &Mat, grads: &mut Vec<Option<Mat>>) {
        let add_grad = |grads: &mut Vec<Option<Mat>>, v: Var, g: Mat| {
            if !self.nodes[v.0].active {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += g,
                slot @ None => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let ga = gout * self.value(*b).transpose();
                let gb = self.value(*a).transpose() * gout;
                add_grad(grads, *a, ga);
                add_grad(grads, *b, gb);
            }
            Op::Add(a, b) => {
                add_grad(grads, *a, gout.clone());
                add_grad(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                add_grad(grads, *a, gout.clone());
                add_grad(grads, *b, -gout);
            }
            Op::AddRowBroadcast(a, bias) => {
                add_grad(grads, *a, gout.clone());
                let mut gb = Mat::zeros(1, gout.ncols());
                for j in 0..gout.ncols() {
                    gb[(0, j)] = gout.column(j).iter().sum();
                }
                add_grad(grads, *bias, gb);
            }
            Op::SubColBroadcast(a, col) => {
                add_grad(grads, *a, gout.clone());
                let mut gc = Mat::zeros(gout.nrows(), 1);
                for i in 0..gout.nrows() {
                    gc[(i, 0)] = -gout.row(i).iter().sum::<f64>();
                }
                add_grad(grads, *col, gc);
            }
            Op::SubRowBroadcast(a, row) => {
                add_grad(grads, *a, gout.clone());
                let mut gr = Mat::zeros(1, gout.ncols());
                for j in 0..gout.ncols() {
                    gr[(0, j)] = -gout.column(j).iter().sum::<f64>();
                }
                add_grad(grads, *row, gr);
            }
            Op::Hadamard(a, b) => {
                add_grad(grads, *a, gout.component_mul(self.value(*b)));
                add_grad(grads, *b, gout.component_mul(self.value(*a)));
            }
            Op::HadamardConst(a, k) => {
                add_grad(grads, *a, gout.component_mul(k));
            }
            Op::Scale(a, k) => add_grad(grads, *a, gout * *k),
            Op::AddScalar(a) => add_grad(grads, *a, gout.clone()),
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                add_grad(grads, *a, gout.component_mul(&mask));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let dy = y.map(|s| s * (1.0 - s));
                add_grad(grads, *a, gout.component_mul(&dy));
            }
            Op::Softplus(a) => {
                let ds = self.value(*a).map(sigmoid);
                add_grad(grads, *a, gout.component_mul(&ds));
            }
            Op::Exp(a) => {
                add_grad(grads, *a, gout.component_mul(&self.nodes[idx].value));
            }
            Op::Ln(a) => {
                let inv = self.value(*a).map(|x| 1.0 / x);
                add_grad(grads, *a, gout.component_mul(&inv));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Mat::zeros(y.nrows(), y.ncols());
                for i in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|j| gout[(i, j)] * y[(i, j)]).sum();
                    for j in 0..y.ncols() {
                        ga[(i, j)] = y[(i, j)] * (gout[(i, j)] - dot);
                    }
                }
                add_grad(grads, *a, ga);
            }
            Op::LseRows(a) => {
                let x = self.value(*a);
                let l = &self.nodes[idx].value;
                let mut ga = Mat::zeros(x.nrows(), x.ncols());
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        ga[(i, j)] = gout[(i, 0)] * (x[(i, j)] - l[(i, 0)]).exp();
                    }
                }
                add_grad(grads, *a, ga);
            }
            Op::LseCols(a) => {
                let x = self.value(*a);
                let l = &self.nodes[idx].value;
                let mut ga = Mat::zeros(x.nrows(), x.ncols());
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        ga[(i, j)] = gout[(0, j)] * (x[(i, j)] - l[(0, j)]).exp();
                    }
                }
                add_grad(grads, *a, ga);
            }
            Op::Transpose(a) => add_grad(grads, *a, gout.transpose()),
            Op::SumAll(a) => {
                let (n, m) = self.value(*a).shape();
                add_grad(grads, *a, Mat::from_element(n, m, gout[(0, 0)]));
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for v in parts {
                    let rows = self.value(*v).nrows();
                    add_grad(grads, *v, gout.rows(at, rows).into_owned());
                    at += rows;
                }
            }
            Op::SliceRows(a, start, len) => {
                let (n, m) = self.value(*a).shape();
                let mut ga = Mat::zeros(n, m);
                ga.rows_mut(*start, *len).copy_from(gout);
                add_grad(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for v in parts {
                    let cols = self.value(*v).ncols();
                    add_grad(grads, *v, gout.columns(at, cols).into_owned());
                    at += cols;
                }
            }
            Op::SliceCols(a, start, len) => {
                let (n, m) = self.value(*a).shape();
                let mut ga = Mat::zeros(n, m);
                ga.columns_mut(*start, *len).copy_from(gout);
                add_grad(grads, *a, ga);
            }
            Op::PairBias(q, r) => {
                let qm = self.value(*q);
                let rm = self.value(*r);
                let (n, d) = qm.shape();
                let mut gq = Mat::zeros(n, d);
                let mut gr = Mat::zeros(n * n, d);
                for i in 0..n {
                    for j in 0..n {
                        let g = gout[(i, j)];
                        if g == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            gq[(i, k)] += g * rm[(i * n + j, k)];
                            gr[(i * n + j, k)] += g * qm[(i, k)];
                        }
                    }
                }
                add_grad(grads, *q, gq);
                add_grad(grads, *r, gr);
            }
        }
    }
}

fn lse_iter(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Plain (non-recorded) row softmax, shared with inference-path code.
pub fn softmax_rows_value(m: &Mat) -> Mat {
    let (n, c) = m.shape();
    let mut out = Mat::zeros(n, c);
    for i in 0..n {
        let max = m.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (m[(i, j)] - max).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for j in 0..c {
            out[(i, j)] /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite-difference check of a scalar function of one matrix.
    fn check_grad<F>(build: F, input: Mat, tol: f64)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let y = build(&mut tape, x);
        assert_eq!(tape.value(y).shape(), (1, 1));
        let grads = tape.backward(y);
        let analytic = grads.wrt(x).expect("no gradient").clone();

        let h = 1e-6;
        for i in 0..input.nrows() {
            for j in 0..input.ncols() {
                let mut plus = input.clone();
                plus[(i, j)] += h;
                let mut minus = input.clone();
                minus[(i, j)] -= h;
                let eval = |m: Mat| {
                    let mut t = Tape::new();
                    let v = t.param(m);
                    let out = build(&mut t, v);
                    t.value(out)[(0, 0)]
                };
                let fd = (eval(plus) - eval(minus)) / (2.0 * h);
                let a = analytic[(i, j)];
                let denom = a.abs().max(fd.abs()).max(1e-4);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "grad mismatch at ({i},{j}): analytic {a}, fd {fd}"
                );
            }
        }
    }

    fn random_mat(rng: &mut impl Rng, n: usize, m: usize) -> Mat {
        Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_chain_gradient() {
        let mut rng = crate::seeds::rng(1);
        let w = random_mat(&mut rng, 4, 3);
        check_grad(
            move |t, x| {
                let wv = t.constant(w.clone());
                let y = t.matmul(x, wv);
                let y = t.relu(y);
                t.sum_all(y)
            },
            random_mat(&mut rng, 5, 4),
            1e-5,
        );
    }

    #[test]
    fn softmax_lse_gradients() {
        let mut rng = crate::seeds::rng(2);
        check_grad(
            |t, x| {
                let s = t.softmax_rows(x);
                let s2 = t.hadamard(s, s);
                t.sum_all(s2)
            },
            random_mat(&mut rng, 4, 6),
            1e-5,
        );
        check_grad(
            |t, x| {
                let l = t.lse_rows(x);
                let l2 = t.hadamard(l, l);
                t.sum_all(l2)
            },
            random_mat(&mut rng, 5, 3),
            1e-5,
        );
        check_grad(
            |t, x| {
                let l = t.lse_cols(x);
                let e = t.exp(l);
                t.sum_all(e)
            },
            random_mat(&mut rng, 3, 5),
            1e-5,
        );
    }

    #[test]
    fn broadcast_gradients() {
        let mut rng = crate::seeds::rng(3);
        let a = random_mat(&mut rng, 4, 3);
        check_grad(
            move |t, bias| {
                let av = t.constant(a.clone());
                let y = t.add_row_broadcast(av, bias);
                let y = t.sigmoid(y);
                t.sum_all(y)
            },
            random_mat(&mut rng, 1, 3),
            1e-5,
        );
        check_grad(
            |t, x| {
                let l = t.lse_rows(x);
                let y = t.sub_col_broadcast(x, l);
                let e = t.exp(y);
                let e2 = t.hadamard(e, e);
                t.sum_all(e2)
            },
            random_mat(&mut rng, 4, 4),
            1e-5,
        );
        check_grad(
            |t, x| {
                let l = t.lse_cols(x);
                let y = t.sub_row_broadcast(x, l);
                let e = t.exp(y);
                let e2 = t.hadamard(e, e);
                t.sum_all(e2)
            },
            random_mat(&mut rng, 4, 4),
            1e-5,
        );
    }

    #[test]
    fn concat_slice_gradients() {
        let mut rng = crate::seeds::rng(4);
        check_grad(
            |t, x| {
                let a = t.slice_rows(x, 0, 2);
                let b = t.slice_rows(x, 2, 3);
                let c = t.concat_rows(&[b, a]);
                let c2 = t.hadamard(c, c);
                t.sum_all(c2)
            },
            random_mat(&mut rng, 5, 3),
            1e-5,
        );
        check_grad(
            |t, x| {
                let a = t.slice_cols(x, 0, 2);
                let b = t.slice_cols(x, 2, 2);
                let c = t.concat_cols(&[b, a]);
                let ct = t.transpose(c);
                let prod = t.matmul(c, ct);
                t.sum_all(prod)
            },
            random_mat(&mut rng, 3, 4),
            1e-5,
        );
    }

    #[test]
    fn scalar_ops_gradients() {
        let mut rng = crate::seeds::rng(5);
        check_grad(
            |t, x| {
                let y = t.scale(x, 2.5);
                let y = t.add_scalar(y, 0.75);
                let y = t.softplus(y);
                let y = t.ln(y);
                t.mean_all(y)
            },
            random_mat(&mut rng, 3, 3),
            1e-5,
        );
    }

    #[test]
    fn pair_bias_gradient() {
        let mut rng = crate::seeds::rng(6);
        let n = 3;
        let d = 4;
        let r = random_mat(&mut rng, n * n, d);
        check_grad(
            move |t, q| {
                let rv = t.constant(r.clone());
                let b = t.pair_bias(q, rv);
                let s = t.softmax_rows(b);
                let s2 = t.hadamard(s, s);
                t.sum_all(s2)
            },
            random_mat(&mut rng, n, d),
            1e-5,
        );
        let q = random_mat(&mut rng, n, d);
        check_grad(
            move |t, r| {
                let qv = t.constant(q.clone());
                let b = t.pair_bias(qv, r);
                let e = t.exp(b);
                t.sum_all(e)
            },
            random_mat(&mut rng, n * n, d),
            1e-5,
        );
    }

    #[test]
    fn inactive_subgraphs_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Mat::from_element(2, 2, 3.0));
        let p = tape.param(Mat::from_element(2, 2, 1.0));
        let y = tape.hadamard(c, p);
        let s = tape.sum_all(y);
        let grads = tape.backward(s);
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(p).unwrap()[(0, 0)], 3.0);
    }
}
