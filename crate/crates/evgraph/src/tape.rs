//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records tensor operations as they execute; [`Tape::backward`]
//! replays them in reverse, accumulating gradients. Tensors are dense
//! row-major `f64` matrices — everything in this crate is a matrix, a row
//! vector, or a 1x1 scalar. Graph-structured operations (spline
//! convolution, motion attention) register as single tape ops with
//! hand-derived backward rules; everything else composes from small
//! elementwise and matrix primitives.
//!
//! The tape is acyclic by construction: an op's parents always precede it,
//! and every gradient has the shape of its value.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self [n x k] times other [k x m].
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// selfᵀ times other, both with matching row counts.
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "t_matmul row counts");
        let mut out = Tensor::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = out.row_mut(i);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self times otherᵀ.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_t col counts");
        let mut out = Tensor::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = out.row_mut(i);
            for (j, o) in o_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn col_sums(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

/// Backward rule of one recorded operation: given the node's value, the
/// incoming gradient, and the parent values, produce one gradient per
/// parent (shaped like that parent).
pub trait TapeOp {
    fn backward(&self, value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor>;
}

struct TapeNode {
    value: Tensor,
    parents: Vec<Var>,
    op: Option<Box<dyn TapeOp>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when the loss does not reach it.
    pub fn take_or_zeros(&mut self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

/// A recorded computation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], None)
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, op: Option<Box<dyn TapeOp>>) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(TapeNode { value, parents, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an op with explicit parents and a precomputed value.
    pub fn record(&mut self, value: Tensor, parents: Vec<Var>, op: Box<dyn TapeOp>) -> Var {
        self.push(value, parents, Some(op))
    }

    /// Reverse pass from a scalar root. Returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = &self.nodes[root.0].value;
        grads[root.0] = Some(Tensor::filled(seed.rows, seed.cols, 1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(op) = &node.op {
                let parent_vals: Vec<&Tensor> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let pgrads = op.backward(&node.value, &g, &parent_vals);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(pgrads) {
                    debug_assert_eq!(
                        pg.shape(),
                        self.nodes[p.0].value.shape(),
                        "gradient shape must match value shape"
                    );
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    /// Invariant check: every parent precedes its consumer.
    pub fn is_acyclic(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.parents.iter().all(|p| p.0 < i))
    }
}

// ---------------------------------------------------------------------------
// Elementwise and matrix primitives.
// ---------------------------------------------------------------------------

macro_rules! unary_op {
    ($name:ident, $opname:ident, $fwd:expr, $bwd:expr) => {
        struct $opname;
        impl TapeOp for $opname {
            fn backward(&self, value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
                let x = parents[0];
                let mut out = Tensor::zeros(x.rows, x.cols);
                for i in 0..x.data.len() {
                    let d: fn(f64, f64) -> f64 = $bwd;
                    out.data[i] = grad.data[i] * d(x.data[i], value.data[i]);
                }
                vec![out]
            }
        }
        impl Tape {
            pub fn $name(&mut self, x: Var) -> Var {
                let f: fn(f64) -> f64 = $fwd;
                let value = self.value(x).map(f);
                self.record(value, vec![x], Box::new($opname))
            }
        }
    };
}

unary_op!(relu, ReluOp, |v| v.max(0.0), |x, _y| if x > 0.0 { 1.0 } else { 0.0 });
unary_op!(sigmoid, SigmoidOp, |v| 1.0 / (1.0 + (-v).exp()), |_x, y| y * (1.0 - y));
unary_op!(exp, ExpOp, |v| v.exp(), |_x, y| y);
unary_op!(ln, LnOp, |v| v.ln(), |x, _y| 1.0 / x);
unary_op!(atan, AtanOp, |v| v.atan(), |x, _y| 1.0 / (1.0 + x * x));
unary_op!(square, SquareOp, |v| v * v, |x, _y| 2.0 * x);
unary_op!(neg, NegOp, |v| -v, |_x, _y| -1.0);

struct LeakyReluOp {
    slope: f64,
}
impl TapeOp for LeakyReluOp {
    fn backward(&self, _value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        let mut out = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.data.len() {
            out.data[i] = grad.data[i] * if x.data[i] > 0.0 { 1.0 } else { self.slope };
        }
        vec![out]
    }
}

struct ClampMinOp {
    floor: f64,
}
impl TapeOp for ClampMinOp {
    fn backward(&self, _value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        let mut out = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.data.len() {
            out.data[i] = if x.data[i] > self.floor { grad.data[i] } else { 0.0 };
        }
        vec![out]
    }
}

enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}
struct BinaryOp(Binary);
impl TapeOp for BinaryOp {
    fn backward(&self, _value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (a, b) = (parents[0], parents[1]);
        let mut ga = Tensor::zeros(a.rows, a.cols);
        let mut gb = Tensor::zeros(b.rows, b.cols);
        for i in 0..a.data.len() {
            let g = grad.data[i];
            let (x, y) = (a.data[i], b.data[i]);
            let (da, db) = match self.0 {
                Binary::Add => (1.0, 1.0),
                Binary::Sub => (1.0, -1.0),
                Binary::Mul => (y, x),
                Binary::Div => (1.0 / y, -x / (y * y)),
                Binary::Min => {
                    if x <= y {
                        (1.0, 0.0)
                    } else {
                        (0.0, 1.0)
                    }
                }
                Binary::Max => {
                    if x >= y {
                        (1.0, 0.0)
                    } else {
                        (0.0, 1.0)
                    }
                }
            };
            ga.data[i] = g * da;
            gb.data[i] = g * db;
        }
        vec![ga, gb]
    }
}

struct ScaleOp {
    factor: f64,
}
impl TapeOp for ScaleOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, _p: &[&Tensor]) -> Vec<Tensor> {
        vec![grad.map(|g| g * self.factor)]
    }
}

struct AddConstOp;
impl TapeOp for AddConstOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, _p: &[&Tensor]) -> Vec<Tensor> {
        vec![grad.clone()]
    }
}

struct MulConstOp {
    factor: Tensor,
}
impl TapeOp for MulConstOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, _p: &[&Tensor]) -> Vec<Tensor> {
        let mut out = grad.clone();
        for (g, &f) in out.data.iter_mut().zip(&self.factor.data) {
            *g *= f;
        }
        vec![out]
    }
}

/// y = x·W + b with b broadcast over rows.
struct AffineOp;
impl TapeOp for AffineOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (x, w) = (parents[0], parents[1]);
        let gx = grad.matmul_t(w);
        let gw = x.t_matmul(grad);
        let gb = grad.col_sums();
        vec![gx, gw, gb]
    }
}

struct MatMulOp;
impl TapeOp for MatMulOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (a, b) = (parents[0], parents[1]);
        vec![grad.matmul_t(b), a.t_matmul(grad)]
    }
}

struct ConcatColsOp {
    split: usize,
}
impl TapeOp for ConcatColsOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (a, b) = (parents[0], parents[1]);
        let mut ga = Tensor::zeros(a.rows, a.cols);
        let mut gb = Tensor::zeros(b.rows, b.cols);
        for r in 0..grad.rows {
            let g = grad.row(r);
            ga.row_mut(r).copy_from_slice(&g[..self.split]);
            gb.row_mut(r).copy_from_slice(&g[self.split..]);
        }
        vec![ga, gb]
    }
}

struct SliceColsOp {
    start: usize,
    len: usize,
}
impl TapeOp for SliceColsOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        let mut gx = Tensor::zeros(x.rows, x.cols);
        for r in 0..grad.rows {
            gx.row_mut(r)[self.start..self.start + self.len].copy_from_slice(grad.row(r));
        }
        vec![gx]
    }
}

struct GatherRowsOp {
    ids: Vec<u32>,
}
impl TapeOp for GatherRowsOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        let mut gx = Tensor::zeros(x.rows, x.cols);
        for (k, &id) in self.ids.iter().enumerate() {
            let dst = gx.row_mut(id as usize);
            for (d, &g) in dst.iter_mut().zip(grad.row(k)) {
                *d += g;
            }
        }
        vec![gx]
    }
}

struct SumAllOp;
impl TapeOp for SumAllOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        vec![Tensor::filled(x.rows, x.cols, grad.item())]
    }
}

struct MeanAllOp;
impl TapeOp for MeanAllOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        let n = x.numel() as f64;
        vec![Tensor::filled(x.rows, x.cols, grad.item() / n)]
    }
}

/// Row-wise log-softmax.
struct LogSoftmaxRowsOp;
impl TapeOp for LogSoftmaxRowsOp {
    fn backward(&self, value: &Tensor, grad: &Tensor, _p: &[&Tensor]) -> Vec<Tensor> {
        let mut gx = Tensor::zeros(value.rows, value.cols);
        for r in 0..value.rows {
            let g = grad.row(r);
            let y = value.row(r);
            let gsum: f64 = g.iter().sum();
            for c in 0..value.cols {
                gx.row_mut(r)[c] = g[c] - y[c].exp() * gsum;
            }
        }
        vec![gx]
    }
}

/// Weighted negative log-likelihood over rows of log-probabilities:
/// -(1/N) Σ w_i · logp[i, target_i].
struct WeightedNllOp {
    targets: Vec<u32>,
    weights: Vec<f64>,
}
impl TapeOp for WeightedNllOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let logp = parents[0];
        let n = logp.rows as f64;
        let g = grad.item();
        let mut gx = Tensor::zeros(logp.rows, logp.cols);
        for (i, (&t, &w)) in self.targets.iter().zip(&self.weights).enumerate() {
            gx.row_mut(i)[t as usize] = -g * w / n;
        }
        vec![gx]
    }
}

/// Mean Huber loss against a constant target.
struct HuberMeanOp {
    delta: f64,
    target: Tensor,
}
impl TapeOp for HuberMeanOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let x = parents[0];
        let n = x.numel().max(1) as f64;
        let g = grad.item() / n;
        let mut gx = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.data.len() {
            let r = x.data[i] - self.target.data[i];
            gx.data[i] = g * if r.abs() <= self.delta {
                r
            } else {
                self.delta * r.signum()
            };
        }
        vec![gx]
    }
}

/// Mean binary cross-entropy of logits against constant targets, in the
/// numerically stable form max(z,0) - z·t + ln(1 + e^(-|z|)).
struct BceWithLogitsMeanOp {
    targets: Tensor,
}
impl TapeOp for BceWithLogitsMeanOp {
    fn backward(&self, _v: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let z = parents[0];
        let n = z.numel().max(1) as f64;
        let g = grad.item() / n;
        let mut gx = Tensor::zeros(z.rows, z.cols);
        for i in 0..z.data.len() {
            let s = 1.0 / (1.0 + (-z.data[i]).exp());
            gx.data[i] = g * (s - self.targets.data[i]);
        }
        vec![gx]
    }
}

impl Tape {
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.record(value, vec![x], Box::new(LeakyReluOp { slope }))
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| v.max(floor));
        self.record(value, vec![x], Box::new(ClampMinOp { floor }))
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "binary op shape mismatch");
        let mut value = Tensor::zeros(ta.rows, ta.cols);
        for i in 0..value.data.len() {
            let (x, y) = (ta.data[i], tb.data[i]);
            value.data[i] = match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
                Binary::Min => x.min(y),
                Binary::Max => x.max(y),
            };
        }
        self.record(value, vec![a, b], Box::new(BinaryOp(kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Div)
    }
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Min)
    }
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Max)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.record(value, vec![x], Box::new(ScaleOp { factor }))
    }

    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape(), c.shape());
        let mut value = t.clone();
        for (v, &a) in value.data.iter_mut().zip(&c.data) {
            *v += a;
        }
        self.record(value, vec![x], Box::new(AddConstOp))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.record(value, vec![x], Box::new(AddConstOp))
    }

    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape(), c.shape());
        let mut value = t.clone();
        for (v, &a) in value.data.iter_mut().zip(&c.data) {
            *v *= a;
        }
        self.record(
            value,
            vec![x],
            Box::new(MulConstOp { factor: c.clone() }),
        )
    }

    /// x·W + b; b is a 1-row tensor broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(tx.cols, tw.rows, "affine inner dims");
        assert_eq!(tb.rows, 1);
        assert_eq!(tb.cols, tw.cols);
        let mut value = tx.matmul(tw);
        for r in 0..value.rows {
            for (v, &bv) in value.row_mut(r).iter_mut().zip(&tb.data) {
                *v += bv;
            }
        }
        self.record(value, vec![x, w, b], Box::new(AffineOp))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.record(value, vec![a, b], Box::new(MatMulOp))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows, tb.rows);
        let split = ta.cols;
        let mut value = Tensor::zeros(ta.rows, ta.cols + tb.cols);
        for r in 0..ta.rows {
            value.row_mut(r)[..split].copy_from_slice(ta.row(r));
            value.row_mut(r)[split..].copy_from_slice(tb.row(r));
        }
        self.record(value, vec![a, b], Box::new(ConcatColsOp { split }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        assert!(start + len <= t.cols);
        let mut value = Tensor::zeros(t.rows, len);
        for r in 0..t.rows {
            value.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        self.record(value, vec![x], Box::new(SliceColsOp { start, len }))
    }

    pub fn gather_rows(&mut self, x: Var, ids: &[u32]) -> Var {
        let t = self.value(x);
        let mut value = Tensor::zeros(ids.len(), t.cols);
        for (k, &id) in ids.iter().enumerate() {
            value.row_mut(k).copy_from_slice(t.row(id as usize));
        }
        self.record(value, vec![x], Box::new(GatherRowsOp { ids: ids.to_vec() }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data.iter().sum());
        self.record(value, vec![x], Box::new(SumAllOp))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.data.iter().sum::<f64>() / t.numel().max(1) as f64);
        self.record(value, vec![x], Box::new(MeanAllOp))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut value = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for (o, &v) in value.row_mut(r).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.record(value, vec![x], Box::new(LogSoftmaxRowsOp))
    }

    /// -(1/N) Σ w_i logp[i, target_i] on a log-probability matrix.
    pub fn weighted_nll(&mut self, logp: Var, targets: &[u32], weights: &[f64]) -> Result<Var> {
        let t = self.value(logp);
        if targets.len() != t.rows || weights.len() != t.rows {
            return Err(Error::Shape("nll target/weight length".into()));
        }
        if t.rows == 0 {
            return Err(Error::Validation("nll over an empty node set".into()));
        }
        let mut acc = 0.0;
        for (i, (&tc, &w)) in targets.iter().zip(weights).enumerate() {
            if tc as usize >= t.cols {
                return Err(Error::Validation(format!("target class {tc} out of range")));
            }
            acc -= w * t.at(i, tc as usize);
        }
        let value = Tensor::scalar(acc / t.rows as f64);
        Ok(self.record(
            value,
            vec![logp],
            Box::new(WeightedNllOp {
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            }),
        ))
    }

    /// Mean Huber loss of x against a constant target of the same shape.
    pub fn huber_mean(&mut self, x: Var, target: &Tensor, delta: f64) -> Var {
        let t = self.value(x);
        assert_eq!(t.shape(), target.shape());
        let mut acc = 0.0;
        for (&v, &tv) in t.data.iter().zip(&target.data) {
            let r = (v - tv).abs();
            acc += if r <= delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            };
        }
        let value = Tensor::scalar(acc / t.numel().max(1) as f64);
        self.record(
            value,
            vec![x],
            Box::new(HuberMeanOp {
                delta,
                target: target.clone(),
            }),
        )
    }

    /// Mean BCE of logits against constant {0,1} targets.
    pub fn bce_with_logits_mean(&mut self, z: Var, targets: &Tensor) -> Var {
        let t = self.value(z);
        assert_eq!(t.shape(), targets.shape());
        let mut acc = 0.0;
        for (&zv, &tv) in t.data.iter().zip(&targets.data) {
            acc += zv.max(0.0) - zv * tv + (1.0 + (-zv.abs()).exp()).ln();
        }
        let value = Tensor::scalar(acc / t.numel().max(1) as f64);
        self.record(
            value,
            vec![z],
            Box::new(BceWithLogitsMeanOp {
                targets: targets.clone(),
            }),
        )
    }
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

/// Central finite-difference check of a scalar-valued function of several
/// tensor inputs. `f` rebuilds its tape on every call; the analytic
/// gradients come from one backward pass. At most `max_coords` coordinates
/// per input are probed (deterministically strided). Returns the largest
/// relative error. The input leaves must be the first tape nodes, in order.
pub fn grad_check(
    f: &dyn Fn(&[Tensor]) -> (Tape, Var),
    inputs: &[Tensor],
    eps: f64,
    max_coords: usize,
) -> f64 {
    let (tape, root) = f(inputs);
    assert_eq!(tape.value(root).numel(), 1, "grad_check needs a scalar root");
    assert!(tape.is_acyclic());
    let grads = tape.backward(root);
    let mut worst: f64 = 0.0;
    for (pi, input) in inputs.iter().enumerate() {
        let analytic = grads.get(Var(pi));
        let n = input.numel();
        let stride = (n / max_coords.max(1)).max(1);
        for ci in (0..n).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[pi].data[ci] += eps;
            let (tp, rp) = f(&plus);
            let fp = tp.value(rp).item();
            let mut minus = inputs.to_vec();
            minus[pi].data[ci] -= eps;
            let (tm, rm) = f(&minus);
            let fm = tm.value(rm).item();
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g.data[ci]);
            let denom = a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randt(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn linear_map_gradient_is_machine_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = vec![randt(&mut rng, 3, 4), randt(&mut rng, 4, 2), randt(&mut rng, 1, 2)];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let x = tape.leaf(ins[0].clone());
                let w = tape.leaf(ins[1].clone());
                let b = tape.leaf(ins[2].clone());
                let y = tape.affine(x, w, b);
                let s = tape.sum_all(y);
                (tape, s)
            },
            &inputs,
            1e-5,
            64,
        );
        assert!(err < 1e-9, "affine grad error {err}");
    }

    #[test]
    fn composed_nonlinear_ops_pass_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![randt(&mut rng, 4, 3), randt(&mut rng, 4, 3)];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let a = tape.leaf(ins[0].clone());
                let b = tape.leaf(ins[1].clone());
                let s = tape.sigmoid(a);
                let p = tape.mul(s, b);
                let e = tape.exp(p);
                let q = tape.atan(e);
                let r = tape.leaky_relu(q, 0.2);
                let d = tape.div(r, e);
                let m = tape.mean_all(d);
                (tape, m)
            },
            &inputs,
            1e-5,
            48,
        );
        assert!(err < 1e-6, "nonlinear chain grad error {err}");
    }

    #[test]
    fn softmax_and_losses_pass_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![randt(&mut rng, 5, 3)];
        let targets = vec![0u32, 2, 1, 2, 0];
        let weights = vec![1.0, 0.5, 2.0, 1.0, 1.5];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let x = tape.leaf(ins[0].clone());
                let lp = tape.log_softmax_rows(x);
                let l = tape.weighted_nll(lp, &targets, &weights).unwrap();
                (tape, l)
            },
            &inputs,
            1e-5,
            15,
        );
        assert!(err < 1e-7, "nll grad error {err}");

        let inputs = vec![randt(&mut rng, 6, 2)];
        let target = randt(&mut rng, 6, 2);
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let x = tape.leaf(ins[0].clone());
                let l = tape.huber_mean(x, &target, 1.0);
                (tape, l)
            },
            &inputs,
            1e-5,
            12,
        );
        assert!(err < 1e-7, "huber grad error {err}");

        let inputs = vec![randt(&mut rng, 8, 1)];
        let bt = Tensor::from_vec(8, 1, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let z = tape.leaf(ins[0].clone());
                let l = tape.bce_with_logits_mean(z, &bt);
                (tape, l)
            },
            &inputs,
            1e-5,
            8,
        );
        assert!(err < 1e-7, "bce grad error {err}");
    }

    #[test]
    fn gather_concat_slice_roundtrip_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![randt(&mut rng, 4, 3), randt(&mut rng, 3, 2)];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let a = tape.leaf(ins[0].clone());
                let b = tape.leaf(ins[1].clone());
                let g = tape.gather_rows(a, &[0, 2, 2]);
                let c = tape.concat_cols(g, b);
                let s = tape.slice_cols(c, 1, 3);
                let sq = tape.square(s);
                let m = tape.sum_all(sq);
                (tape, m)
            },
            &inputs,
            1e-5,
            32,
        );
        assert!(err < 1e-8, "gather/concat/slice grad error {err}");
    }

    #[test]
    fn min_max_clamp_gradients_at_generic_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![randt(&mut rng, 5, 2), randt(&mut rng, 5, 2)];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let a = tape.leaf(ins[0].clone());
                let b = tape.leaf(ins[1].clone());
                let mn = tape.minimum(a, b);
                let mx = tape.maximum(a, b);
                let d = tape.sub(mx, mn);
                let c = tape.clamp_min(d, 0.1);
                let m = tape.mean_all(c);
                (tape, m)
            },
            &inputs,
            1e-6,
            20,
        );
        assert!(err < 1e-6, "min/max/clamp grad error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // Negative control: a wrong backward rule must fail the check.
        struct WrongOp;
        impl TapeOp for WrongOp {
            fn backward(&self, _v: &Tensor, grad: &Tensor, _p: &[&Tensor]) -> Vec<Tensor> {
                vec![grad.map(|g| 3.0 * g)] // pretends y = x has slope 3
            }
        }
        let inputs = vec![Tensor::from_vec(2, 2, vec![0.3, -0.4, 0.9, 0.1])];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let x = tape.leaf(ins[0].clone());
                let value = tape.value(x).clone();
                let y = tape.record(value, vec![x], Box::new(WrongOp));
                let s = tape.sum_all(y);
                (tape, s)
            },
            &inputs,
            1e-5,
            4,
        );
        assert!(err > 0.5, "harness failed to flag a corrupted gradient ({err})");
    }

    #[test]
    fn tape_is_acyclic_and_grad_shapes_match() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 3, 1.5));
        let y = tape.relu(x);
        let z = tape.mean_all(y);
        assert!(tape.is_acyclic());
        let grads = tape.backward(z);
        assert_eq!(grads.get(x).unwrap().shape(), (2, 3));
    }
}
