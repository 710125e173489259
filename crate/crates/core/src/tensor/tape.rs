//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive operation in execution order. Values are
//! immutable once recorded; [`Tape::backward`] walks the record in exact
//! reverse order and accumulates adjoints into the leaves that require
//! gradients.
//!
//! Piecewise operations (relu, clamping, masked min/max, edge adjustment) fold
//! their active branch into a running signature. Two evaluations with equal
//! signatures took the same smooth piece everywhere, which is what the
//! finite-difference harness uses to skip probes that straddle a kink.

use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sqrt(Var),
    Powf(Var, f64),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RowLogSumExp(Var, Option<Tensor>),
    GatherRows(Var, Vec<usize>),
    PairwiseSqDist(Var),
    MaskedExtreme(Var, usize),
    EdgeAdjust {
        dist: Var,
        tau: Var,
        branches: Vec<u8>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of tensor operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

// EdgeAdjust branch codes.
const BRANCH_OFF: u8 = 0;
const BRANCH_EMPHASIZE: u8 = 1;
const BRANCH_WEAKEN: u8 = 2;
const BRANCH_TRUNCATED: u8 = 3;

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(
            op,
            format!("cannot broadcast {}x{} with {}x{}", a.0, a.1, b.0, b.1),
        )),
    }
}

#[inline]
fn bidx(t: &Tensor, r: usize, c: usize) -> usize {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    rr * t.cols() + cc
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            signature: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded op and accumulated gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.signature = FNV_OFFSET;
    }

    /// Clears accumulated leaf gradients, keeping the record.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Hash of every branch decision taken by piecewise ops so far.
    pub fn branch_signature(&self) -> u64 {
        self.signature
    }

    fn mix(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.signature ^= u64::from(b);
            self.signature = self.signature.wrapping_mul(FNV_PRIME);
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push("transpose", value, Op::Transpose(a), rg)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (ta, tb) = (self.value(a), self.value(b));
        let (rows, cols) = broadcast_shape(name, ta.shape(), tb.shape())?;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = ta.data()[bidx(ta, r, c)];
                let y = tb.data()[bidx(tb, r, c)];
                out.push(match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => {
                        if y == 0.0 {
                            return Err(Error::domain("div", "division by zero"));
                        }
                        x / y
                    }
                });
            }
        }
        let value = Tensor::new(rows, cols, out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(name, value, Op::Binary(kind, a, b), rg)
    }

    /// Elementwise sum with row/column/scalar broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push("scale", value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push("add_scalar", value, Op::AddScalar(a), rg)
    }

    /// max(x, 0); the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let bits: Vec<u64> = self.value(a).data().iter().map(|&v| u64::from(v > 0.0)).collect();
        for b in bits {
            self.mix(b);
        }
        let rg = self.rg(a);
        self.push("relu", value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push("exp", value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain("log", format!("non-positive operand {v}")));
        }
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push("log", value, Op::Log(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push("sigmoid", value, Op::Sigmoid(a), rg)
    }

    /// ln(1 + e^x), evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push("softplus", value, Op::Softplus(a), rg)
    }

    /// sqrt(x + eps); requires x + eps > 0.
    pub fn sqrt_eps(&mut self, a: Var, eps: f64) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v + eps <= 0.0) {
            return Err(Error::domain("sqrt", format!("operand {v} below -eps")));
        }
        let value = self.value(a).map(|v| (v + eps).sqrt());
        let rg = self.rg(a);
        self.push("sqrt", value, Op::Sqrt(a), rg)
    }

    /// x^p for strictly positive x.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain("powf", format!("non-positive base {v}")));
        }
        let value = self.value(a).map(|v| v.powf(p));
        let rg = self.rg(a);
        self.push("powf", value, Op::Powf(a, p), rg)
    }

    /// max(x, floor) elementwise.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(floor));
        let bits: Vec<u64> = self.value(a).data().iter().map(|&v| u64::from(v > floor)).collect();
        for b in bits {
            self.mix(b);
        }
        let rg = self.rg(a);
        self.push("clamp_min", value, Op::ClampMin(a, floor), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push("sum", value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a);
        self.push("mean", value, Op::Mean(a), rg)
    }

    /// Per-row sums as an n×1 column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let value = Tensor::column((0..t.rows()).map(|r| t.row(r).iter().sum()).collect());
        let rg = self.rg(a);
        self.push("sum_rows", value, Op::SumRows(a), rg)
    }

    /// Row-wise log Σ exp, optionally restricted to entries where `mask` is
    /// nonzero. Uses max subtraction, so large logits do not overflow.
    pub fn row_logsumexp(&mut self, a: Var, mask: Option<Tensor>) -> Result<Var> {
        let t = self.value(a);
        if t.cols() == 0 {
            return Err(Error::shape("row_logsumexp", "no columns"));
        }
        if let Some(m) = &mask {
            if m.shape() != t.shape() {
                return Err(Error::shape("row_logsumexp", "mask shape differs from operand"));
            }
        }
        let mut out = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let keep = |c: usize| mask.as_ref().map_or(true, |m| m.get(r, c) != 0.0);
            let row = t.row(r);
            let mx = (0..row.len())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::domain("row_logsumexp", format!("row {r} fully masked")));
            }
            let s: f64 = (0..row.len())
                .filter(|&c| keep(c))
                .map(|c| (row[c] - mx).exp())
                .sum();
            out.push(mx + s.ln());
        }
        let value = Tensor::column(out);
        let rg = self.rg(a);
        self.push("row_logsumexp", value, Op::RowLogSumExp(a, mask), rg)
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {} rows", t.rows()),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in &idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(idx.len(), t.cols(), data)?;
        let rg = self.rg(a);
        self.push("gather_rows", value, Op::GatherRows(a, idx), rg)
    }

    /// out[i][j] = ‖p_i − p_j‖², computed from explicit differences.
    pub fn pairwise_sq_dist(&mut self, p: Var) -> Result<Var> {
        let t = self.value(p);
        let n = t.rows();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let s: f64 = t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        let rg = self.rg(p);
        self.push("pairwise_sq_dist", out, Op::PairwiseSqDist(p), rg)
    }

    fn masked_extreme(&mut self, a: Var, mask: &Tensor, want_max: bool) -> Result<Var> {
        let name = if want_max { "masked_max" } else { "masked_min" };
        let t = self.value(a);
        if mask.shape() != t.shape() {
            return Err(Error::shape(name, "mask shape differs from operand"));
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, (&v, &m)) in t.data().iter().zip(mask.data()).enumerate() {
            if m == 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if want_max {
                        v > b
                    } else {
                        v < b
                    }
                }
            };
            if better {
                best = Some((k, v));
            }
        }
        let (arg, v) = best.ok_or_else(|| Error::domain(name, "empty mask"))?;
        self.mix(arg as u64);
        let rg = self.rg(a);
        self.push(name, Tensor::scalar(v), Op::MaskedExtreme(a, arg), rg)
    }

    /// Minimum over entries where `mask` is nonzero (first index wins ties).
    pub fn masked_min(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        self.masked_extreme(a, mask, false)
    }

    /// Maximum over entries where `mask` is nonzero (first index wins ties).
    pub fn masked_max(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        self.masked_extreme(a, mask, true)
    }

    /// Piecewise edge re-weighting applied where `mask` is nonzero (zero
    /// elsewhere), with a 1×1 threshold `tau > 0`:
    ///
    /// * `D <= tau`: `e^(tau - D) - 1`
    /// * `D > tau`: `1 - min(e^(D - tau), e^tau)`
    pub fn edge_adjust(&mut self, dist: Var, tau: Var, mask: &Tensor) -> Result<Var> {
        let d = self.value(dist);
        let tau_v = self.value(tau).item()?;
        if tau_v <= 0.0 {
            return Err(Error::domain("edge_adjust", format!("tau must be > 0, got {tau_v}")));
        }
        if mask.shape() != d.shape() {
            return Err(Error::shape("edge_adjust", "mask shape differs from distances"));
        }
        let mut out = Tensor::zeros(d.rows(), d.cols());
        let mut branches = vec![BRANCH_OFF; d.len()];
        for k in 0..d.len() {
            if mask.data()[k] == 0.0 {
                continue;
            }
            let (v, b) = edge_adjust_scalar(d.data()[k], tau_v);
            out.data_mut()[k] = v;
            branches[k] = b;
        }
        for &b in &branches {
            self.mix(u64::from(b));
        }
        let rg = self.rg(dist) || self.rg(tau);
        self.push(
            "edge_adjust",
            out,
            Op::EdgeAdjust {
                dist,
                tau,
                branches,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`] or [`Tape::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!("backward needs a 1x1 loss, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (input, contrib) in self.local_grads(idx, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let zip = |x: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&x, &y), &g)| f(x, y, g))
                .collect();
            Tensor::new(x.rows(), x.cols(), data).expect("same shape")
        };
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut v = Vec::new();
                if rg(*a) {
                    v.push((*a, g.matmul(&val(*b).transpose())?));
                }
                if rg(*b) {
                    v.push((*b, val(*a).transpose().matmul(g)?));
                }
                v
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let gv = g.get(r, c);
                        let (ia, ib) = (bidx(ta, r, c), bidx(tb, r, c));
                        let (x, z) = (ta.data()[ia], tb.data()[ib]);
                        let (da, db) = match kind {
                            Binary::Add => (1.0, 1.0),
                            Binary::Sub => (1.0, -1.0),
                            Binary::Mul => (z, x),
                            Binary::Div => (1.0 / z, -x / (z * z)),
                        };
                        ga.data_mut()[ia] += gv * da;
                        gb.data_mut()[ib] += gv * db;
                    }
                }
                let mut v = Vec::new();
                if rg(*a) {
                    v.push((*a, ga));
                }
                if rg(*b) {
                    v.push((*b, gb));
                }
                v
            }
            Op::Scale(a, s) => vec![(*a, g.map(|v| v * s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => vec![(*a, zip(val(*a), &|x, _, g| if x > 0.0 { g } else { 0.0 }))],
            Op::Exp(a) => vec![(*a, zip(val(*a), &|_, y, g| g * y))],
            Op::Log(a) => vec![(*a, zip(val(*a), &|x, _, g| g / x))],
            Op::Sigmoid(a) => vec![(*a, zip(val(*a), &|_, y, g| g * y * (1.0 - y)))],
            Op::Softplus(a) => vec![(*a, zip(val(*a), &|x, _, g| g * sigmoid(x)))],
            Op::Sqrt(a) => vec![(*a, zip(val(*a), &|_, y, g| g / (2.0 * y)))],
            Op::Powf(a, p) => vec![(*a, zip(val(*a), &|x, _, g| g * p * x.powf(p - 1.0)))],
            Op::ClampMin(a, floor) => {
                vec![(*a, zip(val(*a), &|x, _, g| if x > *floor { g } else { 0.0 }))]
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.data()[0]))]
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.data()[0] / (r * c) as f64))]
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).iter_mut().for_each(|v| *v = g.data()[i]);
                }
                vec![(*a, ga)]
            }
            Op::RowLogSumExp(a, mask) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    let lse = y.data()[r];
                    let gr = g.data()[r];
                    for c in 0..ta.cols() {
                        if mask.as_ref().map_or(true, |m| m.get(r, c) != 0.0) {
                            ga.set(r, c, gr * (ta.get(r, c) - lse).exp());
                        }
                    }
                }
                vec![(*a, ga)]
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (dst, &src) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *dst += src;
                    }
                }
                vec![(*a, ga)]
            }
            Op::PairwiseSqDist(p) => {
                let tp = val(*p);
                let n = tp.rows();
                let mut gp = Tensor::zeros(n, tp.cols());
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (g.get(i, j) + g.get(j, i));
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..tp.cols() {
                            let diff = tp.get(i, k) - tp.get(j, k);
                            gp.data_mut()[i * tp.cols() + k] += w * diff;
                        }
                    }
                }
                vec![(*p, gp)]
            }
            Op::MaskedExtreme(a, arg) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                ga.data_mut()[*arg] = g.data()[0];
                vec![(*a, ga)]
            }
            Op::EdgeAdjust {
                dist,
                tau,
                branches,
            } => {
                let td = val(*dist);
                let t = val(*tau).data()[0];
                let mut gd = Tensor::zeros(td.rows(), td.cols());
                let mut gt = 0.0;
                for k in 0..td.len() {
                    let gv = g.data()[k];
                    let d = td.data()[k];
                    let (dd, dt) = match branches[k] {
                        BRANCH_EMPHASIZE => {
                            let e = (t - d).exp();
                            (-e, e)
                        }
                        BRANCH_WEAKEN => {
                            let e = (d - t).exp();
                            (-e, e)
                        }
                        BRANCH_TRUNCATED => (0.0, -t.exp()),
                        _ => (0.0, 0.0),
                    };
                    gd.data_mut()[k] = gv * dd;
                    gt += gv * dt;
                }
                let mut v = Vec::new();
                if rg(*dist) {
                    v.push((*dist, gd));
                }
                if rg(*tau) {
                    v.push((*tau, Tensor::scalar(gt)));
                }
                v
            }
        };
        Ok(out)
    }
}

/// Scalar edge adjustment and the branch it took.
fn edge_adjust_scalar(d: f64, tau: f64) -> (f64, u8) {
    if d <= tau {
        ((tau - d).exp() - 1.0, BRANCH_EMPHASIZE)
    } else if d - tau < tau {
        (1.0 - (d - tau).exp(), BRANCH_WEAKEN)
    } else {
        (1.0 - tau.exp(), BRANCH_TRUNCATED)
    }
}

/// Edge re-weighting for a single distance, outside any tape.
pub fn edge_adjust_value(d: f64, tau: f64) -> f64 {
    edge_adjust_scalar(d, tau).0
}
