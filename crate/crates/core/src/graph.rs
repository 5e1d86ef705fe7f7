//! Eager tape autodiff over dense 2-D values.
//!
//! Every graph value is a row-major matrix `[rows, cols]`; scalars are
//! `[1, 1]`. Builders validate shapes, run the forward kernel immediately,
//! and append a node to the tape. `backward` walks the tape in reverse,
//! which is a valid topological order because inputs always precede uses.
//!
//! The element type is generic so the same model code can run in f32 for
//! training and be replayed in f64 for finite-difference gradient checks.

use crate::error::{CoreError, Result};
use crate::ops;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const L2_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, S),
    AddConst(TensorId, S),
    /// [n,d] + broadcast [1,d]
    AddRow(TensorId, TensorId),
    /// [n,d] * broadcast [1,d]
    MulRow(TensorId, TensorId),
    /// [n,d] with row i scaled by s[i], s shaped [n,1]
    ScaleRows(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Gelu(TensorId),
    Softmax(TensorId),
    LayerNorm(TensorId),
    L2NormRows(TensorId),
    MeanRows(TensorId),
    SumRows(TensorId),
    MeanAll(TensorId),
    SumAll(TensorId),
    GatherRows(TensorId, Vec<usize>),
    SliceCols(TensorId, usize, usize),
    ConcatRows(TensorId, TensorId),
    ConcatCols(TensorId, TensorId),
    BroadcastRow(TensorId),
    Recip(TensorId),
    MseLoss(TensorId, TensorId),
    L1Loss(TensorId, TensorId),
    /// Row-wise one-hot argmax; backward is the straight-through identity.
    HardMaxST(TensorId),
    SumScalars(Vec<TensorId>),
    /// Hard min over scalar inputs, ties to the lowest index; gradient flows
    /// only into the winner (subgradient of min).
    MinScalars(Vec<TensorId>),
}

#[derive(Debug, Clone)]
struct Node<S> {
    op: Op<S>,
    rows: usize,
    cols: usize,
    value: Vec<S>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> CoreError {
    CoreError::ShapeMismatch { op, detail }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, rows: usize, cols: usize, value: Vec<S>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value, requires_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn node(&self, id: TensorId) -> &Node<S> {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[S] {
        &self.node(id).value
    }

    pub fn value_f32(&self, id: TensorId) -> Vec<f32> {
        self.node(id).value.iter().map(|v| v.to_f64() as f32).collect()
    }

    /// Scalar convenience accessor; panics if the node is not [1,1].
    pub fn scalar_value(&self, id: TensorId) -> S {
        let n = self.node(id);
        assert_eq!((n.rows, n.cols), (1, 1), "scalar_value on non-scalar node");
        n.value[0]
    }

    // ---- leaves ------------------------------------------------------

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<S>, requires_grad: bool) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(shape_err("input", format!("[{rows},{cols}] needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(self.push(Op::Leaf, rows, cols, data, requires_grad))
    }

    /// Loads a host tensor as a 2-D leaf. 1-D host tensors become a single row.
    pub fn leaf(&mut self, t: &Tensor) -> Result<TensorId> {
        let (rows, cols) = match *t.shape() {
            [c] => (1, c),
            [r, c] => (r, c),
            ref s => {
                return Err(shape_err("leaf", format!("graph values are 2-D, host tensor has shape {s:?}")));
            }
        };
        let data = t.data().iter().map(|&v| S::from_f32(v)).collect();
        Ok(self.push(Op::Leaf, rows, cols, data, t.requires_grad()))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<S>) -> Result<TensorId> {
        self.input(rows, cols, data, false)
    }

    pub fn scalar(&mut self, v: S) -> TensorId {
        self.push(Op::Leaf, 1, 1, vec![v], false)
    }

    // ---- binary ops --------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]: inner dims differ")));
        }
        let value = ops::matmul(&self.node(a).value, &self.node(b).value, m, k, n);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::MatMul(a, b), m, n, value, rg))
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<(usize, usize)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(shape_err(op, format!("[{ra},{ca}] vs [{rb},{cb}]")));
        }
        Ok((ra, ca))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("add", a, b)?;
        let value = self.node(a).value.iter().zip(&self.node(b).value).map(|(&x, &y)| x + y).collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::Add(a, b), r, c, value, rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let value = self.node(a).value.iter().zip(&self.node(b).value).map(|(&x, &y)| x - y).collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::Sub(a, b), r, c, value, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let value = self.node(a).value.iter().zip(&self.node(b).value).map(|(&x, &y)| x * y).collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::Mul(a, b), r, c, value, rg))
    }

    pub fn scale(&mut self, a: TensorId, c: S) -> TensorId {
        let (r, cl) = self.shape(a);
        let value = self.node(a).value.iter().map(|&x| x * c).collect();
        let rg = self.node(a).requires_grad;
        self.push(Op::Scale(a, c), r, cl, value, rg)
    }

    pub fn add_const(&mut self, a: TensorId, c: S) -> TensorId {
        let (r, cl) = self.shape(a);
        let value = self.node(a).value.iter().map(|&x| x + c).collect();
        let rg = self.node(a).requires_grad;
        self.push(Op::AddConst(a, c), r, cl, value, rg)
    }

    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(shape_err("add_row", format!("[{r},{c}] + row [{rr},{rc}]")));
        }
        let rowv = self.node(row).value.clone();
        let value = self
            .node(a)
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rowv[i % c])
            .collect();
        let rg = self.node(a).requires_grad || self.node(row).requires_grad;
        Ok(self.push(Op::AddRow(a, row), r, c, value, rg))
    }

    pub fn mul_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(shape_err("mul_row", format!("[{r},{c}] * row [{rr},{rc}]")));
        }
        let rowv = self.node(row).value.clone();
        let value = self
            .node(a)
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| x * rowv[i % c])
            .collect();
        let rg = self.node(a).requires_grad || self.node(row).requires_grad;
        Ok(self.push(Op::MulRow(a, row), r, c, value, rg))
    }

    pub fn scale_rows(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let (sr, sc) = self.shape(s);
        if sr != r || sc != 1 {
            return Err(shape_err("scale_rows", format!("[{r},{c}] scaled by [{sr},{sc}], want [{r},1]")));
        }
        let sv = self.node(s).value.clone();
        let value = self
            .node(a)
            .value
            .iter()
            .enumerate()
            .map(|(i, &x)| x * sv[i / c])
            .collect();
        let rg = self.node(a).requires_grad || self.node(s).requires_grad;
        Ok(self.push(Op::ScaleRows(a, s), r, c, value, rg))
    }

    // ---- unary / structure ops ----------------------------------------

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let value = ops::transpose(&self.node(a).value, r, c);
        let rg = self.node(a).requires_grad;
        self.push(Op::Transpose(a), c, r, value, rg)
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(shape_err("reshape", format!("[{r},{c}] -> [{rows},{cols}]: element counts differ")));
        }
        let value = self.node(a).value.clone();
        let rg = self.node(a).requires_grad;
        Ok(self.push(Op::Reshape(a), rows, cols, value, rg))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let value = ops::gelu(&self.node(a).value);
        let rg = self.node(a).requires_grad;
        self.push(Op::Gelu(a), r, c, value, rg)
    }

    pub fn softmax(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let value = ops::softmax_rows(&self.node(a).value, r, c);
        let rg = self.node(a).requires_grad;
        self.push(Op::Softmax(a), r, c, value, rg)
    }

    /// Row-wise (x − mean)/sqrt(var + 1e-5); compose with mul_row/add_row for
    /// the affine part.
    pub fn layer_norm(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let value = ops::layernorm_rows(&self.node(a).value, r, c, S::from_f64(LAYERNORM_EPS));
        let rg = self.node(a).requires_grad;
        self.push(Op::LayerNorm(a), r, c, value, rg)
    }

    /// Row-wise x/(‖x‖₂ + 1e-8).
    pub fn l2_normalize_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let value = ops::l2_normalize_rows(&self.node(a).value, r, c, S::from_f64(L2_NORM_EPS));
        let rg = self.node(a).requires_grad;
        self.push(Op::L2NormRows(a), r, c, value, rg)
    }

    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let inv = S::ONE / S::from_f64(r as f64);
        let mut value = vec![S::ZERO; c];
        for i in 0..r {
            for j in 0..c {
                value[j] = value[j] + self.node(a).value[i * c + j];
            }
        }
        for v in &mut value {
            *v = *v * inv;
        }
        let rg = self.node(a).requires_grad;
        self.push(Op::MeanRows(a), 1, c, value, rg)
    }

    /// Column-wise sum over rows: [n,d] → [1,d].
    pub fn sum_rows(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut value = vec![S::ZERO; c];
        for i in 0..r {
            for j in 0..c {
                value[j] = value[j] + self.node(a).value[i * c + j];
            }
        }
        let rg = self.node(a).requires_grad;
        self.push(Op::SumRows(a), 1, c, value, rg)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut s = S::ZERO;
        for &v in &self.node(a).value {
            s = s + v;
        }
        let value = vec![s / S::from_f64((r * c) as f64)];
        let rg = self.node(a).requires_grad;
        self.push(Op::MeanAll(a), 1, 1, value, rg)
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let mut s = S::ZERO;
        for &v in &self.node(a).value {
            s = s + v;
        }
        let rg = self.node(a).requires_grad;
        self.push(Op::SumAll(a), 1, 1, vec![s], rg)
    }

    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        for &i in indices {
            if i >= r {
                return Err(CoreError::InvalidArg {
                    what: "gather_rows",
                    detail: format!("row index {i} out of range for {r} rows"),
                });
            }
        }
        let mut value = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            value.extend_from_slice(&self.node(a).value[i * c..(i + 1) * c]);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(Op::GatherRows(a, indices.to_vec()), indices.len(), c, value, rg))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if start >= end || end > c {
            return Err(CoreError::InvalidArg {
                what: "slice_cols",
                detail: format!("range {start}..{end} invalid for {c} columns"),
            });
        }
        let w = end - start;
        let mut value = Vec::with_capacity(r * w);
        for i in 0..r {
            value.extend_from_slice(&self.node(a).value[i * c + start..i * c + end]);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(Op::SliceCols(a, start, end), r, w, value, rg))
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb {
            return Err(shape_err("concat_rows", format!("[{ra},{ca}] over [{rb},{cb}]")));
        }
        let mut value = self.node(a).value.clone();
        value.extend_from_slice(&self.node(b).value);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::ConcatRows(a, b), ra + rb, ca, value, rg))
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(shape_err("concat_cols", format!("[{ra},{ca}] beside [{rb},{cb}]")));
        }
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            value.extend_from_slice(&self.node(a).value[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&self.node(b).value[i * cb..(i + 1) * cb]);
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::ConcatCols(a, b), ra, ca + cb, value, rg))
    }

    pub fn broadcast_row(&mut self, a: TensorId, rows: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(shape_err("broadcast_row", format!("expected [1,d], got [{r},{c}]")));
        }
        let mut value = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            value.extend_from_slice(&self.node(a).value);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(Op::BroadcastRow(a), rows, c, value, rg))
    }

    pub fn recip(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let value = self.node(a).value.iter().map(|&x| S::ONE / x).collect();
        let rg = self.node(a).requires_grad;
        self.push(Op::Recip(a), r, c, value, rg)
    }

    // ---- reductions to scalars ----------------------------------------

    /// Mean squared error over all elements → [1,1].
    pub fn mse(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("mse", a, b)?;
        let n = S::from_f64((r * c) as f64);
        let mut s = S::ZERO;
        for (&x, &y) in self.node(a).value.iter().zip(&self.node(b).value) {
            let d = x - y;
            s = s + d * d;
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::MseLoss(a, b), 1, 1, vec![s / n], rg))
    }

    /// Mean absolute difference over all elements → [1,1].
    pub fn l1_distance(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("l1_distance", a, b)?;
        let n = S::from_f64((r * c) as f64);
        let mut s = S::ZERO;
        for (&x, &y) in self.node(a).value.iter().zip(&self.node(b).value) {
            s = s + (x - y).abs();
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(Op::L1Loss(a, b), 1, 1, vec![s / n], rg))
    }

    /// Row-wise one-hot of the argmax (ties → lowest index). Forward emits the
    /// hard assignment; backward passes gradients through unchanged, so the
    /// soft distribution underneath receives the straight-through gradient.
    pub fn hard_max_st(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let mut value = vec![S::ZERO; r * c];
        for i in 0..r {
            let row = &self.node(a).value[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            value[i * c + best] = S::ONE;
        }
        let rg = self.node(a).requires_grad;
        self.push(Op::HardMaxST(a), r, c, value, rg)
    }

    pub fn sum_scalars(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        if ids.is_empty() {
            return Err(CoreError::Empty { what: "sum_scalars inputs" });
        }
        let mut s = S::ZERO;
        let mut rg = false;
        for &id in ids {
            let n = self.node(id);
            if (n.rows, n.cols) != (1, 1) {
                return Err(shape_err("sum_scalars", format!("input is [{},{}], want [1,1]", n.rows, n.cols)));
            }
            s = s + n.value[0];
            rg |= n.requires_grad;
        }
        Ok(self.push(Op::SumScalars(ids.to_vec()), 1, 1, vec![s], rg))
    }

    /// Hard min over [1,1] inputs. Returns (node, winner index).
    pub fn min_scalars(&mut self, ids: &[TensorId]) -> Result<(TensorId, usize)> {
        if ids.is_empty() {
            return Err(CoreError::Empty { what: "min_scalars inputs" });
        }
        let mut best = 0usize;
        let mut rg = false;
        for (j, &id) in ids.iter().enumerate() {
            let n = self.node(id);
            if (n.rows, n.cols) != (1, 1) {
                return Err(shape_err("min_scalars", format!("input is [{},{}], want [1,1]", n.rows, n.cols)));
            }
            rg |= n.requires_grad;
            if n.value[0] < self.node(ids[best]).value[0] {
                best = j;
            }
        }
        let v = self.node(ids[best]).value[0];
        Ok((self.push(Op::MinScalars(ids.to_vec()), 1, 1, vec![v], rg), best))
    }

    // ---- composite builders -------------------------------------------

    /// x·W + b with b broadcast over rows.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// softmax(q·kᵀ/√d)·v — the single-head attention kernel.
    pub fn scaled_dot_attention(&mut self, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
        let (_, d) = self.shape(q);
        let (kr, kd) = self.shape(k);
        let (vr, _) = self.shape(v);
        if kd != d || vr != kr {
            return Err(shape_err(
                "scaled_dot_attention",
                format!("q [*,{d}], k [{kr},{kd}], v [{vr},*]"),
            ));
        }
        let kt = self.transpose(k);
        let logits = self.matmul(q, kt)?;
        let scaled = self.scale(logits, S::ONE / S::from_f64(d as f64).sqrt());
        let attn = self.softmax(scaled);
        self.matmul(attn, v)
    }

    /// Gumbel-softmax with optional straight-through hard assignment.
    /// `rng = None` turns noise off, reducing to softmax(logits/temperature).
    pub fn gumbel_softmax_st(
        &mut self,
        logits: TensorId,
        temperature: f32,
        hard: bool,
        rng: Option<&mut Rng>,
    ) -> Result<TensorId> {
        if !(temperature > 0.0) {
            return Err(CoreError::InvalidArg {
                what: "gumbel_softmax_st",
                detail: format!("temperature must be > 0, got {temperature}"),
            });
        }
        let (r, c) = self.shape(logits);
        let perturbed = match rng {
            Some(rng) => {
                let noise: Vec<S> = (0..r * c).map(|_| rng.gumbel()).collect();
                let noise = self.constant(r, c, noise)?;
                self.add(logits, noise)?
            }
            None => logits,
        };
        let scaled = self.scale(perturbed, S::ONE / S::from_f32(temperature));
        let soft = self.softmax(scaled);
        Ok(if hard { self.hard_max_st(soft) } else { soft })
    }

    // ---- backward ------------------------------------------------------

    /// Reverse pass from a scalar root. Returns per-node gradient buffers
    /// indexed like the tape; use `grad(id)` afterwards.
    pub fn backward(&mut self, root: TensorId) -> Result<GradStore<S>> {
        let rn = self.node(root);
        if (rn.rows, rn.cols) != (1, 1) {
            return Err(CoreError::InvalidArg {
                what: "backward",
                detail: format!("root must be scalar [1,1], got [{},{}]", rn.rows, rn.cols),
            });
        }
        if !rn.value[0].is_finite() {
            return Err(CoreError::NonFinite { where_: "backward root", detail: format!("loss = {:?}", rn.value[0].to_f64()) });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![S::ONE]);

        for idx in (0..=root.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(a);
                    let (_, n) = self.shape(b);
                    if self.nodes[a.0].requires_grad {
                        let bt = ops::transpose(&self.nodes[b.0].value, k, n);
                        let da = ops::matmul(&g, &bt, m, n, k);
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let at = ops::transpose(&self.nodes[a.0].value, m, k);
                        let db = ops::matmul(&at, &g, k, m, n);
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate_if(&mut grads, &self.nodes, a, &g);
                    accumulate_if(&mut grads, &self.nodes, b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate_if(&mut grads, &self.nodes, a, &g);
                    if self.nodes[b.0].requires_grad {
                        let neg: Vec<S> = g.iter().map(|&v| -v).collect();
                        accumulate(&mut grads, b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = g.iter().zip(&self.nodes[b.0].value).map(|(&gv, &bv)| gv * bv).collect();
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<S> = g.iter().zip(&self.nodes[a.0].value).map(|(&gv, &av)| gv * av).collect();
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::Scale(a, c) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = g.iter().map(|&v| v * c).collect();
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::AddConst(a, _) => accumulate_if(&mut grads, &self.nodes, a, &g),
                Op::AddRow(a, row) => {
                    accumulate_if(&mut grads, &self.nodes, a, &g);
                    if self.nodes[row.0].requires_grad {
                        let mut dr = vec![S::ZERO; cols];
                        for (i, &gv) in g.iter().enumerate() {
                            dr[i % cols] = dr[i % cols] + gv;
                        }
                        accumulate(&mut grads, row, &dr);
                    }
                }
                Op::MulRow(a, row) => {
                    let rowv = &self.nodes[row.0].value;
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = g.iter().enumerate().map(|(i, &gv)| gv * rowv[i % cols]).collect();
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[row.0].requires_grad {
                        let av = &self.nodes[a.0].value;
                        let mut dr = vec![S::ZERO; cols];
                        for (i, &gv) in g.iter().enumerate() {
                            dr[i % cols] = dr[i % cols] + gv * av[i];
                        }
                        accumulate(&mut grads, row, &dr);
                    }
                }
                Op::ScaleRows(a, s) => {
                    let sv = &self.nodes[s.0].value;
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = g.iter().enumerate().map(|(i, &gv)| gv * sv[i / cols]).collect();
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[s.0].requires_grad {
                        let av = &self.nodes[a.0].value;
                        let mut ds = vec![S::ZERO; rows];
                        for (i, &gv) in g.iter().enumerate() {
                            ds[i / cols] = ds[i / cols] + gv * av[i];
                        }
                        accumulate(&mut grads, s, &ds);
                    }
                }
                Op::Transpose(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::transpose(&g, rows, cols);
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::Reshape(a) => accumulate_if(&mut grads, &self.nodes, a, &g),
                Op::Gelu(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::gelu_backward(&self.nodes[a.0].value, &g);
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::Softmax(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::softmax_backward_rows(&self.nodes[idx].value, &g, rows, cols);
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::LayerNorm(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::layernorm_backward_rows(
                            &self.nodes[a.0].value,
                            &self.nodes[idx].value,
                            &g,
                            rows,
                            cols,
                            S::from_f64(LAYERNORM_EPS),
                        );
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::L2NormRows(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::l2_normalize_backward_rows(
                            &self.nodes[a.0].value,
                            &g,
                            rows,
                            cols,
                            S::from_f64(L2_NORM_EPS),
                        );
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::MeanRows(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (ar, ac) = self.shape(a);
                        let inv = S::ONE / S::from_f64(ar as f64);
                        let mut da = vec![S::ZERO; ar * ac];
                        for i in 0..ar {
                            for j in 0..ac {
                                da[i * ac + j] = g[j] * inv;
                            }
                        }
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::SumRows(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (ar, ac) = self.shape(a);
                        let mut da = vec![S::ZERO; ar * ac];
                        for i in 0..ar {
                            da[i * ac..(i + 1) * ac].copy_from_slice(&g);
                        }
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::MeanAll(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (ar, ac) = self.shape(a);
                        let gv = g[0] / S::from_f64((ar * ac) as f64);
                        let da = vec![gv; ar * ac];
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::SumAll(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (ar, ac) = self.shape(a);
                        let da = vec![g[0]; ar * ac];
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::GatherRows(a, indices) => {
                    if self.nodes[a.0].requires_grad {
                        let (ar, ac) = self.shape(a);
                        let mut da = vec![S::ZERO; ar * ac];
                        for (out_i, &src_i) in indices.iter().enumerate() {
                            for j in 0..ac {
                                da[src_i * ac + j] = da[src_i * ac + j] + g[out_i * ac + j];
                            }
                        }
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    if self.nodes[a.0].requires_grad {
                        let (ar, ac) = self.shape(a);
                        let mut da = vec![S::ZERO; ar * ac];
                        for i in 0..rows {
                            for j in 0..cols {
                                da[i * ac + start + j] = g[i * cols + j];
                            }
                        }
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (ar, ac) = self.shape(a);
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, a, &g[..ar * ac]);
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, b, &g[ar * ac..]);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ar, ac) = self.shape(a);
                    let (_, bc) = self.shape(b);
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![S::ZERO; ar * ac];
                        for i in 0..ar {
                            da[i * ac..(i + 1) * ac].copy_from_slice(&g[i * cols..i * cols + ac]);
                        }
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = vec![S::ZERO; ar * bc];
                        for i in 0..ar {
                            db[i * bc..(i + 1) * bc].copy_from_slice(&g[i * cols + ac..(i + 1) * cols]);
                        }
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::BroadcastRow(a) => {
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![S::ZERO; cols];
                        for i in 0..rows {
                            for j in 0..cols {
                                da[j] = da[j] + g[i * cols + j];
                            }
                        }
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::Recip(a) => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = g
                            .iter()
                            .zip(&self.nodes[a.0].value)
                            .map(|(&gv, &x)| -gv / (x * x))
                            .collect();
                        accumulate(&mut grads, a, &da);
                    }
                }
                Op::MseLoss(a, b) => {
                    let n = S::from_f64(self.nodes[a.0].value.len() as f64);
                    let two = S::from_f64(2.0);
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = self.nodes[a.0]
                            .value
                            .iter()
                            .zip(&self.nodes[b.0].value)
                            .map(|(&x, &y)| g[0] * two * (x - y) / n)
                            .collect();
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<S> = self.nodes[a.0]
                            .value
                            .iter()
                            .zip(&self.nodes[b.0].value)
                            .map(|(&x, &y)| -(g[0] * two * (x - y) / n))
                            .collect();
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::L1Loss(a, b) => {
                    let n = S::from_f64(self.nodes[a.0].value.len() as f64);
                    let sign = |x: S, y: S| {
                        if x > y {
                            S::ONE
                        } else if x < y {
                            -S::ONE
                        } else {
                            S::ZERO
                        }
                    };
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<S> = self.nodes[a.0]
                            .value
                            .iter()
                            .zip(&self.nodes[b.0].value)
                            .map(|(&x, &y)| g[0] * sign(x, y) / n)
                            .collect();
                        accumulate(&mut grads, a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<S> = self.nodes[a.0]
                            .value
                            .iter()
                            .zip(&self.nodes[b.0].value)
                            .map(|(&x, &y)| -(g[0] * sign(x, y) / n))
                            .collect();
                        accumulate(&mut grads, b, &db);
                    }
                }
                Op::HardMaxST(a) => accumulate_if(&mut grads, &self.nodes, a, &g),
                Op::SumScalars(ids) => {
                    for id in ids {
                        accumulate_if(&mut grads, &self.nodes, id, &g);
                    }
                }
                Op::MinScalars(ids) => {
                    // Recompute the winner with the same tie rule as forward.
                    let mut best = 0usize;
                    for (j, id) in ids.iter().enumerate() {
                        if self.nodes[id.0].value[0] < self.nodes[ids[best].0].value[0] {
                            best = j;
                        }
                    }
                    accumulate_if(&mut grads, &self.nodes, ids[best], &g);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(GradStore { grads })
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], id: TensorId, delta: &[S]) {
    match &mut grads[id.0] {
        Some(buf) => {
            for (b, &d) in buf.iter_mut().zip(delta) {
                *b = *b + d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_if<S: Scalar>(grads: &mut [Option<Vec<S>>], nodes: &[Node<S>], id: TensorId, delta: &[S]) {
    if nodes[id.0].requires_grad {
        accumulate(grads, id, delta);
    }
}

/// Gradients from one backward pass, indexed by the graph's TensorIds.
pub struct GradStore<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> GradStore<S> {
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn grad_f32(&self, id: TensorId) -> Option<Vec<f32>> {
        self.grad(id).map(|g| g.iter().map(|v| v.to_f64() as f32).collect())
    }
}
