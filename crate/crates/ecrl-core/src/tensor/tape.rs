//! Reverse-mode gradient tape.
//!
//! Each forward pass records its operations onto a fresh [`Tape`]; calling
//! [`Tape::backward`] on a scalar loss replays the tape in reverse and
//! accumulates gradients into every node that requires them. Tapes are
//! single-threaded and discarded after backward; independent samples run on
//! independent tapes.

use super::{Scalar, Tensor, COSINE_EPS};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    /// `[m×n] + [1×n]`, bias broadcast over rows.
    AddBias(TensorId, TensorId),
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    Softplus(TensorId),
    Tanh(TensorId),
    SoftmaxRows(TensorId),
    LogSoftmaxRows(TensorId),
    /// Extract row `r` as a `1×n` vector.
    Row(TensorId, usize),
    /// Stack `1×n` vectors into an `m×n` matrix.
    StackRows(Vec<TensorId>),
    /// Concatenate along columns; all inputs share the row count.
    ConcatCols(Vec<TensorId>),
    /// Columns `[c0, c1)` of the input.
    SliceCols(TensorId, usize, usize),
    Dot(TensorId, TensorId),
    SumAll(TensorId),
    /// Row sums as an `m×1` column.
    RowSums(TensorId),
    /// `out[i][j] = mat[i][j] / (den[i] + eps)` with `den` an `m×1` column.
    DivRowsEps(TensorId, TensorId, f64),
    /// `out[i][j] = cos(a_i, b_j)` over rows of two `·×d` matrices.
    CosineMatrix(TensorId, TensorId),
}

struct Node<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    op: Op,
    requires_grad: bool,
}

/// A Wengert list: forward values plus enough structure to run backward once.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    /// Debug hook: scales the left-operand gradient of every matmul.
    /// Used as a negative control for the gradient checker.
    corrupt_matmul_lhs: Option<f64>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            corrupt_matmul_lhs: None,
        }
    }

    /// Deliberately corrupt the matmul gradient rule (negative control).
    pub fn corrupt_matmul_gradient(&mut self, factor: f64) {
        self.corrupt_matmul_lhs = Some(factor);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<S>, op: Op, rg: bool) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad: rg,
        });
        self.grads.push(None);
        TensorId(self.nodes.len() - 1)
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape_of(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.shape_of(id)
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn value(&self, id: TensorId) -> Tensor<S> {
        let n = &self.nodes[id.0];
        Tensor::new(n.rows, n.cols, n.data.clone()).expect("node shape is consistent")
    }

    /// Gradient of the last backward pass w.r.t. `id`, if one was produced.
    pub fn grad(&self, id: TensorId) -> Option<Tensor<S>> {
        let n = &self.nodes[id.0];
        self.grads[id.0]
            .as_ref()
            .map(|g| Tensor::new(n.rows, n.cols, g.clone()).expect("grad shape matches node"))
    }

    /// Gradient of `id`, treating "not reached by backward" as zero.
    pub fn grad_or_zero(&self, id: TensorId) -> Tensor<S> {
        let n = &self.nodes[id.0];
        match &self.grads[id.0] {
            Some(g) => Tensor::new(n.rows, n.cols, g.clone()).expect("grad shape matches node"),
            None => Tensor::zeros(n.rows, n.cols),
        }
    }

    // ── Leaves ───────────────────────────────────────────────────────────

    /// Record a constant input; no gradient flows into it.
    pub fn constant(&mut self, t: &Tensor<S>) -> TensorId {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Record a trainable parameter; backward will populate its gradient.
    pub fn param(&mut self, t: &Tensor<S>) -> TensorId {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, true)
    }

    // ── Elementwise and linear ops ───────────────────────────────────────

    fn check_same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<(usize, usize)> {
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::Dimension(format!(
                "{what}: {ar}x{ac} vs {br}x{bc}"
            )));
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.check_same_shape(a, b, "add")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, data, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.check_same_shape(a, b, "sub")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, data, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.check_same_shape(a, b, "mul")?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(r, c, data, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (rows, cols) = self.shape_of(a);
        let k = S::from_f64(c);
        let data = self.nodes[a.0].data.iter().map(|&x| x * k).collect();
        let rg = self.rg(a);
        self.push(rows, cols, data, Op::Scale(a, c), rg)
    }

    pub fn add_bias(&mut self, mat: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape_of(mat);
        let (br, bc) = self.shape_of(bias);
        if br != 1 || bc != n {
            return Err(Error::Dimension(format!(
                "add_bias: matrix {m}x{n} with bias {br}x{bc}"
            )));
        }
        let mut data = self.nodes[mat.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = data[i * n + j] + self.nodes[bias.0].data[j];
            }
        }
        let rg = self.rg(mat) || self.rg(bias);
        Ok(self.push(m, n, data, Op::AddBias(mat, bias), rg))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.shape_of(a);
        let (k2, n) = self.shape_of(b);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: {m}x{k} · {k2}x{n}"
            )));
        }
        let adata = &self.nodes[a.0].data;
        let bdata = &self.nodes[b.0].data;
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let av = adata[i * k + p];
                if av == S::zero() {
                    continue;
                }
                let brow = &bdata[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + av * brow[j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape_of(a);
        let src = &self.nodes[a.0].data;
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(n, m, out, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (m, n) = self.shape_of(a);
        if m * n != rows * cols {
            return Err(Error::Dimension(format!(
                "reshape {m}x{n} -> {rows}x{cols}"
            )));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.rg(a);
        Ok(self.push(rows, cols, data, Op::Reshape(a), rg))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape_of(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.max(S::zero())).collect();
        let rg = self.rg(a);
        self.push(m, n, data, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape_of(a);
        let one = S::one();
        let data = self.nodes[a.0].data.iter().map(|&x| one / (one + (-x).exp())).collect();
        let rg = self.rg(a);
        self.push(m, n, data, Op::Sigmoid(a), rg)
    }

    /// `ln(1+eˣ)`, computed as `max(x,0) + ln(1+e^{−|x|})` for stability.
    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape_of(a);
        let data = self.nodes[a.0].data
            .iter()
            .map(|&x| x.max(S::zero()) + (-x.abs()).exp().ln_1p())
            .collect();
        let rg = self.rg(a);
        self.push(m, n, data, Op::Softplus(a), rg)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape_of(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let rg = self.rg(a);
        self.push(m, n, data, Op::Tanh(a), rg)
    }

    // ── Softmax family ───────────────────────────────────────────────────

    /// Softmax along each row, with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape_of(a);
        if n == 0 {
            return Err(Error::Dimension("softmax over an empty axis".into()));
        }
        let src = &self.nodes[a.0].data;
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                sum = sum + e;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] / sum;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(m, n, out, Op::SoftmaxRows(a), rg))
    }

    /// Column-wise softmax, via transposes.
    pub fn softmax_cols(&mut self, a: TensorId) -> Result<TensorId> {
        let t = self.transpose(a);
        let s = self.softmax_rows(t)?;
        Ok(self.transpose(s))
    }

    /// Log-softmax along each row.
    pub fn log_softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape_of(a);
        if n == 0 {
            return Err(Error::Dimension("log_softmax over an empty axis".into()));
        }
        let src = &self.nodes[a.0].data;
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for j in 0..n {
                sum = sum + (row[j] - mx).exp();
            }
            let lse = mx + sum.ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(m, n, out, Op::LogSoftmaxRows(a), rg))
    }

    // ── Structure ops ────────────────────────────────────────────────────

    pub fn row(&mut self, a: TensorId, r: usize) -> Result<TensorId> {
        let (m, n) = self.shape_of(a);
        if r >= m {
            return Err(Error::Dimension(format!("row {r} of a {m}x{n} matrix")));
        }
        let data = self.nodes[a.0].data[r * n..(r + 1) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(1, n, data, Op::Row(a, r), rg))
    }

    pub fn stack_rows(&mut self, rows: &[TensorId]) -> Result<TensorId> {
        if rows.is_empty() {
            return Err(Error::Dimension("stack_rows of zero rows".into()));
        }
        let (_, n) = self.shape_of(rows[0]);
        let mut data = Vec::with_capacity(rows.len() * n);
        let mut rg = false;
        for &r in rows {
            let (rr, rc) = self.shape_of(r);
            if rr != 1 || rc != n {
                return Err(Error::Dimension(format!(
                    "stack_rows expects 1x{n} rows, got {rr}x{rc}"
                )));
            }
            data.extend_from_slice(&self.nodes[r.0].data);
            rg |= self.rg(r);
        }
        Ok(self.push(rows.len(), n, data, Op::StackRows(rows.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_cols of zero parts".into()));
        }
        let (m, _) = self.shape_of(parts[0]);
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        let mut rg = false;
        for &p in parts {
            let (pm, pn) = self.shape_of(p);
            if pm != m {
                return Err(Error::Dimension(format!(
                    "concat_cols row mismatch: {m} vs {pm}"
                )));
            }
            widths.push(pn);
            total += pn;
            rg |= self.rg(p);
        }
        let mut data = vec![S::zero(); m * total];
        for i in 0..m {
            let mut off = 0;
            for (pi, &p) in parts.iter().enumerate() {
                let w = widths[pi];
                let src = &self.nodes[p.0].data[i * w..(i + 1) * w];
                data[i * total + off..i * total + off + w].copy_from_slice(src);
                off += w;
            }
        }
        Ok(self.push(m, total, data, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: TensorId, c0: usize, c1: usize) -> Result<TensorId> {
        let (m, n) = self.shape_of(a);
        if c0 >= c1 || c1 > n {
            return Err(Error::Dimension(format!(
                "slice_cols [{c0},{c1}) of {m}x{n}"
            )));
        }
        let w = c1 - c0;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&self.nodes[a.0].data[i * n + c0..i * n + c1]);
        }
        let rg = self.rg(a);
        Ok(self.push(m, w, data, Op::SliceCols(a, c0, c1), rg))
    }

    // ── Reductions ───────────────────────────────────────────────────────

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape(a, b, "dot")?;
        let s: S = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(1, 1, vec![s], Op::Dot(a, b), rg))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: S = self.nodes[a.0].data.iter().cloned().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![s], Op::SumAll(a), rg)
    }

    pub fn row_sums(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape_of(a);
        let src = &self.nodes[a.0].data;
        let data = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().cloned().sum())
            .collect();
        let rg = self.rg(a);
        self.push(m, 1, data, Op::RowSums(a), rg)
    }

    /// Divide each row of `mat` by the matching entry of an `m×1` column
    /// plus `eps`.
    pub fn div_rows_eps(&mut self, mat: TensorId, den: TensorId, eps: f64) -> Result<TensorId> {
        let (m, n) = self.shape_of(mat);
        let (dm, dn) = self.shape_of(den);
        if dm != m || dn != 1 {
            return Err(Error::Dimension(format!(
                "div_rows_eps: matrix {m}x{n} with denominator {dm}x{dn}"
            )));
        }
        let e = S::from_f64(eps);
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            let d = self.nodes[den.0].data[i] + e;
            for j in 0..n {
                data[i * n + j] = self.nodes[mat.0].data[i * n + j] / d;
            }
        }
        let rg = self.rg(mat) || self.rg(den);
        Ok(self.push(m, n, data, Op::DivRowsEps(mat, den, eps), rg))
    }

    // ── Cosine similarity ────────────────────────────────────────────────

    /// `out[i][j] = cos(a_i, b_j)` for every pair of rows. Rows with an L2
    /// norm below [`COSINE_EPS`] produce zeros and receive no gradient.
    pub fn cosine_matrix(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (p, d) = self.shape_of(a);
        let (q, d2) = self.shape_of(b);
        if d != d2 {
            return Err(Error::Dimension(format!(
                "cosine_matrix: {p}x{d} vs {q}x{d2}"
            )));
        }
        let eps = S::from_f64(COSINE_EPS);
        let na: Vec<S> = (0..p).map(|i| l2_norm(&self.nodes[a.0].data[i * d..(i + 1) * d])).collect();
        let nb: Vec<S> = (0..q).map(|j| l2_norm(&self.nodes[b.0].data[j * d..(j + 1) * d])).collect();
        let mut out = vec![S::zero(); p * q];
        for i in 0..p {
            if na[i] < eps {
                continue;
            }
            let arow = &self.nodes[a.0].data[i * d..(i + 1) * d];
            for j in 0..q {
                if nb[j] < eps {
                    continue;
                }
                let brow = &self.nodes[b.0].data[j * d..(j + 1) * d];
                let mut dot = S::zero();
                for k in 0..d {
                    dot = dot + arow[k] * brow[k];
                }
                out[i * q + j] = dot / (na[i] * nb[j]);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(p, q, out, Op::CosineMatrix(a, b), rg))
    }

    /// Cosine similarity of two equal-length `1×d` vectors.
    pub fn cosine_sim(&mut self, u: TensorId, v: TensorId) -> Result<TensorId> {
        let (ur, ud) = self.shape_of(u);
        let (vr, vd) = self.shape_of(v);
        if ur != 1 || vr != 1 || ud != vd {
            return Err(Error::Dimension(format!(
                "cosine_sim: {ur}x{ud} vs {vr}x{vd}"
            )));
        }
        self.cosine_matrix(u, v)
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse pass from a `1×1` loss node. Gradients accumulate
    /// additively; each tensor reachable from the loss with
    /// `requires_grad` ends up with a populated gradient.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let (lr, lc) = self.shape_of(loss);
        if lr != 1 || lc != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {lr}x{lc}"
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = self.grads[idx].take().expect("checked above");
            self.propagate(idx, &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: &[S]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn accumulate_at(&mut self, id: TensorId, offset: usize, delta: &[S]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let len = self.nodes[id.0].data.len();
        let slot = &mut self.grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![S::zero(); len]);
        }
        let g = slot.as_mut().expect("just filled");
        for (k, d) in delta.iter().enumerate() {
            g[offset + k] = g[offset + k] + *d;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[S]) -> Result<()> {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g);
                let neg: Vec<S> = g.iter().map(|&x| -x).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let da = zip_map(g, &self.nodes[b.0].data, |x, y| x * y);
                let db = zip_map(g, &self.nodes[a.0].data, |x, y| x * y);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale(a, c) => {
                let k = S::from_f64(c);
                let da: Vec<S> = g.iter().map(|&x| x * k).collect();
                self.accumulate(a, &da);
            }
            Op::AddBias(mat, bias) => {
                self.accumulate(mat, g);
                let (m, n) = self.shape_of(mat);
                let mut db = vec![S::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] = db[j] + g[i * n + j];
                    }
                }
                self.accumulate(bias, &db);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape_of(a);
                let (_, n) = self.shape_of(b);
                // dA = g · Bᵀ
                let mut da = vec![S::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = S::zero();
                        for j in 0..n {
                            acc = acc + g[i * n + j] * self.nodes[b.0].data[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                if let Some(factor) = self.corrupt_matmul_lhs {
                    let f = S::from_f64(factor);
                    for v in da.iter_mut() {
                        *v = *v * f;
                    }
                }
                // dB = Aᵀ · g
                let mut db = vec![S::zero(); k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = S::zero();
                        for i in 0..m {
                            acc = acc + self.nodes[a.0].data[i * k + p] * g[i * n + j];
                        }
                        db[p * n + j] = acc;
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Transpose(a) => {
                let (m, n) = self.shape_of(a);
                // g has shape n×m
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Reshape(a) => {
                self.accumulate(a, g);
            }
            Op::Relu(a) => {
                let y = &self.nodes[idx].data;
                let da: Vec<S> = g
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| if yi > S::zero() { gi } else { S::zero() })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].data;
                let one = S::one();
                let da: Vec<S> = g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (one - yi)).collect();
                self.accumulate(a, &da);
            }
            Op::Softplus(a) => {
                let x = &self.nodes[a.0].data;
                let one = S::one();
                let da: Vec<S> = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| gi * (one / (one + (-xi).exp())))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].data;
                let one = S::one();
                let da: Vec<S> = g.iter().zip(y).map(|(&gi, &yi)| gi * (one - yi * yi)).collect();
                self.accumulate(a, &da);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = self.shape_of(a);
                let y = self.nodes[idx].data.clone();
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut dotgy = S::zero();
                    for j in 0..n {
                        dotgy = dotgy + gr[j] * yr[j];
                    }
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (gr[j] - dotgy);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = self.shape_of(a);
                let y = self.nodes[idx].data.clone();
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    let mut gsum = S::zero();
                    for j in 0..n {
                        gsum = gsum + gr[j];
                    }
                    for j in 0..n {
                        da[i * n + j] = gr[j] - y[i * n + j].exp() * gsum;
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Row(a, r) => {
                let (_, n) = self.shape_of(a);
                self.accumulate_at(a, r * n, g);
            }
            Op::StackRows(rows) => {
                let n = self.shape_of(rows[0]).1;
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(r, &g[i * n..(i + 1) * n]);
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.shape_of(parts[0]).0;
                let total: usize = parts.iter().map(|&p| self.shape_of(p).1).sum();
                let mut off = 0;
                for &p in &parts {
                    let w = self.shape_of(p).1;
                    let mut dp = vec![S::zero(); m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + off..i * total + off + w]);
                    }
                    self.accumulate(p, &dp);
                    off += w;
                }
            }
            Op::SliceCols(a, c0, c1) => {
                let (m, n) = self.shape_of(a);
                let w = c1 - c0;
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    da[i * n + c0..i * n + c1].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(a, &da);
            }
            Op::Dot(a, b) => {
                let g0 = g[0];
                let da: Vec<S> = self.nodes[b.0].data.iter().map(|&x| x * g0).collect();
                let db: Vec<S> = self.nodes[a.0].data.iter().map(|&x| x * g0).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::SumAll(a) => {
                let g0 = g[0];
                let da = vec![g0; self.nodes[a.0].data.len()];
                self.accumulate(a, &da);
            }
            Op::RowSums(a) => {
                let (m, n) = self.shape_of(a);
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[i];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::DivRowsEps(mat, den, eps) => {
                let (m, n) = self.shape_of(mat);
                let e = S::from_f64(eps);
                let mut dmat = vec![S::zero(); m * n];
                let mut dden = vec![S::zero(); m];
                for i in 0..m {
                    let d = self.nodes[den.0].data[i] + e;
                    for j in 0..n {
                        let gij = g[i * n + j];
                        dmat[i * n + j] = gij / d;
                        dden[i] = dden[i] - gij * self.nodes[mat.0].data[i * n + j] / (d * d);
                    }
                }
                self.accumulate(mat, &dmat);
                self.accumulate(den, &dden);
            }
            Op::CosineMatrix(a, b) => {
                let (p, d) = self.shape_of(a);
                let (q, _) = self.shape_of(b);
                let eps = S::from_f64(COSINE_EPS);
                let na: Vec<S> =
                    (0..p).map(|i| l2_norm(&self.nodes[a.0].data[i * d..(i + 1) * d])).collect();
                let nb: Vec<S> =
                    (0..q).map(|j| l2_norm(&self.nodes[b.0].data[j * d..(j + 1) * d])).collect();
                let c = self.nodes[idx].data.clone();
                let mut da = vec![S::zero(); p * d];
                let mut db = vec![S::zero(); q * d];
                for i in 0..p {
                    if na[i] < eps {
                        continue;
                    }
                    for j in 0..q {
                        if nb[j] < eps {
                            continue;
                        }
                        let gij = g[i * q + j];
                        if gij == S::zero() {
                            continue;
                        }
                        let cij = c[i * q + j];
                        for k in 0..d {
                            let ak = self.nodes[a.0].data[i * d + k];
                            let bk = self.nodes[b.0].data[j * d + k];
                            let uk = ak / na[i];
                            let wk = bk / nb[j];
                            da[i * d + k] = da[i * d + k] + gij * (wk - cij * uk) / na[i];
                            db[j * d + k] = db[j * d + k] + gij * (uk - cij * wk) / nb[j];
                        }
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
        }
        Ok(())
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn l2_norm<S: Scalar>(v: &[S]) -> S {
    v.iter().map(|&x| x * x).sum::<S>().sqrt()
}
