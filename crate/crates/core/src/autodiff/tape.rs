use super::params::ParamStore;
use super::tensor::Tensor;
use super::{DiffError, Result};

/// Handle to a value recorded on a [`Tape`].
pub type ValueId = usize;

/// One recorded primitive. Inputs are ids of earlier nodes, so replaying the
/// list in reverse visits operations in exact reverse execution order.
#[derive(Debug, Clone)]
enum Op {
    /// Leaf carrying data (inputs, constants).
    Input,
    /// Leaf snapshotting a parameter slot; gradients flow back to the store.
    Param { slot: usize },
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul { a: ValueId, b: ValueId },
    /// `[m,k] x [n,k]^T -> [m,n]`
    MatMulBT { a: ValueId, b: ValueId },
    /// `[m,n] x [n] -> [m]`
    MatVec { w: ValueId, x: ValueId },
    /// Element-wise sum of same-shaped tensors.
    AddN { parts: Vec<ValueId> },
    /// Add a length-`c` vector to every row of an `[r,c]` matrix.
    AddRowBroadcast { m: ValueId, v: ValueId },
    /// Element-wise product, same shape.
    MulElem { a: ValueId, b: ValueId },
    ScaleConst { x: ValueId, c: f64 },
    Relu { x: ValueId },
    Tanh { x: ValueId },
    Sigmoid { x: ValueId },
    /// Numerically stable softmax over a vector.
    SoftmaxVec { x: ValueId },
    /// `logsumexp(logits) - logits[target]`, a scalar.
    CrossEntropyLogits { logits: ValueId, target: usize },
    /// Element-wise mean over a subset of rows; empty subset yields zeros.
    MeanSelectedRows { m: ValueId, rows: Vec<usize> },
    /// Element-wise max over all rows of a matrix.
    MaxRows { m: ValueId },
    /// `sum_i w[i] * m[i,:]`
    WeightedSumRows { w: ValueId, m: ValueId },
    /// Stack `K` equal-length vectors into a `[K,c]` matrix.
    Stack { parts: Vec<ValueId> },
    /// Concatenate two vectors.
    Concat2 { a: ValueId, b: ValueId },
    /// Contiguous vector slice.
    Slice { x: ValueId, start: usize, len: usize },
    /// Select row `index` of a `[v,d]` matrix.
    EmbedRow { table: ValueId, index: usize },
    /// Inner product of two vectors, a scalar.
    Dot { a: ValueId, b: ValueId },
    /// Sum of all elements, a scalar.
    SumAll { x: ValueId },
    /// Same data, new shape (row-major layout preserved).
    Reshape { x: ValueId },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Wengert tape: eager forward evaluation with recorded operations,
/// reverse accumulation on [`Tape::backward`].
///
/// A tape is built per forward pass and discarded afterwards. Parameter
/// leaves snapshot the store's current values, so the store may be mutated
/// freely once the pass is finished.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        id
    }

    /// Record a data leaf (inputs, constants).
    pub fn input(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Input)
    }

    /// Record a parameter leaf. The tensor is snapshotted from the store;
    /// backward gradients are later folded into the slot's accumulator.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<ValueId> {
        let slot = store.slot(name)?;
        let value = store.value_at(slot).clone();
        Ok(self.push(value, Op::Param { slot }))
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    fn require_rank(&self, op: &'static str, id: ValueId, rank: usize) -> Result<()> {
        if self.shape(id).len() != rank {
            return Err(DiffError::RankMismatch {
                op,
                expected: rank,
                shape: self.shape(id).to_vec(),
            });
        }
        Ok(())
    }

    // ---- forward primitives ------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_rank("matmul", a, 2)?;
        self.require_rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += aip * bb;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }))
    }

    /// `a * b^T` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_bt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_rank("matmul_bt", a, 2)?;
        self.require_rank("matmul_bt", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (n, k2) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul_bt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBT { a, b }))
    }

    /// `w * x` for `w: [m,n]`, `x: [n]`.
    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId> {
        self.require_rank("matvec", w, 2)?;
        self.require_rank("matvec", x, 1)?;
        let (m, n) = (self.shape(w)[0], self.shape(w)[1]);
        if n != self.shape(x)[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matvec",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let (wv, xv) = (self.nodes[w].value.data(), self.nodes[x].value.data());
        let out: Vec<f64> = (0..m)
            .map(|i| wv[i * n..(i + 1) * n].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec { w, x }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.add_n(&[a, b])
    }

    pub fn add_n(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let first = *parts.first().ok_or(DiffError::EmptyInput { op: "add_n" })?;
        for &p in parts {
            if self.shape(p) != self.shape(first) {
                return Err(DiffError::ShapeMismatch {
                    op: "add_n",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let mut out = self.nodes[first].value.data().to_vec();
        for &p in &parts[1..] {
            for (o, v) in out.iter_mut().zip(self.nodes[p].value.data()) {
                *o += v;
            }
        }
        let shape = self.shape(first).to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::AddN {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Add vector `v` to every row of matrix `m`.
    pub fn add_row_broadcast(&mut self, m: ValueId, v: ValueId) -> Result<ValueId> {
        self.require_rank("add_row_broadcast", m, 2)?;
        self.require_rank("add_row_broadcast", v, 1)?;
        let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
        if c != self.shape(v)[0] {
            return Err(DiffError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape(m).to_vec(),
                rhs: self.shape(v).to_vec(),
            });
        }
        let (mv, vv) = (self.nodes[m].value.data(), self.nodes[v].value.data());
        let mut out = mv.to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += vv[j];
            }
        }
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::AddRowBroadcast { m, v }))
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "mul_elem",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::MulElem { a, b }))
    }

    pub fn scale_const(&mut self, x: ValueId, c: f64) -> ValueId {
        let out: Vec<f64> = self.nodes[x].value.data().iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::ScaleConst { x, c })
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.nodes[x].value.data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::Relu { x })
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.nodes[x].value.data().iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.nodes[x]
            .value
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::Sigmoid { x })
    }

    /// Stable softmax over a non-empty vector (max subtraction).
    pub fn softmax_vec(&mut self, x: ValueId) -> Result<ValueId> {
        self.require_rank("softmax", x, 1)?;
        let xv = self.nodes[x].value.data();
        if xv.is_empty() {
            return Err(DiffError::EmptyInput { op: "softmax" });
        }
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        Ok(self.push(Tensor::vector(out), Op::SoftmaxVec { x }))
    }

    /// Token-level cross entropy: `logsumexp(logits) - logits[target]`.
    pub fn cross_entropy_logits(&mut self, logits: ValueId, target: usize) -> Result<ValueId> {
        self.require_rank("cross_entropy", logits, 1)?;
        let lv = self.nodes[logits].value.data();
        if target >= lv.len() {
            return Err(DiffError::IndexOutOfBounds {
                op: "cross_entropy",
                index: target,
                size: lv.len(),
            });
        }
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - lv[target];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropyLogits { logits, target }))
    }

    /// Element-wise mean over the selected rows of a matrix. The empty
    /// selection is defined as the zero vector.
    pub fn mean_selected_rows(&mut self, m: ValueId, rows: Vec<usize>) -> Result<ValueId> {
        self.require_rank("mean_selected_rows", m, 2)?;
        let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
        for &i in &rows {
            if i >= r {
                return Err(DiffError::IndexOutOfBounds {
                    op: "mean_selected_rows",
                    index: i,
                    size: r,
                });
            }
        }
        let mv = self.nodes[m].value.data();
        let mut out = vec![0.0; c];
        if !rows.is_empty() {
            for &i in &rows {
                for j in 0..c {
                    out[j] += mv[i * c + j];
                }
            }
            let k = rows.len() as f64;
            for o in &mut out {
                *o /= k;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::MeanSelectedRows { m, rows }))
    }

    /// Element-wise max over all rows of a non-empty matrix.
    pub fn max_rows(&mut self, m: ValueId) -> Result<ValueId> {
        self.require_rank("max_rows", m, 2)?;
        let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
        if r == 0 {
            return Err(DiffError::EmptyInput { op: "max_rows" });
        }
        let mv = self.nodes[m].value.data();
        let mut out = mv[0..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                out[j] = out[j].max(mv[i * c + j]);
            }
        }
        Ok(self.push(Tensor::vector(out), Op::MaxRows { m }))
    }

    /// `sum_i w[i] * m[i,:]` for `w: [r]`, `m: [r,c]`.
    pub fn weighted_sum_rows(&mut self, w: ValueId, m: ValueId) -> Result<ValueId> {
        self.require_rank("weighted_sum_rows", w, 1)?;
        self.require_rank("weighted_sum_rows", m, 2)?;
        let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
        if self.shape(w)[0] != r {
            return Err(DiffError::ShapeMismatch {
                op: "weighted_sum_rows",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(m).to_vec(),
            });
        }
        let (wv, mv) = (self.nodes[w].value.data(), self.nodes[m].value.data());
        let mut out = vec![0.0; c];
        for i in 0..r {
            let wi = wv[i];
            for j in 0..c {
                out[j] += wi * mv[i * c + j];
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedSumRows { w, m }))
    }

    /// Stack equal-length vectors into a `[K, c]` matrix.
    pub fn stack(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let first = *parts.first().ok_or(DiffError::EmptyInput { op: "stack" })?;
        self.require_rank("stack", first, 1)?;
        let c = self.shape(first)[0];
        let mut out = Vec::with_capacity(parts.len() * c);
        for &p in parts {
            self.require_rank("stack", p, 1)?;
            if self.shape(p)[0] != c {
                return Err(DiffError::ShapeMismatch {
                    op: "stack",
                    lhs: vec![c],
                    rhs: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.nodes[p].value.data());
        }
        Ok(self.push(
            Tensor::new(vec![parts.len(), c], out)?,
            Op::Stack {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat2(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_rank("concat", a, 1)?;
        self.require_rank("concat", b, 1)?;
        let mut out = self.nodes[a].value.data().to_vec();
        out.extend_from_slice(self.nodes[b].value.data());
        Ok(self.push(Tensor::vector(out), Op::Concat2 { a, b }))
    }

    pub fn slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        self.require_rank("slice", x, 1)?;
        let n = self.shape(x)[0];
        if start + len > n {
            return Err(DiffError::IndexOutOfBounds {
                op: "slice",
                index: start + len,
                size: n,
            });
        }
        let out = self.nodes[x].value.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(out), Op::Slice { x, start, len }))
    }

    /// Select row `index` of a `[v, d]` table.
    pub fn embed_row(&mut self, table: ValueId, index: usize) -> Result<ValueId> {
        self.require_rank("embed_row", table, 2)?;
        let rows = self.shape(table)[0];
        if index >= rows {
            return Err(DiffError::IndexOutOfBounds {
                op: "embed_row",
                index,
                size: rows,
            });
        }
        let out = self.nodes[table].value.row(index).to_vec();
        Ok(self.push(Tensor::vector(out), Op::EmbedRow { table, index }))
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_rank("dot", a, 1)?;
        self.require_rank("dot", b, 1)?;
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let v: f64 = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(v), Op::Dot { a, b }))
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let v: f64 = self.nodes[x].value.data().iter().sum();
        self.push(Tensor::scalar(v), Op::SumAll { x })
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x].value.numel() {
            return Err(DiffError::BadShape {
                shape,
                len: self.nodes[x].value.numel(),
            });
        }
        let data = self.nodes[x].value.data().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { x }))
    }

    /// Convenience: input leaf holding a zero vector.
    pub fn zeros(&mut self, shape: Vec<usize>) -> ValueId {
        self.input(Tensor::zeros(shape))
    }

    // ---- reverse pass ------------------------------------------------------

    /// Reverse accumulation from a scalar `loss`, seeding its gradient with 1.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        self.backward_seeded(loss, 1.0)
    }

    /// Reverse accumulation with an explicit seed (e.g. `1/batch` when each
    /// sample's tape contributes a share of a batch-mean loss).
    pub fn backward_seeded(&mut self, loss: ValueId, seed: f64) -> Result<()> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(DiffError::NotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.grads[loss] = Some(vec![seed]);

        for i in (0..=loss).rev() {
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &g);
        }
        Ok(())
    }

    fn acc(&mut self, id: ValueId, f: impl FnOnce(&mut [f64])) {
        let numel = self.nodes[id].value.numel();
        let buf = self.grads[id].get_or_insert_with(|| vec![0.0; numel]);
        f(buf);
    }

    fn propagate(&mut self, out: ValueId, op: &Op, g: &[f64]) {
        match op {
            Op::Input | Op::Param { .. } => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.nodes[*a].value.data().to_vec();
                let bv = self.nodes[*b].value.data().to_vec();
                // dA += g . B^T
                self.acc(*a, |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                // dB += A^T . g
                self.acc(*b, |db| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] += s;
                        }
                    }
                });
            }
            Op::MatMulBT { a, b } => {
                // out = A . B^T; A: [m,k], B: [n,k], g: [m,n]
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                let av = self.nodes[*a].value.data().to_vec();
                let bv = self.nodes[*b].value.data().to_vec();
                // dA += g . B
                self.acc(*a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gij * bv[j * k + p];
                            }
                        }
                    }
                });
                // dB += g^T . A
                self.acc(*b, |db| {
                    for j in 0..n {
                        for i in 0..m {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                db[j * k + p] += gij * av[i * k + p];
                            }
                        }
                    }
                });
            }
            Op::MatVec { w, x } => {
                let (m, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                let wv = self.nodes[*w].value.data().to_vec();
                let xv = self.nodes[*x].value.data().to_vec();
                self.acc(*w, |dw| {
                    for i in 0..m {
                        for j in 0..n {
                            dw[i * n + j] += g[i] * xv[j];
                        }
                    }
                });
                self.acc(*x, |dx| {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += wv[i * n + j] * g[i];
                        }
                        dx[j] += s;
                    }
                });
            }
            Op::AddN { parts } => {
                for &p in parts {
                    self.acc(p, |dp| {
                        for (d, gg) in dp.iter_mut().zip(g) {
                            *d += gg;
                        }
                    });
                }
            }
            Op::AddRowBroadcast { m, v } => {
                let (r, c) = (self.shape(*m)[0], self.shape(*m)[1]);
                self.acc(*m, |dm| {
                    for (d, gg) in dm.iter_mut().zip(g) {
                        *d += gg;
                    }
                });
                self.acc(*v, |dv| {
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::MulElem { a, b } => {
                let av = self.nodes[*a].value.data().to_vec();
                let bv = self.nodes[*b].value.data().to_vec();
                self.acc(*a, |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bv[i];
                    }
                });
                self.acc(*b, |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * av[i];
                    }
                });
            }
            Op::ScaleConst { x, c } => {
                let c = *c;
                self.acc(*x, |dx| {
                    for (d, gg) in dx.iter_mut().zip(g) {
                        *d += c * gg;
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.nodes[*x].value.data().to_vec();
                self.acc(*x, |dx| {
                    for i in 0..dx.len() {
                        if xv[i] > 0.0 {
                            dx[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh { x } => {
                let yv = self.nodes[out].value.data().to_vec();
                self.acc(*x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * (1.0 - yv[i] * yv[i]);
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = self.nodes[out].value.data().to_vec();
                self.acc(*x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::SoftmaxVec { x } => {
                let yv = self.nodes[out].value.data().to_vec();
                let inner: f64 = g.iter().zip(&yv).map(|(gg, y)| gg * y).sum();
                self.acc(*x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += yv[i] * (g[i] - inner);
                    }
                });
            }
            Op::CrossEntropyLogits { logits, target } => {
                let lv = self.nodes[*logits].value.data().to_vec();
                let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = lv.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let t = *target;
                self.acc(*logits, |dl| {
                    for i in 0..dl.len() {
                        let p = exps[i] / sum;
                        let onehot = if i == t { 1.0 } else { 0.0 };
                        dl[i] += g[0] * (p - onehot);
                    }
                });
            }
            Op::MeanSelectedRows { m, rows } => {
                if rows.is_empty() {
                    return;
                }
                let c = self.shape(*m)[1];
                let k = rows.len() as f64;
                let rows = rows.clone();
                self.acc(*m, |dm| {
                    for &i in &rows {
                        for j in 0..c {
                            dm[i * c + j] += g[j] / k;
                        }
                    }
                });
            }
            Op::MaxRows { m } => {
                // Route each column's gradient to the first row attaining the max.
                let (r, c) = (self.shape(*m)[0], self.shape(*m)[1]);
                let mv = self.nodes[*m].value.data().to_vec();
                self.acc(*m, |dm| {
                    for j in 0..c {
                        let mut best = 0;
                        for i in 1..r {
                            if mv[i * c + j] > mv[best * c + j] {
                                best = i;
                            }
                        }
                        dm[best * c + j] += g[j];
                    }
                });
            }
            Op::WeightedSumRows { w, m } => {
                let (r, c) = (self.shape(*m)[0], self.shape(*m)[1]);
                let wv = self.nodes[*w].value.data().to_vec();
                let mv = self.nodes[*m].value.data().to_vec();
                self.acc(*w, |dw| {
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g[j] * mv[i * c + j];
                        }
                        dw[i] += s;
                    }
                });
                self.acc(*m, |dm| {
                    for i in 0..r {
                        let wi = wv[i];
                        for j in 0..c {
                            dm[i * c + j] += wi * g[j];
                        }
                    }
                });
            }
            Op::Stack { parts } => {
                let c = self.shape(out)[1];
                for (i, &p) in parts.iter().enumerate() {
                    let seg = &g[i * c..(i + 1) * c];
                    self.acc(p, |dp| {
                        for (d, gg) in dp.iter_mut().zip(seg) {
                            *d += gg;
                        }
                    });
                }
            }
            Op::Concat2 { a, b } => {
                let na = self.nodes[*a].value.numel();
                let (ga, gb) = g.split_at(na);
                self.acc(*a, |da| {
                    for (d, gg) in da.iter_mut().zip(ga) {
                        *d += gg;
                    }
                });
                self.acc(*b, |db| {
                    for (d, gg) in db.iter_mut().zip(gb) {
                        *d += gg;
                    }
                });
            }
            Op::Slice { x, start, len } => {
                let (start, len) = (*start, *len);
                self.acc(*x, |dx| {
                    for i in 0..len {
                        dx[start + i] += g[i];
                    }
                });
            }
            Op::EmbedRow { table, index } => {
                let d = self.shape(*table)[1];
                let index = *index;
                self.acc(*table, |dt| {
                    for j in 0..d {
                        dt[index * d + j] += g[j];
                    }
                });
            }
            Op::Dot { a, b } => {
                let av = self.nodes[*a].value.data().to_vec();
                let bv = self.nodes[*b].value.data().to_vec();
                self.acc(*a, |da| {
                    for i in 0..da.len() {
                        da[i] += g[0] * bv[i];
                    }
                });
                self.acc(*b, |db| {
                    for i in 0..db.len() {
                        db[i] += g[0] * av[i];
                    }
                });
            }
            Op::SumAll { x } => {
                self.acc(*x, |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::Reshape { x } => {
                self.acc(*x, |dx| {
                    for (d, gg) in dx.iter_mut().zip(g) {
                        *d += gg;
                    }
                });
            }
        }
    }

    /// Gradient of a node after [`Tape::backward`]; `None` if no gradient flowed.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    /// Fold parameter-leaf gradients into the store's accumulators, scaled.
    ///
    /// Every slot stays defined: slots untouched by this pass keep their
    /// current (possibly zero) accumulator. Gradients add across calls, which
    /// is what batch accumulation and shared-weight reuse rely on.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore, scale: f64) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { slot } = node.op {
                if let Some(g) = &self.grads[i] {
                    store.add_to_grad(slot, g, scale);
                }
            }
        }
    }
}

/// Ids of one recurrent cell's parameters on a tape: fused gate kernels
/// `w: [4h, d_in]`, `u: [4h, h]` and bias `b: [4h]`, gate order
/// input/forget/candidate/output.
#[derive(Debug, Clone, Copy)]
pub struct CellParamIds {
    pub w: ValueId,
    pub u: ValueId,
    pub b: ValueId,
}

/// One step of the gated recurrent update used by both the sequence encoder
/// and the decoder: logistic input/forget/output gates, tanh candidate.
///
/// `z = w.x + u.h_prev + b`; `c = sigm(z_i) * tanh(z_g) + sigm(z_f) * c_prev`;
/// `h = sigm(z_o) * tanh(c)`.
pub fn recurrent_cell(
    tape: &mut Tape,
    x: ValueId,
    h_prev: ValueId,
    c_prev: ValueId,
    p: &CellParamIds,
) -> Result<(ValueId, ValueId)> {
    let four_h = tape.value(p.b).shape()[0];
    let h_dim = four_h / 4;
    if tape.value(h_prev).shape() != [h_dim] || tape.value(c_prev).shape() != [h_dim] {
        return Err(DiffError::ShapeMismatch {
            op: "recurrent_cell",
            lhs: vec![h_dim],
            rhs: tape.value(h_prev).shape().to_vec(),
        });
    }
    let wx = tape.matvec(p.w, x)?;
    let uh = tape.matvec(p.u, h_prev)?;
    let z = tape.add_n(&[wx, uh, p.b])?;

    let zi = tape.slice(z, 0, h_dim)?;
    let zf = tape.slice(z, h_dim, h_dim)?;
    let zg = tape.slice(z, 2 * h_dim, h_dim)?;
    let zo = tape.slice(z, 3 * h_dim, h_dim)?;

    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);

    let fc = tape.mul_elem(f, c_prev)?;
    let ig = tape.mul_elem(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul_elem(o, tc)?;
    Ok((h, c))
}
