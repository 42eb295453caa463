//! Dynamic reverse-mode tape over 2-D f64 tensors.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{axpy, dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, softmax_in_place, transpose};
use super::params::{ParamId, ParameterStore};
use super::{NumericsError, Tensor};

/// Handle of a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Undirected or directed neighbor lists, shared between ops.
pub type Adjacency = Rc<Vec<Vec<usize>>>;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    ReplaceRows { base: Var, src: Var, positions: Vec<usize> },
    MeanRows(Var),
    BroadcastRows(Var),
    SumAll(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f64>, count: usize },
    NeighborMean { x: Var, adj: Adjacency },
    Gat { z_self: Var, z_nb: Var, a_src: Var, a_dst: Var, heads: usize, adj: Adjacency, alpha: Vec<Vec<f64>>, raw: Vec<Vec<f64>> },
    CausalAttention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

pub const GAT_SLOPE: f64 = 0.2;
const LN_EPS: f64 = 1e-5;

/// A computation graph recorded in execution order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: vec![a.0, a.1],
        rhs: vec![b.0, b.1],
    }
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: Vec::new(),
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("node shapes are consistent")
    }

    /// Gradient of the last backward pass, zeros if none reached `v`.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let n = &self.nodes[v.0];
        if n.grad.is_empty() {
            vec![0.0; n.value.len()]
        } else {
            n.grad.clone()
        }
    }

    /// A constant (no gradient).
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var, NumericsError> {
        if value.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                op: "constant",
                lhs: vec![rows, cols],
                rhs: vec![value.len()],
            });
        }
        Ok(self.push(rows, cols, value, false, Op::Leaf))
    }

    /// A differentiable leaf that is not a stored parameter.
    pub fn variable(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var, NumericsError> {
        let v = self.constant(rows, cols, value)?;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    /// Binds a stored parameter as a leaf. 1-D parameters become row vectors.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        let t = store.value(id);
        let (r, c) = t.as_matrix();
        self.push(r, c, t.data.clone(), true, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, ng, Op::MatMul(a, b)))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul_t", (m, k), (n, k2)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, ng, Op::MatMulT(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, ng, Op::Add(a, b)))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(shape_err("add_row", (r, c), self.shape(row)));
        }
        let bias = self.value(row).to_vec();
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(r, c, out, ng, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, ng, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        let ng = self.ng(a);
        self.push(r, c, out, ng, Op::Scale(a, s))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            cols += self.shape(p).1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, cols, out, ng, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += self.shape(p).0;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, cols, out, ng, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(shape_err("slice_cols", (r, c), (start, len)));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.value(a)[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(r, len, out, ng, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(shape_err("slice_rows", (r, c), (start, len)));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(len, c, out, ng, Op::SliceRows(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = transpose(self.value(a), r, c);
        let ng = self.ng(a);
        self.push(c, r, out, ng, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(r, c, out, ng, Op::SoftmaxRows(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let ng = self.ng(a);
        self.push(r, c, out, ng, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let ng = self.ng(a);
        self.push(r, c, out, ng, Op::LeakyRelu(a, slope))
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(shape_err("layer_norm", (r, c), self.shape(gamma)));
        }
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.value(x)[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / libm::sqrt(var + LN_EPS);
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(r, c, out, ng, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Rows `ids` of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= r {
                return Err(NumericsError::IndexOutOfRange { op: "gather_rows", index: i, len: r });
            }
            out.extend_from_slice(&self.value(table)[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(ids.len(), c, out, ng, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// `base` with row `positions[i]` replaced by row `i` of `src`.
    pub fn replace_rows(&mut self, base: Var, positions: &[usize], src: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(base);
        let (sr, sc) = self.shape(src);
        if sc != c || sr != positions.len() {
            return Err(shape_err("replace_rows", (r, c), (sr, sc)));
        }
        let mut out = self.value(base).to_vec();
        for (i, &p) in positions.iter().enumerate() {
            if p >= r {
                return Err(NumericsError::IndexOutOfRange { op: "replace_rows", index: p, len: r });
            }
            out[p * c..(p + 1) * c].copy_from_slice(&self.value(src)[i * c..(i + 1) * c]);
        }
        let ng = self.ng(base) || self.ng(src);
        Ok(self.push(r, c, out, ng, Op::ReplaceRows { base, src, positions: positions.to_vec() }))
    }

    /// Column means, `1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c) {
            axpy(1.0 / r as f64, row, &mut out);
        }
        let ng = self.ng(a);
        self.push(1, c, out, ng, Op::MeanRows(a))
    }

    /// Repeats a `1 x n` row `count` times.
    pub fn broadcast_rows(&mut self, a: Var, count: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(a);
        if r != 1 {
            return Err(shape_err("broadcast_rows", (r, c), (1, c)));
        }
        let row = self.value(a).to_vec();
        let mut out = Vec::with_capacity(count * c);
        for _ in 0..count {
            out.extend_from_slice(&row);
        }
        let ng = self.ng(a);
        Ok(self.push(count, c, out, ng, Op::BroadcastRows(a)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], ng, Op::SumAll(a))
    }

    /// Mean token cross-entropy over rows whose `mask` entry is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(logits);
        if targets.len() != r || mask.len() != r {
            return Err(shape_err("cross_entropy", (r, c), (targets.len(), mask.len())));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        let mut count = 0;
        for i in 0..r {
            if !mask[i] {
                continue;
            }
            if targets[i] >= c {
                return Err(NumericsError::IndexOutOfRange { op: "cross_entropy", index: targets[i], len: c });
            }
            let row = &mut probs[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
            loss += lse - row[targets[i]];
            for x in row.iter_mut() {
                *x = libm::exp(*x - lse);
            }
            count += 1;
        }
        let value = if count == 0 { 0.0 } else { loss / count as f64 };
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            vec![value],
            ng,
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
        ))
    }

    /// Row `v` becomes the mean of rows `adj[v]` (zero when empty).
    pub fn neighbor_mean(&mut self, x: Var, adj: &Adjacency) -> Result<Var, NumericsError> {
        let (r, c) = self.shape(x);
        if adj.len() != r {
            return Err(shape_err("neighbor_mean", (r, c), (adj.len(), c)));
        }
        let mut out = vec![0.0; r * c];
        for (v, nb) in adj.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let w = 1.0 / nb.len() as f64;
            for &u in nb {
                let (src, dst) = (&self.nodes[x.0].value[u * c..(u + 1) * c], &mut out[v * c..(v + 1) * c]);
                axpy(w, src, dst);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, out, ng, Op::NeighborMean { x, adj: adj.clone() }))
    }

    /// Multi-head attention aggregation over `{v} ∪ adj[v]`. The self entry
    /// carries `z_self[v]`, neighbors carry `z_nb[u]`; compatibility is
    /// `leaky(a_dst·z_self[v] + a_src·value)` per head.
    pub fn gat(
        &mut self,
        z_self: Var,
        z_nb: Var,
        a_src: Var,
        a_dst: Var,
        heads: usize,
        adj: &Adjacency,
    ) -> Result<Var, NumericsError> {
        let (n, d) = self.same_shape("gat", z_self, z_nb)?;
        if self.shape(a_src) != (1, d) || self.shape(a_dst) != (1, d) {
            return Err(shape_err("gat", (n, d), self.shape(a_src)));
        }
        if heads == 0 || d % heads != 0 || adj.len() != n {
            return Err(shape_err("gat", (n, d), (adj.len(), heads)));
        }
        let dh = d / heads;
        let zs = &self.nodes[z_self.0].value;
        let zn = &self.nodes[z_nb.0].value;
        let asrc = &self.nodes[a_src.0].value;
        let adst = &self.nodes[a_dst.0].value;
        let mut out = vec![0.0; n * d];
        let mut alpha = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        for v in 0..n {
            let m = adj[v].len() + 1;
            let mut av = vec![0.0; heads * m];
            let mut rv = vec![0.0; heads * m];
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                let self_row = &zs[v * d..(v + 1) * d][hs.clone()];
                let s_dst = dot(&adst[hs.clone()], self_row);
                for e in 0..m {
                    let val = if e == 0 { self_row } else { &zn[adj[v][e - 1] * d..][hs.clone()] };
                    let x = s_dst + dot(&asrc[hs.clone()], val);
                    rv[h * m + e] = x;
                    av[h * m + e] = if x > 0.0 { x } else { GAT_SLOPE * x };
                }
                softmax_in_place(&mut av[h * m..(h + 1) * m]);
                let o = &mut out[v * d..(v + 1) * d][hs.clone()];
                for e in 0..m {
                    let val = if e == 0 { self_row } else { &zn[adj[v][e - 1] * d..][hs.clone()] };
                    axpy(av[h * m + e], val, o);
                }
            }
            alpha.push(av);
            raw.push(rv);
        }
        let ng = self.ng(z_self) || self.ng(z_nb) || self.ng(a_src) || self.ng(a_dst);
        Ok(self.push(
            n,
            d,
            out,
            ng,
            Op::Gat { z_self, z_nb, a_src, a_dst, heads, adj: adj.clone(), alpha, raw },
        ))
    }

    /// Attention weights of node `v`, head `h` from the last `gat` call at `out`.
    pub fn gat_weights(&self, out: Var, v: usize, h: usize) -> Option<Vec<f64>> {
        match &self.nodes[out.0].op {
            Op::Gat { alpha, heads, .. } if h < *heads && v < alpha.len() => {
                let m = alpha[v].len() / heads;
                Some(alpha[v][h * m..(h + 1) * m].to_vec())
            }
            _ => None,
        }
    }

    /// Multi-head causal self-attention over row sequences (scaled dot product).
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, NumericsError> {
        let (t, d) = self.same_shape("causal_attention", q, k)?;
        self.same_shape("causal_attention", q, v)?;
        if heads == 0 || d % heads != 0 {
            return Err(shape_err("causal_attention", (t, d), (heads, 0)));
        }
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let mut probs = vec![0.0; heads * t * t];
        let mut out = vec![0.0; t * d];
        for h in 0..heads {
            let off = h * dh;
            // per-head K and V transposed to dh x t, so loops run along the sequence
            let kt = head_transposed(kv, t, d, off, dh);
            let vt = head_transposed(vv, t, d, off, dh);
            for i in 0..t {
                let p = &mut probs[(h * t + i) * t..(h * t + i) * t + i + 1];
                for c in 0..dh {
                    axpy(scale * qv[i * d + off + c], &kt[c * t..c * t + i + 1], p);
                }
                softmax_in_place(p);
                for c in 0..dh {
                    out[i * d + off + c] = dot(p, &vt[c * t..c * t + i + 1]);
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(t, d, out, ng, Op::CausalAttention { q, k, v, heads, probs }))
    }

    /// Reverse pass from a `1 x 1` output. Gradients accumulate per node.
    pub fn backward(&mut self, out: Var) -> Result<(), NumericsError> {
        if self.shape(out) != (1, 1) {
            return Err(shape_err("backward", self.shape(out), (1, 1)));
        }
        for n in &mut self.nodes {
            n.grad.clear();
        }
        self.nodes[out.0].grad = vec![1.0];
        for i in (0..=out.0).rev() {
            let (before, after) = self.nodes.split_at_mut(i);
            let node = &after[0];
            if node.grad.is_empty() || !node.needs_grad {
                continue;
            }
            backprop(node, before);
        }
        Ok(())
    }

    /// Adds parameter-leaf gradients into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParameterStore) {
        for n in &self.nodes {
            if let (Op::Param(id), false) = (&n.op, n.grad.is_empty()) {
                for (g, d) in store.grad_mut(*id).iter_mut().zip(&n.grad) {
                    *g += d;
                }
            }
        }
    }
}

/// Gradient buffer of an input node, allocated on first use; `None` when
/// the input does not need gradients.
fn gbuf(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f64>> {
    let n = &mut nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    if n.grad.is_empty() {
        n.grad = vec![0.0; n.value.len()];
    }
    Some(&mut n.grad)
}

fn backprop(node: &Node, nodes: &mut [Node]) {
    let g = &node.grad;
    let (rows, cols) = (node.rows, node.cols);
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = cols;
            if nodes[a.0].needs_grad {
                let bt = transpose(&nodes[b.0].value, k, n);
                let ga = gbuf(nodes, *a).unwrap();
                gemm_acc(g, &bt, ga, m, n, k);
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].value.clone();
                let gb = gbuf(nodes, *b).unwrap();
                gemm_tn_acc(&av, g, gb, m, k, n);
            }
        }
        Op::MatMulT(a, b) => {
            // out[m,n] = a[m,k] b[n,k]^T
            let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
            let n = cols;
            if nodes[a.0].needs_grad {
                let bv = nodes[b.0].value.clone();
                let ga = gbuf(nodes, *a).unwrap();
                gemm_acc(g, &bv, ga, m, n, k);
            }
            if nodes[b.0].needs_grad {
                let av = nodes[a.0].value.clone();
                let gb = gbuf(nodes, *b).unwrap();
                gemm_tn_acc(g, &av, gb, m, n, k);
            }
        }
        Op::Add(a, b) => {
            for x in [a, b] {
                if let Some(gx) = gbuf(nodes, *x) {
                    axpy(1.0, g, gx);
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(ga) = gbuf(nodes, *a) {
                axpy(1.0, g, ga);
            }
            if let Some(gr) = gbuf(nodes, *row) {
                for chunk in g.chunks(cols) {
                    axpy(1.0, chunk, gr);
                }
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.clone();
            let bv = nodes[b.0].value.clone();
            if let Some(ga) = gbuf(nodes, *a) {
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(&bv) {
                    *x += gi * bi;
                }
            }
            if let Some(gb) = gbuf(nodes, *b) {
                for ((x, gi), ai) in gb.iter_mut().zip(g).zip(&av) {
                    *x += gi * ai;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = gbuf(nodes, *a) {
                axpy(*s, g, ga);
            }
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            for p in parts {
                let c = nodes[p.0].cols;
                if let Some(gp) = gbuf(nodes, *p) {
                    for i in 0..rows {
                        axpy(1.0, &g[i * cols + off..i * cols + off + c], &mut gp[i * c..(i + 1) * c]);
                    }
                }
                off += c;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                if let Some(gp) = gbuf(nodes, *p) {
                    axpy(1.0, &g[off..off + len], gp);
                }
                off += len;
            }
        }
        Op::SliceCols(a, start) => {
            let c = nodes[a.0].cols;
            if let Some(ga) = gbuf(nodes, *a) {
                for i in 0..rows {
                    axpy(1.0, &g[i * cols..(i + 1) * cols], &mut ga[i * c + start..i * c + start + cols]);
                }
            }
        }
        Op::SliceRows(a, start) => {
            if let Some(ga) = gbuf(nodes, *a) {
                axpy(1.0, g, &mut ga[start * cols..(start + rows) * cols]);
            }
        }
        Op::Transpose(a) => {
            if let Some(ga) = gbuf(nodes, *a) {
                axpy(1.0, &transpose(g, rows, cols), ga);
            }
        }
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            if let Some(ga) = gbuf(nodes, *a) {
                for i in 0..rows {
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let s = dot(yr, gr);
                    for j in 0..cols {
                        ga[i * cols + j] += yr[j] * (gr[j] - s);
                    }
                }
            }
        }
        Op::Relu(a) => {
            let y = &node.value;
            if let Some(ga) = gbuf(nodes, *a) {
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    if *yi > 0.0 {
                        *x += gi;
                    }
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let xv = nodes[a.0].value.clone();
            if let Some(ga) = gbuf(nodes, *a) {
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(&xv) {
                    *x += if *xi > 0.0 { *gi } else { slope * gi };
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let gam = nodes[gamma.0].value.clone();
            if let Some(gg) = gbuf(nodes, *gamma) {
                for i in 0..rows {
                    for j in 0..cols {
                        gg[j] += g[i * cols + j] * xhat[i * cols + j];
                    }
                }
            }
            if let Some(gb) = gbuf(nodes, *beta) {
                for chunk in g.chunks(cols) {
                    axpy(1.0, chunk, gb);
                }
            }
            if let Some(gx) = gbuf(nodes, *x) {
                let n = cols as f64;
                for i in 0..rows {
                    let xh = &xhat[i * cols..(i + 1) * cols];
                    let mut dxhat = vec![0.0; cols];
                    for j in 0..cols {
                        dxhat[j] = g[i * cols + j] * gam[j];
                    }
                    let sum_d = dxhat.iter().sum::<f64>();
                    let sum_dx = dot(&dxhat, xh);
                    for j in 0..cols {
                        gx[i * cols + j] += inv_std[i] / n * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
                    }
                }
            }
        }
        Op::Gather { table, ids } => {
            if let Some(gt) = gbuf(nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    axpy(1.0, &g[r * cols..(r + 1) * cols], &mut gt[id * cols..(id + 1) * cols]);
                }
            }
        }
        Op::ReplaceRows { base, src, positions } => {
            if let Some(gs) = gbuf(nodes, *src) {
                for (i, &p) in positions.iter().enumerate() {
                    axpy(1.0, &g[p * cols..(p + 1) * cols], &mut gs[i * cols..(i + 1) * cols]);
                }
            }
            if let Some(gb) = gbuf(nodes, *base) {
                let mut masked = g.clone();
                for &p in positions {
                    masked[p * cols..(p + 1) * cols].iter_mut().for_each(|x| *x = 0.0);
                }
                axpy(1.0, &masked, gb);
            }
        }
        Op::MeanRows(a) => {
            let r = nodes[a.0].rows;
            if let Some(ga) = gbuf(nodes, *a) {
                for chunk in ga.chunks_mut(cols) {
                    axpy(1.0 / r as f64, g, chunk);
                }
            }
        }
        Op::BroadcastRows(a) => {
            if let Some(ga) = gbuf(nodes, *a) {
                for chunk in g.chunks(cols) {
                    axpy(1.0, chunk, ga);
                }
            }
        }
        Op::SumAll(a) => {
            if let Some(ga) = gbuf(nodes, *a) {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
        }
        Op::CrossEntropy { logits, targets, mask, probs, count } => {
            let c = nodes[logits.0].cols;
            if *count == 0 {
                return;
            }
            let w = g[0] / *count as f64;
            if let Some(gl) = gbuf(nodes, *logits) {
                for i in 0..mask.len() {
                    if !mask[i] {
                        continue;
                    }
                    let row = &mut gl[i * c..(i + 1) * c];
                    axpy(w, &probs[i * c..(i + 1) * c], row);
                    row[targets[i]] -= w;
                }
            }
        }
        Op::NeighborMean { x, adj } => {
            if let Some(gx) = gbuf(nodes, *x) {
                for (v, nb) in adj.iter().enumerate() {
                    if nb.is_empty() {
                        continue;
                    }
                    let w = 1.0 / nb.len() as f64;
                    for &u in nb {
                        axpy(w, &g[v * cols..(v + 1) * cols], &mut gx[u * cols..(u + 1) * cols]);
                    }
                }
            }
        }
        Op::Gat { z_self, z_nb, a_src, a_dst, heads, adj, alpha, raw } => {
            gat_backward(node, nodes, (*z_self, *z_nb, *a_src, *a_dst), *heads, adj, alpha, raw);
        }
        Op::CausalAttention { q, k, v, heads, probs } => {
            attention_backward(node, nodes, (*q, *k, *v), *heads, probs);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gat_backward(
    node: &Node,
    nodes: &mut [Node],
    (z_self, z_nb, a_src, a_dst): (Var, Var, Var, Var),
    heads: usize,
    adj: &Adjacency,
    alpha: &[Vec<f64>],
    raw: &[Vec<f64>],
) {
    let (n, d) = (node.rows, node.cols);
    let dh = d / heads;
    let g = &node.grad;
    let zs = nodes[z_self.0].value.clone();
    let zn = nodes[z_nb.0].value.clone();
    let asrc = nodes[a_src.0].value.clone();
    let adst = nodes[a_dst.0].value.clone();
    let mut d_zs = vec![0.0; n * d];
    let mut d_zn = vec![0.0; n * d];
    let mut d_asrc = vec![0.0; d];
    let mut d_adst = vec![0.0; d];
    for v in 0..n {
        let m = adj[v].len() + 1;
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            let gv = &g[v * d..(v + 1) * d][hs.clone()];
            let al = &alpha[v][h * m..(h + 1) * m];
            let rw = &raw[v][h * m..(h + 1) * m];
            let row_of = |e: usize| if e == 0 { v } else { adj[v][e - 1] };
            let val = |e: usize| -> &[f64] {
                if e == 0 {
                    &zs[v * d..(v + 1) * d][hs.clone()]
                } else {
                    &zn[row_of(e) * d..(row_of(e) + 1) * d][hs.clone()]
                }
            };
            let d_alpha: Vec<f64> = (0..m).map(|e| dot(gv, val(e))).collect();
            let s = dot(al, &d_alpha);
            let mut d_sdst = 0.0;
            for e in 0..m {
                let d_e = al[e] * (d_alpha[e] - s);
                let d_raw = if rw[e] > 0.0 { d_e } else { GAT_SLOPE * d_e };
                d_sdst += d_raw;
                axpy(d_raw, val(e), &mut d_asrc[hs.clone()]);
                let target = if e == 0 { &mut d_zs } else { &mut d_zn };
                let r = row_of(e);
                let dst = &mut target[r * d..(r + 1) * d][hs.clone()];
                axpy(al[e], gv, dst);
                axpy(d_raw, &asrc[hs.clone()], dst);
            }
            let self_row = &zs[v * d..(v + 1) * d][hs.clone()];
            axpy(d_sdst, self_row, &mut d_adst[hs.clone()]);
            axpy(d_sdst, &adst[hs.clone()], &mut d_zs[v * d..(v + 1) * d][hs.clone()]);
        }
    }
    for (var, buf) in [(z_self, d_zs), (z_nb, d_zn), (a_src, d_asrc), (a_dst, d_adst)] {
        if let Some(gx) = gbuf(nodes, var) {
            axpy(1.0, &buf, gx);
        }
    }
}

fn head_transposed(x: &[f64], t: usize, d: usize, off: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * t];
    for j in 0..t {
        for c in 0..dh {
            out[c * t + j] = x[j * d + off + c];
        }
    }
    out
}

fn attention_backward(node: &Node, nodes: &mut [Node], (q, k, v): (Var, Var, Var), heads: usize, probs: &[f64]) {
    let (t, d) = (node.rows, node.cols);
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let g = &node.grad;
    let qv = &nodes[q.0].value;
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    let mut ds = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        let kt = head_transposed(&nodes[k.0].value, t, d, off, dh);
        let vt = head_transposed(&nodes[v.0].value, t, d, off, dh);
        let mut dkt = vec![0.0; dh * t];
        let mut dvt = vec![0.0; dh * t];
        for i in 0..t {
            let p = &probs[(h * t + i) * t..(h * t + i) * t + i + 1];
            let gi = &g[i * d + off..i * d + off + dh];
            let dp = &mut dp[..=i];
            dp.iter_mut().for_each(|x| *x = 0.0);
            for c in 0..dh {
                axpy(gi[c], &vt[c * t..c * t + i + 1], dp);
                axpy(gi[c], p, &mut dvt[c * t..c * t + i + 1]);
            }
            let s = dot(p, dp);
            let ds = &mut ds[..=i];
            for ((x, &pj), &dpj) in ds.iter_mut().zip(p).zip(dp.iter()) {
                *x = scale * pj * (dpj - s);
            }
            for c in 0..dh {
                dq[i * d + off + c] += dot(ds, &kt[c * t..c * t + i + 1]);
                axpy(qv[i * d + off + c], ds, &mut dkt[c * t..c * t + i + 1]);
            }
        }
        for j in 0..t {
            for c in 0..dh {
                dk[j * d + off + c] += dkt[c * t + j];
                dv[j * d + off + c] += dvt[c * t + j];
            }
        }
    }
    for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(gx) = gbuf(nodes, var) {
            axpy(1.0, &buf, gx);
        }
    }
}
