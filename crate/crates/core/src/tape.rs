//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Besides the usual
//! dense ops there are the graph-specific ones the encoders need: a fixed
//! sparse propagation, per-edge attention scores, segment softmax over each
//! node's incoming edges, and attention-weighted aggregation.

use std::sync::Arc;

use ndarray::{Array2, Axis, s};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Fixed sparse operator `y[i] = Σ_k val[k] * x[col[k]]` for `k` in row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub n_rows: usize,
    pub n_cols: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    /// Entries are grouped by row; within a row they keep their input order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < n_rows && c < n_cols, "entry ({r}, {c}) out of range");
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col = vec![0; triplets.len()];
        let mut val = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            col[next[r]] = c;
            val[next[r]] = v;
            next[r] += 1;
        }
        SparseRows {
            n_rows,
            n_cols,
            row_ptr,
            col,
            val,
        }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_cols);
        let mut y = Array2::zeros((self.n_rows, x.ncols()));
        for i in 0..self.n_rows {
            let mut yi = y.row_mut(i);
            for (j, w) in self.row(i) {
                yi.scaled_add(w, &x.row(j));
            }
        }
        y
    }

    pub fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        assert_eq!(g.nrows(), self.n_rows);
        let mut x = Array2::zeros((self.n_cols, g.ncols()));
        for i in 0..self.n_rows {
            let gi = g.row(i);
            for (j, w) in self.row(i) {
                x.row_mut(j).scaled_add(w, &gi);
            }
        }
        x
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            for (j, w) in self.row(i) {
                d[[i, j]] += w;
            }
        }
        d
    }
}

/// Incoming-edge lists grouped by target node: edge `e` runs `src[e] -> dst[e]`
/// and the edges of target `i` are `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub n_nodes: usize,
    offsets: Vec<usize>,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl Segments {
    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(neighbors.len() + 1);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        offsets.push(0);
        for (i, ns) in neighbors.iter().enumerate() {
            for &j in ns {
                assert!(j < neighbors.len());
                src.push(j);
                dst.push(i);
            }
            offsets.push(src.len());
        }
        Segments {
            n_nodes: neighbors.len(),
            offsets,
            src,
            dst,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn src(&self, e: usize) -> usize {
        self.src[e]
    }

    pub fn dst(&self, e: usize) -> usize {
        self.dst[e]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Spmm(Arc<SparseRows>, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    EdgeScores {
        dst_term: Var,
        src_term: Var,
        bias: Var,
        seg: Arc<Segments>,
    },
    SegmentSoftmax(Var, Arc<Segments>),
    EdgeAggregate {
        alpha: Var,
        x: Var,
        seg: Arc<Segments>,
    },
    RowDot(Var, Var),
    BceWithLogits(Var, Arc<Vec<f64>>),
    SumSquares(Var),
}

/// Lower bound applied to probabilities inside the log of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one probability, logs clamped at [`LOG_CLAMP`].
pub fn bce(p: f64, y: f64) -> f64 {
    -(y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln())
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Adjoint of `v`, zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a + b` with `b` a `1 x c` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(b).nrows(), 1);
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn spmm(&mut self, m: &Arc<SparseRows>, x: Var) -> Var {
        let v = m.apply(self.value(x));
        self.push(v, Op::Spmm(Arc::clone(m), x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>) -> Var {
        let v = self.value(x).select(Axis(0), idx);
        self.push(v, Op::GatherRows(x, Arc::clone(idx)))
    }

    /// Per-edge `dst_term[dst] + src_term[src] + bias`, an `E x 1` column.
    /// `dst_term` and `src_term` are `n x 1`, `bias` is `1 x 1`.
    pub fn edge_scores(&mut self, dst_term: Var, src_term: Var, bias: Var, seg: &Arc<Segments>) -> Var {
        let (d, s_, b) = (self.value(dst_term), self.value(src_term), self.scalar(bias));
        let v = Array2::from_shape_fn((seg.n_edges(), 1), |(e, _)| d[[seg.dst(e), 0]] + s_[[seg.src(e), 0]] + b);
        self.push(
            v,
            Op::EdgeScores {
                dst_term,
                src_term,
                bias,
                seg: Arc::clone(seg),
            },
        )
    }

    /// Softmax of an `E x 1` column within each target node's edge range.
    pub fn segment_softmax(&mut self, scores: Var, seg: &Arc<Segments>) -> Var {
        let sc = self.value(scores);
        let mut out = Array2::zeros((seg.n_edges(), 1));
        for i in 0..seg.n_nodes {
            let r = seg.range(i);
            if r.is_empty() {
                continue;
            }
            let m = r.clone().map(|e| sc[[e, 0]]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in r.clone() {
                let x = (sc[[e, 0]] - m).exp();
                out[[e, 0]] = x;
                z += x;
            }
            for e in r {
                out[[e, 0]] /= z;
            }
        }
        self.push(out, Op::SegmentSoftmax(scores, Arc::clone(seg)))
    }

    /// `out[i] = Σ_{e into i} alpha[e] * x[src(e)]`.
    pub fn edge_aggregate(&mut self, alpha: Var, x: Var, seg: &Arc<Segments>) -> Var {
        let (a, xv) = (self.value(alpha), self.value(x));
        let mut out = Array2::zeros((seg.n_nodes, xv.ncols()));
        for i in 0..seg.n_nodes {
            let mut oi = out.row_mut(i);
            for e in seg.range(i) {
                oi.scaled_add(a[[e, 0]], &xv.row(seg.src(e)));
            }
        }
        self.push(
            out,
            Op::EdgeAggregate {
                alpha,
                x,
                seg: Arc::clone(seg),
            },
        )
    }

    /// Row-wise dot products, an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let v = (self.value(a) * self.value(b)).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowDot(a, b))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Arc<Vec<f64>>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), labels.len());
        let n = labels.len().max(1) as f64;
        let loss: f64 = z.iter().zip(labels.iter()).map(|(&z, &y)| bce(sigmoid(z), y)).sum::<f64>() / n;
        self.push(Array2::from_elem((1, 1), loss), Op::BceWithLogits(logits, Arc::clone(labels)))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum::<f64>();
        self.push(Array2::from_elem((1, 1), v), Op::SumSquares(a))
    }

    /// Adjoints of every node with respect to the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut d = g.clone();
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d *= slope
                        }
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::Spmm(m, x) => accumulate(&mut grads, *x, m.apply_transpose(&g)),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        accumulate(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::GatherRows(x, idx) => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        d.row_mut(r).scaled_add(1.0, &g.row(k));
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::EdgeScores {
                    dst_term,
                    src_term,
                    bias,
                    seg,
                } => {
                    let mut dd = Array2::zeros(self.value(*dst_term).dim());
                    let mut ds = Array2::zeros(self.value(*src_term).dim());
                    let mut db = 0.0;
                    for e in 0..seg.n_edges() {
                        let ge = g[[e, 0]];
                        dd[[seg.dst(e), 0]] += ge;
                        ds[[seg.src(e), 0]] += ge;
                        db += ge;
                    }
                    accumulate(&mut grads, *dst_term, dd);
                    accumulate(&mut grads, *src_term, ds);
                    accumulate(&mut grads, *bias, Array2::from_elem((1, 1), db));
                }
                Op::SegmentSoftmax(scores, seg) => {
                    let y = &self.values[idx];
                    let mut d = Array2::zeros((seg.n_edges(), 1));
                    for i in 0..seg.n_nodes {
                        let r = seg.range(i);
                        let inner: f64 = r.clone().map(|e| y[[e, 0]] * g[[e, 0]]).sum();
                        for e in r {
                            d[[e, 0]] = y[[e, 0]] * (g[[e, 0]] - inner);
                        }
                    }
                    accumulate(&mut grads, *scores, d);
                }
                Op::EdgeAggregate { alpha, x, seg } => {
                    let (a, xv) = (self.value(*alpha), self.value(*x));
                    let mut da = Array2::zeros(a.dim());
                    let mut dx = Array2::zeros(xv.dim());
                    for i in 0..seg.n_nodes {
                        let gi = g.row(i);
                        for e in seg.range(i) {
                            let j = seg.src(e);
                            da[[e, 0]] = gi.dot(&xv.row(j));
                            dx.row_mut(j).scaled_add(a[[e, 0]], &gi);
                        }
                    }
                    accumulate(&mut grads, *alpha, da);
                    accumulate(&mut grads, *x, dx);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let gcol = g.column(0).insert_axis(Axis(1));
                    accumulate(&mut grads, *a, bv * &gcol);
                    accumulate(&mut grads, *b, av * &gcol);
                }
                Op::BceWithLogits(logits, labels) => {
                    let z = self.value(*logits);
                    let n = labels.len().max(1) as f64;
                    let g0 = g[[0, 0]] / n;
                    let d = Array2::from_shape_fn(z.dim(), |(r, c)| {
                        let p = sigmoid(z[[r, c]]);
                        let y = labels[r * z.ncols() + c];
                        let pos = if p > LOG_CLAMP { -(1.0 - p) } else { 0.0 };
                        let neg = if 1.0 - p > LOG_CLAMP { p } else { 0.0 };
                        g0 * (y * pos + (1.0 - y) * neg)
                    });
                    accumulate(&mut grads, *logits, d);
                }
                Op::SumSquares(a) => {
                    let c = 2.0 * g[[0, 0]];
                    accumulate(&mut grads, *a, self.value(*a) * c);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}
