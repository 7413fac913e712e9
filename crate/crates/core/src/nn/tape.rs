//! Reverse-mode automatic differentiation over `f32` matrices.
//!
//! A `Tape` is an append-only arena of operation nodes; building an
//! expression records enough structure to replay gradients backwards.
//! The op set is exactly what the models here need (GRU cells, dot
//! attention, CNN-over-rows classifier heads, REINFORCE surrogates) —
//! nothing speculative.
//!
//! Forward values are computed eagerly at node-creation time, single
//! threaded, so identical op sequences produce bitwise-identical values.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis};

/// All tensors are 2-D `f32` matrices; row vectors are `(1, n)`.
pub type Mat = Array2<f32>;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Identifies one parameter of one model: `(set_tag, index)`. The set tag
/// distinguishes models sharing a tape (e.g. summarizer vs discriminator).
pub type ParamRef = (u8, usize);

enum Op {
    Leaf { param: Option<ParamRef> },
    MatMul(usize, usize),
    Add(usize, usize),
    /// Broadcast-add a `(1, n)` row to every row of an `(m, n)` matrix.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Transpose(usize),
    ConcatCols(usize, usize),
    /// Stack `(1, n)` rows into an `(m, n)` matrix.
    StackRows(Vec<usize>),
    /// Extract row `i` as a `(1, n)` matrix.
    SliceRow(usize, usize),
    /// Append zero rows until the matrix has at least the requested count
    /// (backward only needs the source's own row count).
    PadRows(usize),
    /// Softmax down a `(m, 1)` column.
    SoftmaxCol(usize),
    /// Negative log-likelihood of `target` under softmax of a `(1, v)`
    /// logits row; value is `(1, 1)`.
    RowNll { logits: usize, target: usize },
    /// Row-gather from a `(v, d)` table: output row i = table[ids[i]].
    Gather { table: usize, ids: Vec<usize> },
    /// Sliding windows of `window` consecutive rows, flattened per window:
    /// `(t, d)` → `(t - window + 1, window * d)`.
    Im2col { x: usize, window: usize },
    /// Column-wise max over rows: `(m, n)` → `(1, n)`; argmax kept for backward.
    MaxPoolRows { x: usize, argmax: Vec<usize> },
    /// Column-wise mean over rows: `(m, n)` → `(1, n)`.
    MeanRows(usize),
    MeanAll(usize),
    SumAll(usize),
    /// Elementwise `ln(clamp(x, eps, 1 - eps))`.
    ClipLog { x: usize, eps: f32 },
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradients keyed by parameter reference; ordered map so accumulation and
/// iteration are deterministic.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: BTreeMap<ParamRef, Mat>,
}

impl Gradients {
    pub fn get(&self, set: u8, index: usize) -> Option<&Mat> {
        self.map.get(&(set, index))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise sum with another gradient set (missing entries adopted).
    pub fn merge(&mut self, other: Gradients) {
        for (key, grad) in other.map {
            match self.map.get_mut(&key) {
                Some(acc) => *acc += &grad,
                None => {
                    self.map.insert(key, grad);
                }
            }
        }
    }

    pub fn scale(&mut self, c: f32) {
        for grad in self.map.values_mut() {
            grad.mapv_inplace(|x| x * c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamRef, &Mat)> {
        self.map.iter()
    }

    fn accumulate(&mut self, key: ParamRef, grad: &Mat) {
        match self.map.get_mut(&key) {
            Some(acc) => *acc += grad,
            None => {
                self.map.insert(key, grad.clone());
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable log-sum-exp of a slice (f64 accumulation, f32 result).
pub fn log_sum_exp(xs: &[f32]) -> f32 {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| f64::from(x - max).exp()).sum();
    max + sum.ln() as f32
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<ParamRef, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> f32 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A value gradients do not flow into.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// A model parameter; cached so each `(set, index)` enters once per tape.
    pub fn param(&mut self, set: u8, index: usize, value: &Mat) -> Var {
        if let Some(&v) = self.param_cache.get(&(set, index)) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf { param: Some((set, index)) });
        self.param_cache.insert((set, index), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul shape mismatch: ({ar},{ac}) x ({br},{bc})");
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, ac), "add_row wants a (1, n) row");
        let value = self.value(a) + &self.value(row).row(0);
        self.push(value, Op::AddRow(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(stable_sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f32::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ar, br, "concat_cols row mismatch");
        let mut value = Mat::zeros((ar, ac + bc));
        value.slice_mut(s![.., ..ac]).assign(self.value(a));
        value.slice_mut(s![.., ac..]).assign(self.value(b));
        self.push(value, Op::ConcatCols(a.0, b.0))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let n = self.value(rows[0]).dim().1;
        let mut value = Mat::zeros((rows.len(), n));
        for (i, &r) in rows.iter().enumerate() {
            assert_eq!(self.value(r).dim(), (1, n), "stack_rows wants (1, n) rows");
            value.row_mut(i).assign(&self.value(r).row(0));
        }
        self.push(value, Op::StackRows(rows.iter().map(|v| v.0).collect()))
    }

    pub fn slice_row(&mut self, a: Var, row: usize) -> Var {
        let (m, _) = self.value(a).dim();
        assert!(row < m, "slice_row out of range: {row} >= {m}");
        let value = self.value(a).row(row).to_owned().insert_axis(Axis(0));
        self.push(value, Op::SliceRow(a.0, row))
    }

    pub fn pad_rows(&mut self, a: Var, min_rows: usize) -> Var {
        let (m, n) = self.value(a).dim();
        let rows = m.max(min_rows);
        let mut value = Mat::zeros((rows, n));
        value.slice_mut(s![..m, ..]).assign(self.value(a));
        self.push(value, Op::PadRows(a.0))
    }

    pub fn softmax_col(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dim();
        assert_eq!(n, 1, "softmax_col wants a (m, 1) column");
        let col: Vec<f32> = self.value(a).column(0).to_vec();
        let lse = log_sum_exp(&col);
        let mut value = Mat::zeros((m, 1));
        for (i, &x) in col.iter().enumerate() {
            value[[i, 0]] = (x - lse).exp();
        }
        self.push(value, Op::SoftmaxCol(a.0))
    }

    pub fn row_nll(&mut self, logits: Var, target: usize) -> Var {
        let (m, v) = self.value(logits).dim();
        assert_eq!(m, 1, "row_nll wants a (1, v) logits row");
        assert!(target < v, "row_nll target out of range");
        let row: Vec<f32> = self.value(logits).row(0).to_vec();
        let nll = log_sum_exp(&row) - row[target];
        let value = Mat::from_elem((1, 1), nll);
        self.push(value, Op::RowNll { logits: logits.0, target })
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.value(table).dim();
        assert!(!ids.is_empty(), "gather of nothing");
        let mut value = Mat::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < v, "gather id {id} out of range {v}");
            value.row_mut(i).assign(&self.value(table).row(id));
        }
        self.push(value, Op::Gather { table: table.0, ids: ids.to_vec() })
    }

    pub fn im2col(&mut self, x: Var, window: usize) -> Var {
        let (t, d) = self.value(x).dim();
        assert!(window >= 1 && t >= window, "im2col window {window} over {t} rows");
        let out_rows = t - window + 1;
        let mut value = Mat::zeros((out_rows, window * d));
        for i in 0..out_rows {
            for j in 0..window {
                value
                    .slice_mut(s![i, j * d..(j + 1) * d])
                    .assign(&self.value(x).row(i + j));
            }
        }
        self.push(value, Op::Im2col { x: x.0, window })
    }

    pub fn max_pool_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.value(x).dim();
        assert!(m >= 1, "max_pool_rows of empty matrix");
        let mut value = Mat::zeros((1, n));
        let mut argmax = vec![0usize; n];
        for c in 0..n {
            let mut best = f32::NEG_INFINITY;
            for r in 0..m {
                let x_rc = self.value(x)[[r, c]];
                if x_rc > best {
                    best = x_rc;
                    argmax[c] = r;
                }
            }
            value[[0, c]] = best;
        }
        self.push(value, Op::MaxPoolRows { x: x.0, argmax })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, _) = self.value(x).dim();
        assert!(m >= 1, "mean_rows of empty matrix");
        let value = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(x.0))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(x).mean().expect("non-empty"));
        self.push(value, Op::MeanAll(x.0))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(x).sum());
        self.push(value, Op::SumAll(x.0))
    }

    pub fn clip_log(&mut self, x: Var, eps: f32) -> Var {
        assert!((0.0..0.5).contains(&eps), "clip_log eps out of range");
        let value = self.value(x).mapv(|v| v.clamp(eps, 1.0 - eps).ln());
        self.push(value, Op::ClipLog { x: x.0, eps })
    }

    /// Reverse pass from a `(1, 1)` scalar root; returns parameter gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Mat::from_elem((1, 1), 1.0));

        fn accum(grads: &mut [Option<Mat>], idx: usize, delta: Mat) {
            match &mut grads[idx] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        let mut out = Gradients::default();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(key) = param {
                        out.accumulate(*key, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum(&mut grads, *a, g);
                    accum(&mut grads, *row, drow);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, g.clone());
                    accum(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    accum(&mut grads, *a, da);
                    accum(&mut grads, *b, db);
                }
                Op::Scale(a, c) => accum(&mut grads, *a, g.mapv(|x| x * c)),
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    accum(&mut grads, *a, &g * &(y * &y.mapv(|v| 1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    accum(&mut grads, *a, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    accum(&mut grads, *a, &g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                }
                Op::Transpose(a) => accum(&mut grads, *a, g.t().to_owned()),
                Op::ConcatCols(a, b) => {
                    let ac = self.nodes[*a].value.dim().1;
                    accum(&mut grads, *a, g.slice(s![.., ..ac]).to_owned());
                    accum(&mut grads, *b, g.slice(s![.., ac..]).to_owned());
                }
                Op::StackRows(rows) => {
                    for (r, &src) in rows.iter().enumerate() {
                        accum(&mut grads, src, g.row(r).to_owned().insert_axis(Axis(0)));
                    }
                }
                Op::SliceRow(a, row) => {
                    let mut da = Mat::zeros(self.nodes[*a].value.dim());
                    da.row_mut(*row).assign(&g.row(0));
                    accum(&mut grads, *a, da);
                }
                Op::PadRows(a) => {
                    let m = self.nodes[*a].value.dim().0;
                    accum(&mut grads, *a, g.slice(s![..m, ..]).to_owned());
                }
                Op::SoftmaxCol(a) => {
                    let y = &self.nodes[i].value;
                    let inner: f32 = (&g * y).sum();
                    accum(&mut grads, *a, y * &g.mapv(|v| v - inner));
                }
                Op::RowNll { logits, target } => {
                    let row: Vec<f32> = self.nodes[*logits].value.row(0).to_vec();
                    let lse = log_sum_exp(&row);
                    let mut dlogits = Mat::zeros((1, row.len()));
                    let gs = g[[0, 0]];
                    for (c, &x) in row.iter().enumerate() {
                        let softmax = (x - lse).exp();
                        let indicator = if c == *target { 1.0 } else { 0.0 };
                        dlogits[[0, c]] = gs * (softmax - indicator);
                    }
                    accum(&mut grads, *logits, dlogits);
                }
                Op::Gather { table, ids } => {
                    let mut dtable = Mat::zeros(self.nodes[*table].value.dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut slot = dtable.row_mut(id);
                        slot += &g.row(r);
                    }
                    accum(&mut grads, *table, dtable);
                }
                Op::Im2col { x, window } => {
                    let (t, d) = self.nodes[*x].value.dim();
                    let mut dx = Mat::zeros((t, d));
                    for i_out in 0..(t - window + 1) {
                        for j in 0..*window {
                            let mut slot = dx.row_mut(i_out + j);
                            slot += &g.slice(s![i_out, j * d..(j + 1) * d]);
                        }
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::MaxPoolRows { x, argmax } => {
                    let mut dx = Mat::zeros(self.nodes[*x].value.dim());
                    for (c, &r) in argmax.iter().enumerate() {
                        dx[[r, c]] += g[[0, c]];
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let (m, n) = self.nodes[*x].value.dim();
                    let mut dx = Mat::zeros((m, n));
                    let scaled = g.mapv(|v| v / m as f32);
                    for r in 0..m {
                        dx.row_mut(r).assign(&scaled.row(0));
                    }
                    accum(&mut grads, *x, dx);
                }
                Op::MeanAll(x) => {
                    let (m, n) = self.nodes[*x].value.dim();
                    let v = g[[0, 0]] / (m * n) as f32;
                    accum(&mut grads, *x, Mat::from_elem((m, n), v));
                }
                Op::SumAll(x) => {
                    let (m, n) = self.nodes[*x].value.dim();
                    accum(&mut grads, *x, Mat::from_elem((m, n), g[[0, 0]]));
                }
                Op::ClipLog { x, eps } => {
                    let src = &self.nodes[*x].value;
                    let dx = src.mapv(|v| {
                        if v > *eps && v < 1.0 - *eps {
                            1.0 / v
                        } else {
                            0.0
                        }
                    });
                    accum(&mut grads, *x, &g * &dx);
                }
            }
        }
        out
    }
}
