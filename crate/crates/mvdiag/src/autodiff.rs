//! Minimal reverse-mode autodiff over `ndarray::Array2<f64>` values.
//!
//! Forward values are computed eagerly as nodes are appended; `backward`
//! walks the tape in reverse and accumulates gradients into every leaf.
//! Each training batch builds a fresh tape over leaves bound to entries of a
//! shared [`Params`] store.

use ndarray::{Array2, Axis};

pub type VarId = usize;

/// Named parameter tensors shared across tapes.
#[derive(Debug, Clone)]
pub struct Params {
    pub tensors: Vec<Array2<f64>>,
    pub names: Vec<String>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> usize {
        self.tensors.push(tensor);
        self.names.push(name.into());
        self.tensors.len() - 1
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Exp(VarId),
    Ln(VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    ConcatCols(VarId, VarId),
    RowL2Normalize(VarId),
    ColMax(VarId),
    SegmentRowMax(VarId, Vec<Vec<usize>>),
    GatherRow(VarId, usize),
    CosineSim(VarId, VarId),
    SoftmaxCrossEntropy(VarId, Vec<usize>),
    SumAll(VarId),
    StackRows(Vec<VarId>),
    SliceCols(VarId, usize, usize),
    Transpose(VarId),
}

#[derive(Debug)]
pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

const NORM_EPS: f64 = 0.0; // zero rows stay zero; no epsilon smoothing

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> VarId {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        self.values[id][(0, 0)]
    }

    /// Constant leaf; receives no parameter gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn constant_scalar(&mut self, v: f64) -> VarId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Leaf bound to `params.tensors[idx]`.
    pub fn param(&mut self, params: &Params, idx: usize) -> VarId {
        self.push(params.tensors[idx].clone(), Op::Leaf { param: Some(idx) })
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.values[a].dot(&self.values[b]);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.values[a] + &self.values[b];
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.values[a] - &self.values[b];
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.values[a] * &self.values[b];
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.values[a] / &self.values[b];
        self.push(v, Op::Div(a, b))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.values[a].mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.values[a].mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let v = self.values[a].mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let v = self.values[a].mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let v = self.values[a].mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.values[a].mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.values[a].mapv(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> VarId {
        let v = ndarray::concatenate(
            Axis(1),
            &[self.values[a].view(), self.values[b].view()],
        )
        .expect("row counts must match for column concat");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// L2-normalizes each row; all-zero rows are left as zero.
    pub fn row_l2_normalize(&mut self, a: VarId) -> VarId {
        let x = &self.values[a];
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > NORM_EPS {
                row.mapv_inplace(|x| x / norm);
            }
        }
        self.push(v, Op::RowL2Normalize(a))
    }

    /// Component-wise max over rows: n x d -> 1 x d.
    pub fn col_max(&mut self, a: VarId) -> VarId {
        let x = &self.values[a];
        let d = x.ncols();
        let mut v = Array2::from_elem((1, d), f64::NEG_INFINITY);
        for row in x.rows() {
            for (j, &val) in row.iter().enumerate() {
                if val > v[(0, j)] {
                    v[(0, j)] = val;
                }
            }
        }
        self.push(v, Op::ColMax(a))
    }

    /// Row v of the output is the component-wise max over `groups[v]` rows of
    /// the input; empty groups yield zero rows.
    pub fn segment_row_max(&mut self, a: VarId, groups: Vec<Vec<usize>>) -> VarId {
        let x = &self.values[a];
        let d = x.ncols();
        let mut v = Array2::zeros((groups.len(), d));
        for (out_row, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            for j in 0..d {
                v[(out_row, j)] = group
                    .iter()
                    .map(|&g| x[(g, j)])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        self.push(v, Op::SegmentRowMax(a, groups))
    }

    pub fn gather_row(&mut self, a: VarId, row: usize) -> VarId {
        let v = self.values[a].row(row).to_owned().insert_axis(Axis(0));
        self.push(v, Op::GatherRow(a, row))
    }

    /// Cosine similarity of two 1 x d rows; 0 when either vector is zero.
    pub fn cosine_sim(&mut self, a: VarId, b: VarId) -> VarId {
        let va = &self.values[a];
        let vb = &self.values[b];
        let dot: f64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
        self.push(Array2::from_elem((1, 1), c), Op::CosineSim(a, b))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: Vec<usize>) -> VarId {
        let x = &self.values[logits];
        let n = x.nrows();
        debug_assert_eq!(labels.len(), n);
        let mut total = 0.0;
        for (i, row) in x.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            total += logsum - row[labels[i]];
        }
        let v = Array2::from_elem((1, 1), total / n as f64);
        self.push(v, Op::SoftmaxCrossEntropy(logits, labels))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let v = Array2::from_elem((1, 1), self.values[a].sum());
        self.push(v, Op::SumAll(a))
    }

    /// Stacks 1 x d rows into an n x d matrix.
    pub fn stack_rows(&mut self, rows: Vec<VarId>) -> VarId {
        assert!(!rows.is_empty());
        let d = self.values[rows[0]].ncols();
        let mut v = Array2::zeros((rows.len(), d));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&self.values[r].row(0));
        }
        self.push(v, Op::StackRows(rows))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, end: usize) -> VarId {
        let v = self.values[a].slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.values[a].t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Row-wise softmax probabilities (forward-only helper).
    pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.iter().sum();
            row.mapv_inplace(|v| v / sum);
        }
        out
    }

    /// Runs reverse-mode accumulation from a scalar output. Returns gradients
    /// per parameter index.
    pub fn backward(&self, output: VarId, params: &Params) -> Vec<Array2<f64>> {
        assert_eq!(self.values[output].dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[output] = Some(Array2::from_elem((1, 1), 1.0));
        let mut param_grads: Vec<Array2<f64>> = params
            .tensors
            .iter()
            .map(|t| Array2::zeros(t.dim()))
            .collect();

        for id in (0..self.values.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.ops[id] {
                Op::Leaf { param } => {
                    if let Some(p) = param {
                        param_grads[*p] += &g;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[*b].t());
                    let gb = self.values[*a].t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.values[*b];
                    let gb = &g * &self.values[*a];
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let ga = &g / &self.values[*b];
                    let gb = -&g * &self.values[*a] / (&self.values[*b] * &self.values[*b]);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let mask = self.values[*a].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[id];
                    accumulate(&mut grads, *a, &g * &(y * &y.mapv(|v| 1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &self.values[id];
                    accumulate(&mut grads, *a, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, *a, &g * &self.values[id]);
                }
                Op::Ln(a) => {
                    accumulate(&mut grads, *a, &g / &self.values[*a]);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.mapv(|x| x * c));
                }
                Op::AddScalar(a) => {
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.values[*a].ncols();
                    let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::RowL2Normalize(a) => {
                    let x = &self.values[*a];
                    let y = &self.values[id];
                    let mut gx = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm <= NORM_EPS {
                            continue;
                        }
                        let yd: f64 = y.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                        for j in 0..x.ncols() {
                            gx[(i, j)] = (g[(i, j)] - y[(i, j)] * yd) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ColMax(a) => {
                    let x = &self.values[*a];
                    let mut gx = Array2::zeros(x.dim());
                    for j in 0..x.ncols() {
                        let mut best = 0;
                        for i in 1..x.nrows() {
                            if x[(i, j)] > x[(best, j)] {
                                best = i;
                            }
                        }
                        gx[(best, j)] = g[(0, j)];
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::SegmentRowMax(a, groups) => {
                    let x = &self.values[*a];
                    let mut gx = Array2::zeros(x.dim());
                    for (out_row, group) in groups.iter().enumerate() {
                        if group.is_empty() {
                            continue;
                        }
                        for j in 0..x.ncols() {
                            let mut best = group[0];
                            for &gi in group.iter().skip(1) {
                                if x[(gi, j)] > x[(best, j)] {
                                    best = gi;
                                }
                            }
                            gx[(best, j)] += g[(out_row, j)];
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::GatherRow(a, row) => {
                    let mut gx = Array2::zeros(self.values[*a].dim());
                    for j in 0..gx.ncols() {
                        gx[(*row, j)] = g[(0, j)];
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::CosineSim(a, b) => {
                    let va = &self.values[*a];
                    let vb = &self.values[*b];
                    let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let c = self.values[id][(0, 0)];
                    let gs = g[(0, 0)];
                    let ga = vb.mapv(|x| x / (na * nb)) - va.mapv(|x| c * x / (na * na));
                    let gb = va.mapv(|x| x / (na * nb)) - vb.mapv(|x| c * x / (nb * nb));
                    accumulate(&mut grads, *a, ga.mapv(|x| x * gs));
                    accumulate(&mut grads, *b, gb.mapv(|x| x * gs));
                }
                Op::SoftmaxCrossEntropy(logits, labels) => {
                    let x = &self.values[*logits];
                    let n = x.nrows() as f64;
                    let mut gx = Self::softmax_rows(x);
                    for (i, &label) in labels.iter().enumerate() {
                        gx[(i, label)] -= 1.0;
                    }
                    gx.mapv_inplace(|v| v * g[(0, 0)] / n);
                    accumulate(&mut grads, *logits, gx);
                }
                Op::SumAll(a) => {
                    let gx = Array2::from_elem(self.values[*a].dim(), g[(0, 0)]);
                    accumulate(&mut grads, *a, gx);
                }
                Op::StackRows(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        let gr = g.row(i).to_owned().insert_axis(Axis(0));
                        accumulate(&mut grads, r, gr);
                    }
                }
                Op::SliceCols(a, start, _end) => {
                    let mut gx = Array2::zeros(self.values[*a].dim());
                    gx.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.t().to_owned());
                }
            }
        }
        param_grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: VarId, g: Array2<f64>) {
    match &mut grads[id] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Compares analytic gradients to central finite differences over probed
/// parameter coordinates; returns the max relative error.
pub fn grad_check<F>(params: &mut Params, probes: &[(usize, usize, usize)], mut loss_fn: F) -> f64
where
    F: FnMut(&Params) -> (f64, Vec<Array2<f64>>),
{
    let (_, analytic) = loss_fn(params);
    let mut max_rel = 0.0f64;
    for &(p, i, j) in probes {
        let orig = params.tensors[p][(i, j)];
        let h = 1e-5 * orig.abs().max(1.0);
        params.tensors[p][(i, j)] = orig + h;
        let (up, _) = loss_fn(params);
        params.tensors[p][(i, j)] = orig - h;
        let (down, _) = loss_fn(params);
        params.tensors[p][(i, j)] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[p][(i, j)];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((a - numeric).abs() / denom);
    }
    max_rel
}
