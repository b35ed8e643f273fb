use std::collections::HashMap;

use crate::error::{contract, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::rng::unit_hash;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(format!("unknown precision {other:?} (expected single or double)")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

#[derive(Clone, Debug)]
pub struct GraphConfig {
    pub precision: Precision,
    /// Enables dropout.
    pub train: bool,
    pub seed: u64,
    /// Optimiser step; part of the dropout key so masks change every update.
    pub step: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            precision: Precision::Double,
            train: false,
            seed: 0,
            step: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    LstmCell {
        gates: Var,
        c_prev: Var,
        /// Activated gates (i, f, g, o), same layout as `gates`.
        acts: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    MultiHeadAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        /// Per-head attention probabilities, `heads x Lq x Lk`.
        probs: Vec<f64>,
    },
    AdditiveScores {
        keys: Var,
        query: Var,
        loc: Var,
        v: Var,
        z: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::Conv1d { .. } => "conv1d",
            Op::GatherRows { .. } => "gather_rows",
            Op::LstmCell { .. } => "lstm_cell",
            Op::MultiHeadAttention { .. } => "multi_head_attention",
            Op::AdditiveScores { .. } => "additive_scores",
            Op::Mse { .. } => "mse",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Every operator evaluates eagerly when it is recorded, so node inputs always
/// precede the node itself and the recording order is a topological order.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    config: GraphConfig,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients. Unused inputs get an all-zero tensor.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let shape = self.shapes.get(v.0)?;
        match &self.grads[v.0] {
            Some(g) => Some(Tensor::new(shape.clone(), g.clone()).expect("grad shape")),
            None => None,
        }
    }

    /// Adds the gradient of every parameter leaf into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                for (acc, gi) in store.get_mut(pid).grad.data_mut().iter_mut().zip(g) {
                    *acc += gi;
                }
            }
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m x n] += a[m x k] * b[k x n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b[k x n]^T`
fn gemm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in grow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k x n] += a[m x k]^T * g[m x n]`
fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

impl Graph {
    pub fn new(config: GraphConfig) -> Self {
        Graph {
            nodes: Vec::new(),
            config,
            params: HashMap::new(),
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn is_train(&self) -> bool {
        self.config.train
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, mut value: Tensor, requires_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        if self.config.precision == Precision::Single {
            for x in value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
        if !value.is_finite() {
            return Err(TensorError::NumericOverflow {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(id))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    // ---- leaves ----------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, false).expect("constant must be finite")
    }

    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(Op::Input, t, requires_grad)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self
            .push(Op::Param, store.value(id).clone(), true)
            .expect("parameter values must be finite");
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(op, t, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[1, n]` (or `[n]`) row to every row of `x: [m, n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.value(row).numel() != n {
            return Err(self.mismatch("add_row", x, row));
        }
        let r = self.value(row).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for (d, rv) in data[i * n..(i + 1) * n].iter_mut().zip(&r) {
                *d += rv;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x) || self.rg(row);
        self.push(Op::AddRow(x, row), t, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        self.push(Op::Scale(x, c), t, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        self.push(op, t, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            softmax_row(&mut data[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        self.push(Op::Softmax(x), t, rg)
    }

    /// Row-wise layer normalisation with learned gain and bias of width `n`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.value(gain).numel() != n {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.value(bias).numel() != n {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            t,
            rg,
        )
    }

    /// Inverted dropout. Identity when the graph is not in training mode or
    /// `p == 0`. The mask depends only on `(seed, node id, step, index)`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(contract(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.config.train || p == 0.0 {
            return Ok(x);
        }
        let node = self.nodes.len() as u64;
        let keep = 1.0 / (1.0 - p);
        let (seed, step) = (self.config.seed, self.config.step);
        let mask: Vec<f64> = (0..self.value(x).numel() as u64)
            .map(|i| {
                if unit_hash(seed, node, step, i) < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        self.push(Op::Dropout { x, mask }, t, rg)
    }

    /// Same-padded 1-D convolution over time.
    ///
    /// `x: [L, Cin]`, `w: [K, Cin, Cout]` with odd `K`, optional `bias: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (l, cin) = self.dims2(x);
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[0] % 2 == 0 {
            return Err(self.mismatch("conv1d", x, w));
        }
        let (k, cout) = (ws[0], ws[2]);
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(self.mismatch("conv1d", w, b));
            }
        }
        let pad = k / 2;
        let xs = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; l * cout];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for t in 0..l {
                out[t * cout..(t + 1) * cout].copy_from_slice(bd);
            }
        }
        for t in 0..l {
            let orow = &mut out[t * cout..(t + 1) * cout];
            for kk in 0..k {
                let src = t as isize + kk as isize - pad as isize;
                if src < 0 || src >= l as isize {
                    continue;
                }
                let xrow = &xs[src as usize * cin..(src as usize + 1) * cin];
                let wk = &wd[kk * cin * cout..(kk + 1) * cin * cout];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, wv) in orow.iter_mut().zip(&wk[c * cout..(c + 1) * cout]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![l, cout], out)?;
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        self.push(Op::Conv1d { x, w, bias }, t, rg)
    }

    /// `out[r] = table[idx[r]]`. Embedding lookup and length expansion are
    /// both expressed with this operator.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(contract(format!("row index {bad} out of range for {v} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![idx.len(), d], out)?;
        let rg = self.rg(table);
        self.push(
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            t,
            rg,
        )
    }

    /// LSTM cell nonlinearity.
    ///
    /// `gates: [n, 4H]` holds pre-activations in (input, forget, cell, output)
    /// order and `c_prev: [n, H]`. Returns `[n, 2H]` = `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (n, g4) = self.dims2(gates);
        let (n2, h) = self.dims2(c_prev);
        if n != n2 || g4 != 4 * h {
            return Err(self.mismatch("lstm_cell", gates, c_prev));
        }
        let gd = self.value(gates).data();
        let cd = self.value(c_prev).data();
        let mut acts = vec![0.0; n * 4 * h];
        let mut tanh_c = vec![0.0; n * h];
        let mut out = vec![0.0; n * 2 * h];
        for r in 0..n {
            let g = &gd[r * 4 * h..(r + 1) * 4 * h];
            let a = &mut acts[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let i_g = sigmoid(g[j]);
                let f_g = sigmoid(g[h + j]);
                let c_g = g[2 * h + j].tanh();
                let o_g = sigmoid(g[3 * h + j]);
                a[j] = i_g;
                a[h + j] = f_g;
                a[2 * h + j] = c_g;
                a[3 * h + j] = o_g;
                let c = f_g * cd[r * h + j] + i_g * c_g;
                let tc = c.tanh();
                tanh_c[r * h + j] = tc;
                out[r * 2 * h + j] = o_g * tc;
                out[r * 2 * h + h + j] = c;
            }
        }
        let t = Tensor::new(vec![n, 2 * h], out)?;
        let rg = self.rg(gates) || self.rg(c_prev);
        self.push(
            Op::LstmCell {
                gates,
                c_prev,
                acts,
                tanh_c,
            },
            t,
            rg,
        )
    }

    /// Scaled dot-product attention split over `heads` column groups.
    /// `q: [Lq, d]`, `k, v: [Lk, d]`; returns `[Lq, d]`.
    pub fn multi_head_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (lq, d) = self.dims2(q);
        let (lk, dk) = self.dims2(k);
        let (lv, dv) = self.dims2(v);
        if dk != d {
            return Err(self.mismatch("multi_head_attention", q, k));
        }
        if lv != lk || dv != d {
            return Err(self.mismatch("multi_head_attention", k, v));
        }
        if heads == 0 || d % heads != 0 {
            return Err(contract(format!("width {d} not divisible into {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * d];
        for hh in 0..heads {
            let off = hh * dh;
            let p = &mut probs[hh * lq * lk..(hh + 1) * lq * lk];
            for i in 0..lq {
                let qi = &qd[i * d + off..i * d + off + dh];
                let row = &mut p[i * lk..(i + 1) * lk];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &kd[j * d + off..j * d + off + dh];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_row(row);
                let orow = &mut out[i * d + off..i * d + off + dh];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (o, vv) in orow.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![lq, d], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            Op::MultiHeadAttention {
                q,
                k,
                v,
                heads,
                probs,
            },
            t,
            rg,
        )
    }

    /// Location-sensitive attention energies
    /// `e[j] = sum_a v[a] * tanh(keys[j, a] + query[a] + loc[j, a])`.
    ///
    /// `keys, loc: [S, A]`, `query: [1, A]`, `v: [A, 1]`; returns `[1, S]`.
    pub fn additive_scores(&mut self, keys: Var, query: Var, loc: Var, v: Var) -> Result<Var> {
        let (s, a) = self.dims2(keys);
        if self.shape(loc) != self.shape(keys) {
            return Err(self.mismatch("additive_scores", keys, loc));
        }
        if self.value(query).numel() != a {
            return Err(self.mismatch("additive_scores", keys, query));
        }
        if self.value(v).numel() != a {
            return Err(self.mismatch("additive_scores", keys, v));
        }
        let (kd, qd, ld, vd) = (
            self.value(keys).data(),
            self.value(query).data(),
            self.value(loc).data(),
            self.value(v).data(),
        );
        let mut z = vec![0.0; s * a];
        let mut out = vec![0.0; s];
        for j in 0..s {
            let mut e = 0.0;
            for c in 0..a {
                let zz = (kd[j * a + c] + qd[c] + ld[j * a + c]).tanh();
                z[j * a + c] = zz;
                e += vd[c] * zz;
            }
            out[j] = e;
        }
        let t = Tensor::new(vec![1, s], out)?;
        let rg = self.rg(keys) || self.rg(query) || self.rg(loc) || self.rg(v);
        self.push(
            Op::AdditiveScores {
                keys,
                query,
                loc,
                v,
                z,
            },
            t,
            rg,
        )
    }

    // ---- losses and reductions ------------------------------------------

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                left: self.shape(pred).to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let n = target.numel().max(1) as f64;
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        self.push(
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        )
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, v) = self.dims2(logits);
        if targets.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        if m == 0 {
            return Err(contract("cross_entropy over zero rows"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(contract(format!("target class {bad} out of range for {v} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for i in 0..m {
            let row = &mut probs[i * v..(i + 1) * v];
            softmax_row(row);
            loss -= row[targets[i]].max(f64::MIN_POSITIVE).ln();
        }
        loss /= m as f64;
        let rg = self.rg(logits);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        )
    }

    /// Average pooling over time: `[L, d] -> [1, d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if m == 0 {
            return Err(contract("mean_rows over zero rows"));
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&xs[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(x);
        self.push(Op::MeanRows(x), Tensor::row(out), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(contract("mean of empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::scalar(s), rg)
    }

    // ---- structural ------------------------------------------------------

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| contract("concat_cols of nothing"))?;
        let m = self.dims2(first).0;
        for &x in xs {
            if self.dims2(x).0 != m {
                return Err(self.mismatch("concat_cols", first, x));
            }
        }
        let widths: Vec<usize> = xs.iter().map(|&x| self.dims2(x).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(Op::ConcatCols(xs.to_vec()), Tensor::new(vec![m, total], out)?, rg)
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if start > end || end > n {
            return Err(contract(format!("column slice {start}..{end} of width {n}")));
        }
        let w = end - start;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&xs[i * n + start..i * n + end]);
        }
        let rg = self.rg(x);
        self.push(Op::SliceCols { x, start }, Tensor::new(vec![m, w], out)?, rg)
    }

    /// Stacks 2-D tensors of equal width along rows.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| contract("concat_rows of nothing"))?;
        let n = self.dims2(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (m, w) = self.dims2(x);
            if w != n {
                return Err(self.mismatch("concat_rows", first, x));
            }
            rows += m;
            out.extend_from_slice(self.value(x).data());
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(Op::ConcatRows(xs.to_vec()), Tensor::new(vec![rows, n], out)?, rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if start > end || end > m {
            return Err(contract(format!("row slice {start}..{end} of {m} rows")));
        }
        let out = self.value(x).data()[start * n..end * n].to_vec();
        let rg = self.rg(x);
        self.push(Op::SliceRows { x, start }, Tensor::new(vec![end - start, n], out)?, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        self.push(Op::Reshape(x), t, rg)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.shape(loss)
            )));
        }
        let n_nodes = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..n_nodes).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Leaves that require gradients but were not reached get zeros.
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.value.numel()]);
            }
            if !node.requires_grad {
                grads[id] = None;
            }
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = node.value.data();
        let send = |v: Var, d: &[f64], grads: &mut [Option<Vec<f64>>]| {
            if self.rg(v) {
                add_into(&mut grads[v.0], d);
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(g, self.value(*b).data(), &mut da, m, n, k);
                    send(*a, &da, grads);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(self.value(*a).data(), g, &mut db, m, k, n);
                    send(*b, &db, grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, g, grads);
                send(*b, g, grads);
            }
            Op::Sub(a, b) => {
                send(*a, g, grads);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                send(*b, &neg, grads);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    send(*a, &d, grads);
                }
                if self.rg(*b) {
                    let d: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    send(*b, &d, grads);
                }
            }
            Op::AddRow(x, row) => {
                send(*x, g, grads);
                if self.rg(*row) {
                    let (m, n) = self.dims2(*x);
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, gv) in dr.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *d += gv;
                        }
                    }
                    send(*row, &dr, grads);
                }
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                send(*x, &d, grads);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(val).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                send(*x, &d, grads);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g.iter().zip(val).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                send(*x, &d, grads);
            }
            Op::Relu(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*x, &d, grads);
            }
            Op::Softmax(x) => {
                let (m, n) = self.dims2(*x);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let y = &val[i * n..(i + 1) * n];
                    let gy = &g[i * n..(i + 1) * n];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[i * n + j] = y[j] * (gy[j] - dot);
                    }
                }
                send(*x, &d, grads);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, n) = self.dims2(*x);
                let gd = self.value(*gain).data();
                if self.rg(*x) {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dh = g[i * n + j] * gd[j];
                            s1 += dh;
                            s2 += dh * xhat[i * n + j];
                        }
                        for j in 0..n {
                            let dh = g[i * n + j] * gd[j];
                            dx[i * n + j] =
                                rstd[i] / n as f64 * (n as f64 * dh - s1 - xhat[i * n + j] * s2);
                        }
                    }
                    send(*x, &dx, grads);
                }
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dg[j] += g[i * n + j] * xhat[i * n + j];
                            db[j] += g[i * n + j];
                        }
                    }
                    send(*gain, &dg, grads);
                    send(*bias, &db, grads);
                }
            }
            Op::Dropout { x, mask } => {
                let d: Vec<f64> = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                send(*x, &d, grads);
            }
            Op::Conv1d { x, w, bias } => {
                let (l, cin) = self.dims2(*x);
                let ws = self.shape(*w);
                let (k, cout) = (ws[0], ws[2]);
                let pad = k / 2;
                let xs = self.value(*x).data();
                let wd = self.value(*w).data();
                let need_dx = self.rg(*x);
                let need_dw = self.rg(*w);
                let mut dx = vec![0.0; if need_dx { l * cin } else { 0 }];
                let mut dw = vec![0.0; if need_dw { k * cin * cout } else { 0 }];
                for t in 0..l {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for kk in 0..k {
                        let src = t as isize + kk as isize - pad as isize;
                        if src < 0 || src >= l as isize {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..cin {
                            let wrow = &wd[(kk * cin + c) * cout..(kk * cin + c + 1) * cout];
                            if need_dx {
                                dx[src * cin + c] +=
                                    grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if need_dw {
                                let xv = xs[src * cin + c];
                                if xv != 0.0 {
                                    let dwrow =
                                        &mut dw[(kk * cin + c) * cout..(kk * cin + c + 1) * cout];
                                    for (d, gv) in dwrow.iter_mut().zip(grow) {
                                        *d += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                if need_dx {
                    send(*x, &dx, grads);
                }
                if need_dw {
                    send(*w, &dw, grads);
                }
                if let Some(b) = bias {
                    if self.rg(*b) {
                        let mut db = vec![0.0; cout];
                        for t in 0..l {
                            for (d, gv) in db.iter_mut().zip(&g[t * cout..(t + 1) * cout]) {
                                *d += gv;
                            }
                        }
                        send(*b, &db, grads);
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                if self.rg(*table) {
                    let (v, d) = self.dims2(*table);
                    let mut dt = vec![0.0; v * d];
                    for (r, &i) in idx.iter().enumerate() {
                        for (a, b) in dt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *a += b;
                        }
                    }
                    send(*table, &dt, grads);
                }
            }
            Op::LstmCell {
                gates,
                c_prev,
                acts,
                tanh_c,
            } => {
                let (n, h) = self.dims2(*c_prev);
                let cp = self.value(*c_prev).data();
                let mut dgates = vec![0.0; n * 4 * h];
                let mut dcp = vec![0.0; n * h];
                for r in 0..n {
                    let a = &acts[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let (ig, fg, cg, og) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = tanh_c[r * h + j];
                        let dh = g[r * 2 * h + j];
                        let dc_out = g[r * 2 * h + h + j];
                        let dc = dc_out + dh * og * (1.0 - tc * tc);
                        let d_o = dh * tc;
                        let d_i = dc * cg;
                        let d_g = dc * ig;
                        let d_f = dc * cp[r * h + j];
                        dcp[r * h + j] = dc * fg;
                        let dg = &mut dgates[r * 4 * h..(r + 1) * 4 * h];
                        dg[j] = d_i * ig * (1.0 - ig);
                        dg[h + j] = d_f * fg * (1.0 - fg);
                        dg[2 * h + j] = d_g * (1.0 - cg * cg);
                        dg[3 * h + j] = d_o * og * (1.0 - og);
                    }
                }
                send(*gates, &dgates, grads);
                send(*c_prev, &dcp, grads);
            }
            Op::MultiHeadAttention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (lq, d) = self.dims2(*q);
                let lk = self.dims2(*k).0;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; lq * d];
                let mut dk = vec![0.0; lk * d];
                let mut dv = vec![0.0; lk * d];
                let mut dp = vec![0.0; lk];
                for hh in 0..*heads {
                    let off = hh * dh;
                    let p = &probs[hh * lq * lk..(hh + 1) * lq * lk];
                    for i in 0..lq {
                        let go = &g[i * d + off..i * d + off + dh];
                        let prow = &p[i * lk..(i + 1) * lk];
                        for j in 0..lk {
                            let vj = &vd[j * d + off..j * d + off + dh];
                            dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                            let pij = prow[j];
                            for (dvv, gv) in dv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                                *dvv += pij * gv;
                            }
                        }
                        let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        for j in 0..lk {
                            let ds = prow[j] * (dp[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            for c in 0..dh {
                                dq[i * d + off + c] += ds * kd[j * d + off + c];
                                dk[j * d + off + c] += ds * qd[i * d + off + c];
                            }
                        }
                    }
                }
                send(*q, &dq, grads);
                send(*k, &dk, grads);
                send(*v, &dv, grads);
            }
            Op::AdditiveScores {
                keys,
                query,
                loc,
                v,
                z,
            } => {
                let (s, a) = self.dims2(*keys);
                let vd = self.value(*v).data();
                let mut dz = vec![0.0; s * a];
                let mut dv = vec![0.0; a];
                let mut dq = vec![0.0; a];
                for j in 0..s {
                    let gj = g[j];
                    for c in 0..a {
                        let zz = z[j * a + c];
                        dv[c] += gj * zz;
                        let d = gj * vd[c] * (1.0 - zz * zz);
                        dz[j * a + c] = d;
                        dq[c] += d;
                    }
                }
                send(*keys, &dz, grads);
                send(*loc, &dz, grads);
                send(*query, &dq, grads);
                send(*v, &dv, grads);
            }
            Op::Mse { pred, target } => {
                let n = target.len().max(1) as f64;
                let d: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| 2.0 * (p - t) / n * g[0])
                    .collect();
                send(*pred, &d, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, v) = self.dims2(*logits);
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * v + t] -= 1.0;
                }
                let f = g[0] / m as f64;
                d.iter_mut().for_each(|x| *x *= f);
                send(*logits, &d, grads);
            }
            Op::MeanRows(x) => {
                let (m, n) = self.dims2(*x);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = g[j] / m as f64;
                    }
                }
                send(*x, &d, grads);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).numel()];
                send(*x, &d, grads);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let d = vec![g[0] / n as f64; n];
                send(*x, &d, grads);
            }
            Op::ConcatCols(xs) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &x in xs {
                    let w = self.dims2(x).1;
                    if self.rg(x) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        send(x, &d, grads);
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims2(*x);
                let w = node.value.cols();
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(*x, &d, grads);
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.value(x).numel();
                    send(x, &g[off..off + len], grads);
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let (m, n) = self.dims2(*x);
                let mut d = vec![0.0; m * n];
                d[start * n..start * n + g.len()].copy_from_slice(g);
                send(*x, &d, grads);
            }
            Op::Reshape(x) => send(*x, g, grads),
        }
    }
}
