//! Parameterised layers shared by the models.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.xavier(format!("{name}.w"), &[input, output], rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[output]));
        Linear { w, b }
    }

    /// All-zero weights and bias.
    pub fn zeroed(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Self {
        let w = store.zeros(format!("{name}.w"), &[input, output]);
        let b = Some(store.zeros(format!("{name}.b"), &[output]));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv1d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.xavier(format!("{name}.w"), &[kernel, input, output], rng);
        let b = store.zeros(format!("{name}.b"), &[output]);
        Conv1d { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.filled(format!("{name}.gain"), &[width], 1.0),
            bias: store.zeros(format!("{name}.bias"), &[width]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        Embedding {
            table: store.uniform(format!("{name}.table"), &[vocab, dim], bound, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let t = g.param(store, self.table);
        g.gather_rows(t, ids)
    }
}

/// Single-layer LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.uniform(format!("{name}.w_ih"), &[input, 4 * hidden], bound, rng);
        let w_hh = store.uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], bound, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), Tensor::row(bias).reshape(vec![4 * hidden]).expect("shape"));
        Lstm { w_ih, w_hh, b, hidden }
    }

    /// One step from precomputed input projection `xw: [1, 4H]`.
    /// Returns `(h, c)`, each `[1, H]`.
    pub fn step_projected(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        xw: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let w_hh = g.param(store, self.w_hh);
        let hw = g.matmul(h, w_hh)?;
        let gates = g.add(xw, hw)?;
        let b = g.param(store, self.b);
        let gates = g.add_row(gates, b)?;
        let hc = g.lstm_cell(gates, c)?;
        let h = g.slice_cols(hc, 0, self.hidden)?;
        let c = g.slice_cols(hc, self.hidden, 2 * self.hidden)?;
        Ok((h, c))
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_ih = g.param(store, self.w_ih);
        let xw = g.matmul(x, w_ih)?;
        self.step_projected(g, store, xw, h, c)
    }

    /// Runs over the rows of `xs: [L, in]` from a zero state and returns the
    /// hidden states `[L, H]` in input order.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, xs: Var, reverse: bool) -> Result<Var> {
        let len = g.shape(xs)[0];
        let w_ih = g.param(store, self.w_ih);
        let xw = g.matmul(xs, w_ih)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut c = h;
        let mut outs = vec![h; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let x_t = g.slice_rows(xw, t, t + 1)?;
            let (nh, nc) = self.step_projected(g, store, x_t, h, c)?;
            h = nh;
            c = nc;
            outs[t] = h;
        }
        g.concat_rows(&outs)
    }
}

/// Sinusoidal position table `[len, dim]`.
pub fn sinusoid_table(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let a = p as f64 * rate;
            data[p * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("shape")
}
