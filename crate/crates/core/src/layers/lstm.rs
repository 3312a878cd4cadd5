use rand::Rng;

use super::{add_xavier, Linear};
use crate::tensorkit::{argmax, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// One LSTM layer. Gate blocks are laid out `[i, f, g, o]` along the output axis.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(LstmCell {
            w_x: add_xavier(store, format!("{name}.w_x"), &[input_dim, 4 * hidden], rng)?,
            w_h: add_xavier(store, format!("{name}.w_h"), &[hidden, 4 * hidden], rng)?,
            b: add_xavier(store, format!("{name}.b"), &[4 * hidden], rng)?,
            input_dim,
            hidden,
        })
    }

    /// Gate update given the input projection `xw = x W_x` (already computed).
    fn update<T: Real>(&self, g: &mut Graph<'_, T>, xw: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let wh = g.param(self.w_h);
        let hw = g.matmul(h, wh);
        let z = g.add(xw, hw);
        let b = g.param(self.b);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, n);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * n, n);
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * n, n);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c_new = g.add(fc, ic);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// Per-layer `(h, c)` handles on a graph.
#[derive(Clone, Debug)]
pub struct LstmVars {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

/// Concrete recurrent state carried between inference steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T: Real = f32> {
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
}

/// Result of one incremental step.
#[derive(Clone, Debug)]
pub struct LstmOutput<T: Real = f32> {
    pub h: Vec<T>,
    pub logits: Vec<T>,
    pub label: usize,
}

/// Stacked LSTM with an output head producing label logits.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub cells: Vec<LstmCell>,
    pub head: Linear,
    pub input_dim: usize,
    pub hidden: usize,
    pub labels: usize,
}

impl LstmStack {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        labels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("LSTM needs at least one layer".into()));
        }
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let inp = if l == 0 { input_dim } else { hidden };
            cells.push(LstmCell::new(store, &format!("{name}.l{l}"), inp, hidden, rng)?);
        }
        let head = Linear::new(store, &format!("{name}.head"), hidden, labels, true, rng)?;
        Ok(LstmStack {
            cells,
            head,
            input_dim,
            hidden,
            labels,
        })
    }

    pub fn zero_state<T: Real>(&self) -> LstmState<T> {
        let z = vec![T::zero(); self.hidden];
        LstmState {
            h: vec![z.clone(); self.cells.len()],
            c: vec![z; self.cells.len()],
        }
    }

    pub fn zero_vars<T: Real>(&self, g: &mut Graph<'_, T>) -> LstmVars {
        let h = (0..self.cells.len()).map(|_| g.zeros(1, self.hidden)).collect();
        let c = (0..self.cells.len()).map(|_| g.zeros(1, self.hidden)).collect();
        LstmVars { h, c }
    }

    /// One time step on a graph. `x` is `[1, input_dim]`. Returns the new
    /// state, the top-layer hidden state and the logits.
    pub fn step_vars<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        prev: &LstmVars,
        dropout: f64,
    ) -> (LstmVars, Var, Var) {
        let mut input = x;
        let mut next = LstmVars {
            h: Vec::with_capacity(self.cells.len()),
            c: Vec::with_capacity(self.cells.len()),
        };
        for (l, cell) in self.cells.iter().enumerate() {
            if l > 0 {
                input = g.dropout(input, dropout);
            }
            let wx = g.param(cell.w_x);
            let xw = g.matmul(input, wx);
            let (h, c) = cell.update(g, xw, prev.h[l], prev.c[l]);
            next.h.push(h);
            next.c.push(c);
            input = h;
        }
        let top = g.dropout(input, dropout);
        let logits = self.head.forward(g, top);
        (next, input, logits)
    }

    /// Runs the whole sequence `xs` (`[T, input_dim]`) from a zero state.
    /// Returns per-step top hidden states and the stacked logits `[T, labels]`.
    pub fn forward_sequence<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        xs: Var,
        dropout: f64,
    ) -> (Vec<Var>, Var) {
        let steps = g.rows(xs);
        let mut layer_in = xs;
        let mut hs = Vec::new();
        for (l, cell) in self.cells.iter().enumerate() {
            if l > 0 {
                layer_in = g.dropout(layer_in, dropout);
            }
            let wx = g.param(cell.w_x);
            let xw_all = g.matmul(layer_in, wx);
            let mut h = g.zeros(1, self.hidden);
            let mut c = g.zeros(1, self.hidden);
            hs.clear();
            for t in 0..steps {
                let xw = g.slice_rows(xw_all, t, 1);
                let (hn, cn) = cell.update(g, xw, h, c);
                h = hn;
                c = cn;
                hs.push(h);
            }
            layer_in = g.concat_rows(&hs);
        }
        let top = g.dropout(layer_in, dropout);
        let logits = self.head.forward(g, top);
        (hs, logits)
    }

    /// Incremental inference step: `h_t = ψ(h_{t−1}, x_t)`, logits and argmax label.
    pub fn step<T: Real>(
        &self,
        store: &ParamStore<T>,
        state: &mut LstmState<T>,
        x: &[T],
    ) -> Result<LstmOutput<T>> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "LSTM expects inputs of width {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut g = Graph::inference(store);
        let xv = g.input_rows(1, x.len(), x.to_vec());
        let prev = LstmVars {
            h: state.h.iter().map(|h| g.input_rows(1, h.len(), h.clone())).collect(),
            c: state.c.iter().map(|c| g.input_rows(1, c.len(), c.clone())).collect(),
        };
        let (next, top, logits) = self.step_vars(&mut g, xv, &prev, 0.0);
        for l in 0..self.cells.len() {
            state.h[l] = g.value(next.h[l]).to_vec();
            state.c[l] = g.value(next.c[l]).to_vec();
        }
        let logits = g.value(logits).to_vec();
        Ok(LstmOutput {
            h: g.value(top).to_vec(),
            label: argmax(&logits),
            logits,
        })
    }

    /// Whole-sequence inference; returns `[T, labels]` logits.
    pub fn logits<T: Real>(&self, store: &ParamStore<T>, xs: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::inference(store);
        let xv = g.input(xs);
        let (_, logits) = self.forward_sequence(&mut g, xv, 0.0);
        g.tensor(logits)
    }
}
