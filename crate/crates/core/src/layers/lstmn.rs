use std::collections::VecDeque;

use rand::Rng;

use super::add_xavier;
use crate::tensorkit::{Graph, ParamId, ParamStore, Real, Var};
use crate::{Error, Result};

/// One controller layer.
///
/// Attention: `U_i = γᵖ_i W_c + h W_h + k̃_{t−1} W_k̃ + b_u`, `s = softmax(tanh(U) v)`.
/// Update: `[i, f, o, ĉ] = [σ, σ, σ, tanh]([k̃_t, x_t] W)`, no gate bias.
#[derive(Clone, Debug)]
pub struct LstmnLayer {
    pub w_c: ParamId,
    pub w_h: ParamId,
    pub w_k: ParamId,
    pub b_u: ParamId,
    pub v: ParamId,
    pub w: ParamId,
    pub input_dim: usize,
}

/// Graph handles produced by one layer step.
#[derive(Clone, Copy, Debug)]
pub struct LstmnStepOut {
    pub k: Var,
    pub c: Var,
    pub k_tilde: Var,
    pub c_tilde: Var,
    /// `[1, slots]` attention weights; `None` when the cache was empty.
    pub attn: Option<Var>,
}

/// LSTMN controller attending over the fused-representation cache Γᵖ.
///
/// Layers above the first take the previous layer's `k_t` as their input and
/// keep their own summaries and memory tape; all layers attend over the same
/// cache with the processor state `h_t` as query.
#[derive(Clone, Debug)]
pub struct LstmnController {
    pub layers: Vec<LstmnLayer>,
    pub phi_dim: usize,
    pub query_dim: usize,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Per-sentence controller memory for incremental inference.
#[derive(Clone, Debug)]
pub struct ControllerState<T: Real = f32> {
    pub k_tilde: Vec<Vec<T>>,
    /// Memory tape per layer: `(time step, c_t)`, oldest first.
    pub tape: Vec<VecDeque<(usize, Vec<T>)>>,
    keep: usize,
}

#[derive(Clone, Debug)]
pub struct ControllerOutput<T: Real = f32> {
    /// Top-layer hidden state `k_t`.
    pub k: Vec<T>,
    pub c: Vec<T>,
    pub k_tilde: Vec<T>,
    pub c_tilde: Vec<T>,
    /// First-layer attention over the cache slots (empty when the cache was empty).
    pub attention: Vec<T>,
}

impl LstmnController {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        phi_dim: usize,
        query_dim: usize,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("controller needs at least one layer".into()));
        }
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let p = format!("{name}.l{l}");
            let inp = if l == 0 { input_dim } else { hidden };
            out.push(LstmnLayer {
                w_c: add_xavier(store, format!("{p}.w_c"), &[phi_dim, hidden], rng)?,
                w_h: add_xavier(store, format!("{p}.w_h"), &[query_dim, hidden], rng)?,
                w_k: add_xavier(store, format!("{p}.w_k"), &[phi_dim, hidden], rng)?,
                b_u: add_xavier(store, format!("{p}.b_u"), &[hidden], rng)?,
                v: add_xavier(store, format!("{p}.v"), &[hidden, 1], rng)?,
                w: add_xavier(store, format!("{p}.w"), &[phi_dim + inp, 4 * hidden], rng)?,
                input_dim: inp,
            });
        }
        Ok(LstmnController {
            layers: out,
            phi_dim,
            query_dim,
            input_dim,
            hidden,
        })
    }

    /// One step of layer `l`.
    ///
    /// `cache` is `[n, phi_dim]` and `tape` the aligned `[n, hidden]` memory
    /// cells; both `None` when the cache is empty, in which case
    /// `k̃_t = c̃_t = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn layer_step<T: Real>(
        &self,
        l: usize,
        g: &mut Graph<'_, T>,
        cache: Option<Var>,
        tape: Option<Var>,
        h: Var,
        x: Var,
        k_tilde_prev: Var,
    ) -> LstmnStepOut {
        let layer = &self.layers[l];
        let n = self.hidden;
        let (k_tilde, c_tilde, attn) = match (cache, tape) {
            (Some(cache), Some(tape)) => {
                let wc = g.param(layer.w_c);
                let slots = g.matmul(cache, wc);
                let wh = g.param(layer.w_h);
                let q = g.matmul(h, wh);
                let wk = g.param(layer.w_k);
                let kq = g.matmul(k_tilde_prev, wk);
                let q = g.add(q, kq);
                let bu = g.param(layer.b_u);
                let q = g.add(q, bu);
                let u = g.add_row(slots, q);
                let u = g.tanh(u);
                let v = g.param(layer.v);
                let e = g.matmul(u, v);
                let e = g.transpose(e);
                let s = g.softmax(e);
                let kt = g.matmul(s, cache);
                let ct = g.matmul(s, tape);
                (kt, ct, Some(s))
            }
            _ => (g.zeros(1, self.phi_dim), g.zeros(1, n), None),
        };
        let inp = g.concat_cols(&[k_tilde, x]);
        let w = g.param(layer.w);
        let z = g.matmul(inp, w);
        let i = g.slice_cols(z, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, n);
        let f = g.sigmoid(f);
        let o = g.slice_cols(z, 2 * n, n);
        let o = g.sigmoid(o);
        let cand = g.slice_cols(z, 3 * n, n);
        let cand = g.tanh(cand);
        let fc = g.mul(f, c_tilde);
        let ic = g.mul(i, cand);
        let c = g.add(fc, ic);
        let tc = g.tanh(c);
        let k = g.mul(o, tc);
        LstmnStepOut {
            k,
            c,
            k_tilde,
            c_tilde,
            attn,
        }
    }

    /// All layers for one step. `tapes[l]` and `k_tilde_prev[l]` belong to layer `l`.
    pub fn step_vars<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        cache: Option<Var>,
        tapes: &[Option<Var>],
        h: Var,
        x: Var,
        k_tilde_prev: &[Var],
    ) -> Vec<LstmnStepOut> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for l in 0..self.layers.len() {
            let out = self.layer_step(l, g, cache, tapes[l], h, input, k_tilde_prev[l]);
            input = out.k;
            outs.push(out);
        }
        outs
    }

    /// Fresh state. `keep` bounds the memory tape; it must be at least the cache capacity.
    pub fn init_state<T: Real>(&self, keep: usize) -> ControllerState<T> {
        ControllerState {
            k_tilde: vec![vec![T::zero(); self.phi_dim]; self.layers.len()],
            tape: vec![VecDeque::new(); self.layers.len()],
            keep: keep.max(1),
        }
    }

    /// Incremental step at absolute time `t`. `slots` are the current Γᵖ
    /// entries `(time, φ)`, oldest first; each must have a memory-tape cell
    /// recorded at the same time.
    pub fn step<T: Real>(
        &self,
        store: &ParamStore<T>,
        state: &mut ControllerState<T>,
        slots: &[(usize, &[T])],
        h: &[T],
        x: &[T],
        t: usize,
    ) -> Result<ControllerOutput<T>> {
        if h.len() != self.query_dim || x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "controller expects query {} and input {}, got {} and {}",
                self.query_dim,
                self.input_dim,
                h.len(),
                x.len()
            )));
        }
        let mut g = Graph::inference(store);
        let cache = if slots.is_empty() {
            None
        } else {
            let mut data = Vec::with_capacity(slots.len() * self.phi_dim);
            for (_, p) in slots {
                data.extend_from_slice(p);
            }
            Some(g.input_rows(slots.len(), self.phi_dim, data))
        };
        let mut tapes = Vec::with_capacity(self.layers.len());
        for tape in &state.tape {
            if slots.is_empty() {
                tapes.push(None);
                continue;
            }
            let mut data = Vec::with_capacity(slots.len() * self.hidden);
            for (time, _) in slots {
                let cell = tape
                    .iter()
                    .find(|(tt, _)| tt == time)
                    .ok_or_else(|| Error::Data(format!("memory tape has no cell for cache slot at time {time}")))?;
                data.extend_from_slice(&cell.1);
            }
            tapes.push(Some(g.input_rows(slots.len(), self.hidden, data)));
        }
        let hv = g.input_rows(1, h.len(), h.to_vec());
        let xv = g.input_rows(1, x.len(), x.to_vec());
        let kprev: Vec<Var> = state
            .k_tilde
            .iter()
            .map(|k| g.input_rows(1, k.len(), k.clone()))
            .collect();
        let outs = self.step_vars(&mut g, cache, &tapes, hv, xv, &kprev);
        for (l, out) in outs.iter().enumerate() {
            state.k_tilde[l] = g.value(out.k_tilde).to_vec();
            let tape = &mut state.tape[l];
            tape.push_back((t, g.value(out.c).to_vec()));
            while tape.len() > state.keep {
                tape.pop_front();
            }
        }
        let top = outs.last().expect("at least one layer");
        Ok(ControllerOutput {
            k: g.value(top.k).to_vec(),
            c: g.value(top.c).to_vec(),
            k_tilde: g.value(top.k_tilde).to_vec(),
            c_tilde: g.value(top.c_tilde).to_vec(),
            attention: outs[0].attn.map(|a| g.value(a).to_vec()).unwrap_or_default(),
        })
    }
}
