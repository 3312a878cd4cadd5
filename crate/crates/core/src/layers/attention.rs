use rand::Rng;

use super::{Embedding, Linear};
use crate::tensorkit::{argmax, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// Position-encoding capacity.
pub const MAX_POSITIONS: usize = 512;

/// Softmax attention (Transformer) or kernelised linear attention with the
/// feature map `elu(x) + 1` (Linear Transformer).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Softmax,
    Linear,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Softmax => "trf",
            AttentionKind::Linear => "lt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trf" => Some(AttentionKind::Softmax),
            "lt" => Some(AttentionKind::Linear),
            _ => None,
        }
    }
}

/// How positions may attend to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnMode {
    /// Unmasked: every position sees the whole input.
    Full,
    /// Causal mask, computed in quadratic form.
    Causal,
    /// Causal, computed as a recurrence over running sums `S_i`, `Z_i`.
    /// Only linear attention has this form; softmax attention falls back to
    /// [`AttnMode::Causal`].
    CausalRecurrent,
}

/// Multi-head self-attention with output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d_model: usize,
    pub kind: AttentionKind,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        kind: AttentionKind,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible into {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, true, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, true, rng)?,
            heads,
            d_model,
            kind,
        })
    }

    /// `x` is `[T, d_model]`. Row-normalised attention weights (`[T, T]` per
    /// head) are appended to `trace` when given; the recurrent form records none.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        mode: AttnMode,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Var {
        let dk = self.d_model / self.heads;
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, x);
        let v = self.v.forward(g, x);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk);
            let kh = g.slice_cols(k, h * dk, dk);
            let vh = g.slice_cols(v, h * dk, dk);
            let out = match self.kind {
                AttentionKind::Softmax => {
                    let s = g.matmul_t(qh, kh);
                    let s = g.scale(s, T::of(1.0 / (dk as f64).sqrt()));
                    let p = match mode {
                        AttnMode::Full => g.softmax(s),
                        AttnMode::Causal | AttnMode::CausalRecurrent => g.causal_softmax(s),
                    };
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.push(p);
                    }
                    g.matmul(p, vh)
                }
                AttentionKind::Linear => {
                    let fq = g.elu_plus_one(qh);
                    let fk = g.elu_plus_one(kh);
                    match mode {
                        AttnMode::CausalRecurrent => linear_recurrent(g, fq, fk, vh),
                        AttnMode::Full | AttnMode::Causal => {
                            let a = g.matmul_t(fq, fk);
                            let a = if mode == AttnMode::Causal { g.tril(a) } else { a };
                            let num = g.matmul(a, vh);
                            let den = g.sum_cols(a);
                            if let Some(tr) = trace.as_deref_mut() {
                                let w = g.div_col(a, den);
                                tr.push(w);
                            }
                            g.div_col(num, den)
                        }
                    }
                }
            };
            outs.push(out);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.o.forward(g, cat)
    }
}

/// `S_i = S_{i−1} + φ(K_i)ᵀ V_i`, `Z_i = Z_{i−1} + φ(K_i)`,
/// `out_i = φ(Q_i) S_i / φ(Q_i)·Z_i`, with `S_0 = Z_0 = 0`.
fn linear_recurrent<T: Real>(g: &mut Graph<'_, T>, fq: Var, fk: Var, v: Var) -> Var {
    let (steps, dk) = g.shape(fk);
    let dv = g.cols(v);
    let mut s = g.zeros(dk, dv);
    let mut z = g.zeros(1, dk);
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let ki = g.slice_rows(fk, i, 1);
        let vi = g.slice_rows(v, i, 1);
        let kt = g.transpose(ki);
        let outer = g.matmul(kt, vi);
        s = g.add(s, outer);
        z = g.add(z, ki);
        let qi = g.slice_rows(fq, i, 1);
        let num = g.matmul(qi, s);
        let den = g.matmul_t(qi, z);
        rows.push(g.div_col(num, den));
    }
    g.concat_rows(&rows)
}

/// Post-norm encoder block: `x = LN(x + Attn(x))`, `x = LN(x + FFN(x))`, ReLU FFN.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

impl EncoderLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let attn = MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.heads, cfg.kind, rng)?;
        let ln1_g = store.add(format!("{name}.ln1.g"), Tensor::filled(&[d], T::one()));
        let ln1_b = store.add(format!("{name}.ln1.b"), Tensor::zeros(&[d]));
        let ff1 = Linear::new(store, &format!("{name}.ff1"), d, cfg.ffn_dim, true, rng)?;
        let ff2 = Linear::new(store, &format!("{name}.ff2"), cfg.ffn_dim, d, true, rng)?;
        let ln2_g = store.add(format!("{name}.ln2.g"), Tensor::filled(&[d], T::one()));
        let ln2_b = store.add(format!("{name}.ln2.b"), Tensor::zeros(&[d]));
        Ok(EncoderLayer {
            attn,
            ln1_g,
            ln1_b,
            ff1,
            ff2,
            ln2_g,
            ln2_b,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        mode: AttnMode,
        dropout: f64,
        trace: Option<&mut Vec<Var>>,
    ) -> Var {
        let a = self.attn.forward(g, x, mode, trace);
        let a = g.dropout(a, dropout);
        let r = g.add(x, a);
        let (lg, lb) = (g.param(self.ln1_g), g.param(self.ln1_b));
        let x = g.layer_norm(r, lg, lb);
        let f = self.ff1.forward(g, x);
        let f = g.relu(f);
        let f = self.ff2.forward(g, f);
        let f = g.dropout(f, dropout);
        let r = g.add(x, f);
        let (lg, lb) = (g.param(self.ln2_g), g.param(self.ln2_b));
        g.layer_norm(r, lg, lb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub kind: AttentionKind,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    pub embed_dim: usize,
    pub labels: usize,
}

/// Token labeller: embedding, projection to `d_model`, sinusoidal positions,
/// a stack of encoder blocks and a per-position output head.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embed: Embedding,
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

impl Encoder {
    /// Parameters are named `<name>.*`; the embedding table is the shared
    /// parameter `embed`, created if absent.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let embed = match Embedding::attach(store, "embed") {
            Some(e) => {
                if e.vocab != config.vocab || e.dim != config.embed_dim {
                    return Err(Error::Config(format!(
                        "shared embedding is {}x{}, encoder expects {}x{}",
                        e.vocab, e.dim, config.vocab, config.embed_dim
                    )));
                }
                e
            }
            None => Embedding::new(store, "embed", config.vocab, config.embed_dim, rng)?,
        };
        let input = Linear::new(store, &format!("{name}.input"), config.embed_dim, config.d_model, true, rng)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            layers.push(EncoderLayer::new(store, &format!("{name}.l{l}"), &config, rng)?);
        }
        let head = Linear::new(store, &format!("{name}.head"), config.d_model, config.labels, true, rng)?;
        Ok(Encoder {
            config,
            embed,
            input,
            layers,
            head,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[usize], mode: AttnMode, dropout: f64) -> Result<Var> {
        self.forward_traced(g, ids, mode, dropout, None)
    }

    /// Logits `[T, labels]`. Attention weights of every layer and head are
    /// appended to `trace` in layer-major order.
    pub fn forward_traced<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[usize],
        mode: AttnMode,
        dropout: f64,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let pe = positional_encoding::<T>(ids.len(), self.config.d_model)?;
        let e = self.embed.forward(g, ids);
        let x = self.input.forward(g, e);
        let pe = g.input(&pe);
        let x = g.add(x, pe);
        let mut x = g.dropout(x, dropout);
        for layer in &self.layers {
            x = layer.forward(g, x, mode, dropout, trace.as_deref_mut());
        }
        Ok(self.head.forward(g, x))
    }

    pub fn logits<T: Real>(&self, store: &ParamStore<T>, ids: &[usize], mode: AttnMode) -> Result<Tensor<T>> {
        let mut g = Graph::inference(store);
        let out = self.forward(&mut g, ids, mode, 0.0)?;
        Ok(g.tensor(out))
    }

    /// Argmax label per position.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, ids: &[usize], mode: AttnMode) -> Result<Vec<usize>> {
        let logits = self.logits(store, ids, mode)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row_slice(r))).collect())
    }
}

/// Fixed sinusoidal encoding `[len, d]`: `sin(p / 10000^(2i/d))` on even
/// columns and the matching cosine on odd ones.
pub fn positional_encoding<T: Real>(len: usize, d: usize) -> Result<Tensor<T>> {
    if len == 0 {
        return Err(Error::Empty("encoder input has no tokens".into()));
    }
    if len > MAX_POSITIONS {
        return Err(Error::Data(format!(
            "sequence of {len} tokens exceeds the {MAX_POSITIONS}-position encoding"
        )));
    }
    let mut data = Vec::with_capacity(len * d);
    for p in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = p as f64 / rate;
            data.push(T::of(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Ok(Tensor::matrix(len, d, data))
}
