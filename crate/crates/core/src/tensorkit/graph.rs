//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the ids of its
//! inputs. [`Graph::backward`] replays the nodes in exact reverse order of
//! execution. Parameters are borrowed from a [`ParamStore`] rather than copied,
//! so per-token inference graphs stay cheap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Elu(Var),
    Softmax(Var),
    CausalSoftmax(Var),
    Tril(Var),
    SumCols(Var),
    SumRows(Var),
    SumAll(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    Bce {
        p: Var,
        targets: Vec<Option<T>>,
        count: usize,
    },
}

struct Node<T> {
    value: Value<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct BackwardResult<T: Real> {
    pub params: Gradients<T>,
    leaves: Vec<Option<Vec<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> BackwardResult<T> {
    /// Gradient of a leaf created with [`Graph::variable`]; zeros if unreached.
    pub fn var_grad(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shapes[v.0];
        match &self.leaves[v.0] {
            Some(g) => Tensor::matrix(r, c, g.clone()),
            None => Tensor::zeros(&[r, c]),
        }
    }
}

/// Tape of executed operations.
pub struct Graph<'s, T: Real = f32> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    tracking: bool,
    consumed: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

const LN_EPS: f64 = 1e-5;
const BCE_EPS: f64 = 1e-7;

impl<'s, T: Real> Graph<'s, T> {
    /// A tape that records gradients.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            tracking: true,
            consumed: false,
            dropout_rng: None,
        }
    }

    /// A tape for forward passes only; `backward` yields no gradients.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Graph {
            tracking: false,
            ..Graph::new(store)
        }
    }

    /// Enables dropout, seeded for reproducibility.
    pub fn with_dropout(mut self, seed: u64) -> Self {
        self.dropout_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(p) => self.store.get(*p).data(),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shape(v);
        Tensor::matrix(r, c, self.value(v).to_vec())
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        let needs_grad = self.tracking && inputs.iter().any(|&i| self.needs(i));
        self.nodes.push(Node {
            value: Value::Owned(data),
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf_node(&mut self, rows: usize, cols: usize, data: Vec<T>, needs_grad: bool) -> Var {
        assert_eq!(rows * cols, data.len(), "leaf data length");
        self.nodes.push(Node {
            value: Value::Owned(data),
            rows,
            cols,
            op: Op::Leaf,
            needs_grad: needs_grad && self.tracking,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.leaf_node(t.rows(), t.cols(), t.data().to_vec(), false)
    }

    pub fn input_rows(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        self.leaf_node(rows, cols, data, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf_node(rows, cols, vec![T::zero(); rows * cols], false)
    }

    /// An input whose gradient is reported by [`BackwardResult::var_grad`].
    pub fn variable(&mut self, t: &Tensor<T>) -> Var {
        self.leaf_node(t.rows(), t.cols(), t.data().to_vec(), true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.store.get(id);
        let needs_grad = self.tracking && self.store.is_trainable(id);
        self.nodes.push(Node {
            value: Value::Param(id),
            rows: t.rows(),
            cols: t.cols(),
            op: Op::Param(id),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {m}x{k} * {k2}x{n}");
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push(m, n, out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dims");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv[j * k..(j + 1) * k];
                out[i * n + j] = dot(ar, br);
            }
        }
        self.push(m, n, out, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = transpose(self.value(a), m, n);
        self.push(n, m, out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (m, n) = self.shape(a);
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(m, n, out, Op::Add(a, b), &[a, b])
    }

    /// Adds the row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (1, n), "add_row shapes");
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(bv) {
                *x += y;
            }
        }
        self.push(m, n, out, Op::AddRow(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let (m, n) = self.shape(a);
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(m, n, out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let (m, n) = self.shape(a);
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(m, n, out, Op::Mul(a, b), &[a, b])
    }

    /// Scales row `i` of `a` by `b[i, 0]`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, 1), "mul_col shapes");
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for (row, &s) in out.chunks_mut(n).zip(bv) {
            for x in row {
                *x *= s;
            }
        }
        self.push(m, n, out, Op::MulCol(a, b), &[a, b])
    }

    /// Divides row `i` of `a` by `b[i, 0]`.
    pub fn div_col(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, 1), "div_col shapes");
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for (row, &s) in out.chunks_mut(n).zip(bv) {
            for x in row {
                *x /= s;
            }
        }
        self.push(m, n, out, Op::DivCol(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push(m, n, out, Op::Scale(a, c), &[a])
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(mask.len(), m * n, "mul_const mask length");
        let out = zip_map(self.value(a), &mask, |x, y| x * y);
        self.push(m, n, out, Op::MulConst(a, mask), &[a])
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        let (m, n) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..m * n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.mul_const(a, mask)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(m, n, out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(m, n, out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        self.push(m, n, out, Op::Relu(a), &[a])
    }

    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| elu(x)).collect();
        self.push(m, n, out, Op::Elu(a), &[a])
    }

    /// Linear-attention feature map `elu(x) + 1`.
    pub fn elu_plus_one(&mut self, a: Var) -> Var {
        let e = self.elu(a);
        let (m, n) = self.shape(e);
        let ones = self.input_rows(m, n, vec![T::one(); m * n]);
        self.add(e, ones)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(m, n, out, Op::Softmax(a), &[a])
    }

    /// Row-wise softmax where row `i` only covers columns `0..=i`; the rest are zero.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for (i, row) in out.chunks_mut(n).enumerate() {
            let k = (i + 1).min(n);
            softmax_in_place(&mut row[..k]);
            for x in &mut row[k..] {
                *x = T::zero();
            }
        }
        self.push(m, n, out, Op::CausalSoftmax(a), &[a])
    }

    /// Zeroes entries above the main diagonal.
    pub fn tril(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for (i, row) in out.chunks_mut(n).enumerate() {
            for x in row.iter_mut().skip(i + 1) {
                *x = T::zero();
            }
        }
        self.push(m, n, out, Op::Tril(a), &[a])
    }

    /// Sum over columns: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).chunks(n).map(|r| r.iter().copied().sum()).collect();
        self.push(m, 1, out, Op::SumCols(a), &[a])
    }

    /// Sum over rows: `[m, n] -> [1, n]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, n) = self.shape(a);
        let mut out = vec![T::zero(); n];
        for row in self.value(a).chunks(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push(1, n, out, Op::SumRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(1, 1, vec![s], Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::of(1.0 / n as f64))
    }

    /// Row-wise layer normalisation with learned gain and bias, epsilon 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(gain), (1, n), "layer_norm gain");
        assert_eq!(self.shape(bias), (1, n), "layer_norm bias");
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let nf = T::of(n as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv[j] + bv[j];
            }
        }
        self.push(
            m,
            n,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = self.rows(parts[0]);
        let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut out = vec![T::zero(); m * total];
        let mut off = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            assert_eq!(pm, m, "concat_cols row mismatch");
            let pv = self.value(p);
            for i in 0..m {
                out[i * total + off..i * total + off + pn].copy_from_slice(&pv[i * pn..(i + 1) * pn]);
            }
            off += pn;
        }
        self.push(m, total, out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let n = self.cols(parts[0]);
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            assert_eq!(self.cols(p), n, "concat_rows col mismatch");
            out.extend_from_slice(self.value(p));
            m += self.rows(p);
        }
        self.push(m, n, out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice_cols out of range");
        let av = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push(m, len, out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= m, "slice_rows out of range");
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        self.push(len, n, out, Op::SliceRows(a, start), &[a])
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, n) = self.shape(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            assert!(id < v, "gather id {id} out of range {v}");
            out.extend_from_slice(&tv[id * n..(id + 1) * n]);
        }
        self.push(ids.len(), n, out, Op::Gather(table, ids.to_vec()), &[table])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Rows whose target is `None` are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.shape(logits);
        if targets.len() != m {
            return Err(Error::Shape(format!(
                "cross_entropy: {m} rows but {} targets",
                targets.len()
            )));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (i, row) in probs.chunks_mut(n).enumerate() {
            softmax_in_place(row);
            if let Some(t) = targets[i] {
                if t >= n {
                    return Err(Error::Data(format!("label index {t} out of range {n}")));
                }
                // log-softmax computed from logits for accuracy
                let lv = &self.value(logits)[i * n..(i + 1) * n];
                let mx = lv.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = mx + lv.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
                total += (lse - lv[t]).as_f64();
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.push(
            1,
            1,
            vec![T::of(loss)],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` (`[m, 1]`) against
    /// 0/1 targets; probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[Option<T>]) -> Result<Var> {
        let (m, n) = self.shape(p);
        if n != 1 || targets.len() != m {
            return Err(Error::Shape(format!(
                "bce: probabilities [{m}, {n}] vs {} targets",
                targets.len()
            )));
        }
        let pv = self.value(p);
        let mut total = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                total += bce_value(pv[i].as_f64(), t.as_f64());
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.push(
            1,
            1,
            vec![T::of(loss)],
            Op::Bce {
                p,
                targets: targets.to_vec(),
                count,
            },
            &[p],
        ))
    }

    /// Back-propagates from the scalar `loss`. A tape can be replayed once.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardResult<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (lr, lc) = self.shape(loss);
        if lr * lc != 1 {
            return Err(Error::NonScalarLoss(lr, lc));
        }
        self.consumed = true;

        let len = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(len);
        grads.resize_with(len, || None);
        let mut params = Gradients::with_len(self.store.len());
        let mut leaves: Vec<Option<Vec<T>>> = Vec::with_capacity(len);
        leaves.resize_with(len, || None);
        let shapes = self.nodes.iter().map(|n| (n.rows, n.cols)).collect();

        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads, &mut params, &mut leaves);
        }

        Ok(BackwardResult {
            params,
            leaves,
            shapes,
        })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        params: &mut Gradients<T>,
        leaves: &mut [Option<Vec<T>>],
    ) {
        let node = &self.nodes[i];
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {
                leaves[i] = Some(g);
            }
            Op::Param(id) => {
                params.accumulate(*id, self.store.get(*id).shape(), &g);
            }
            Op::MatMul(a, b) => {
                let k = self.cols(*a);
                if self.needs(*a) {
                    // dA = dC * B^T
                    let bv = self.value(*b);
                    let ga = grad_slot(grads, *a, m * k);
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            ga[r * k + p] += dot(gr, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.needs(*b) {
                    // dB = A^T * dC
                    let av = self.value(*a);
                    let gb = grad_slot(grads, *b, k * n);
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let s = av[r * k + p];
                            if s == T::zero() {
                                continue;
                            }
                            axpy(s, gr, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                // C = A B^T, A [m,k], B [n,k]
                let k = self.cols(*a);
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = grad_slot(grads, *a, m * k);
                    for r in 0..m {
                        for j in 0..n {
                            let s = g[r * n + j];
                            if s == T::zero() {
                                continue;
                            }
                            axpy(s, &bv[j * k..(j + 1) * k], &mut ga[r * k..(r + 1) * k]);
                        }
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = grad_slot(grads, *b, n * k);
                    for r in 0..m {
                        for j in 0..n {
                            let s = g[r * n + j];
                            if s == T::zero() {
                                continue;
                            }
                            axpy(s, &av[r * k..(r + 1) * k], &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let gt = transpose(&g, m, n);
                    add_into(grad_slot(grads, *a, m * n), &gt);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_into(grad_slot(grads, *a, m * n), &g);
                }
                if self.needs(*b) {
                    add_into(grad_slot(grads, *b, m * n), &g);
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(*a) {
                    add_into(grad_slot(grads, *a, m * n), &g);
                }
                if self.needs(*b) {
                    let gb = grad_slot(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(grad_slot(grads, *a, m * n), &g);
                }
                if self.needs(*b) {
                    let gb = grad_slot(grads, *b, m * n);
                    for (x, &y) in gb.iter_mut().zip(&g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = grad_slot(grads, *a, m * n);
                    for j in 0..m * n {
                        ga[j] += g[j] * bv[j];
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = grad_slot(grads, *b, m * n);
                    for j in 0..m * n {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            Op::MulCol(a, b) => {
                let bv = self.value(*b);
                if self.needs(*a) {
                    let ga = grad_slot(grads, *a, m * n);
                    for r in 0..m {
                        axpy(bv[r], &g[r * n..(r + 1) * n], &mut ga[r * n..(r + 1) * n]);
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = grad_slot(grads, *b, m);
                    for r in 0..m {
                        gb[r] += dot(&g[r * n..(r + 1) * n], &av[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::DivCol(a, b) => {
                let bv = self.value(*b);
                if self.needs(*a) {
                    let ga = grad_slot(grads, *a, m * n);
                    for r in 0..m {
                        let inv = T::one() / bv[r];
                        axpy(inv, &g[r * n..(r + 1) * n], &mut ga[r * n..(r + 1) * n]);
                    }
                }
                if self.needs(*b) {
                    // d(a/b)/db = -a/b^2 = -out/b
                    let out = self.value(Var(i));
                    let gb = grad_slot(grads, *b, m);
                    for r in 0..m {
                        gb[r] -= dot(&g[r * n..(r + 1) * n], &out[r * n..(r + 1) * n]) / bv[r];
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    axpy(*c, &g, grad_slot(grads, *a, m * n));
                }
            }
            Op::MulConst(a, mask) => {
                if self.needs(*a) {
                    let ga = grad_slot(grads, *a, m * n);
                    for j in 0..m * n {
                        ga[j] += g[j] * mask[j];
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let out = self.value(Var(i));
                    let ga = grad_slot(grads, *a, m * n);
                    for j in 0..m * n {
                        ga[j] += g[j] * (T::one() - out[j] * out[j]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let out = self.value(Var(i));
                    let ga = grad_slot(grads, *a, m * n);
                    for j in 0..m * n {
                        ga[j] += g[j] * out[j] * (T::one() - out[j]);
                    }
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let av = self.value(*a);
                    let ga = grad_slot(grads, *a, m * n);
                    for j in 0..m * n {
                        if av[j] > T::zero() {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            Op::Elu(a) => {
                if self.needs(*a) {
                    let av = self.value(*a);
                    let ga = grad_slot(grads, *a, m * n);
                    for j in 0..m * n {
                        let d = if av[j] > T::zero() { T::one() } else { av[j].exp() };
                        ga[j] += g[j] * d;
                    }
                }
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                if self.needs(*a) {
                    let out = self.value(Var(i));
                    let ga = grad_slot(grads, *a, m * n);
                    for r in 0..m {
                        let y = &out[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let s = dot(y, gr);
                        for j in 0..n {
                            ga[r * n + j] += y[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::Tril(a) => {
                if self.needs(*a) {
                    let ga = grad_slot(grads, *a, m * n);
                    for r in 0..m {
                        for j in 0..=r.min(n.saturating_sub(1)) {
                            ga[r * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::SumCols(a) => {
                if self.needs(*a) {
                    let an = self.cols(*a);
                    let ga = grad_slot(grads, *a, m * an);
                    for r in 0..m {
                        for x in &mut ga[r * an..(r + 1) * an] {
                            *x += g[r];
                        }
                    }
                }
            }
            Op::SumRows(a) => {
                if self.needs(*a) {
                    let am = self.rows(*a);
                    let ga = grad_slot(grads, *a, am * n);
                    for row in ga.chunks_mut(n) {
                        add_into(row, &g);
                    }
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let len = self.value(*a).len();
                    for x in grad_slot(grads, *a, len) {
                        *x += g[0];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain);
                if self.needs(*gain) {
                    let gg = grad_slot(grads, *gain, n);
                    for r in 0..m {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let gb = grad_slot(grads, *bias, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                if self.needs(*x) {
                    let nf = T::of(n as f64);
                    let gx = grad_slot(grads, *x, m * n);
                    let mut dxhat = vec![T::zero(); n];
                    for r in 0..m {
                        let xh = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxhat[j] = g[r * n + j] * gv[j];
                        }
                        let s1: T = dxhat.iter().copied().sum();
                        let s2 = dot(&dxhat, xh);
                        let c = rstd[r] / nf;
                        for j in 0..n {
                            gx[r * n + j] += c * (nf * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pn = self.cols(p);
                    if self.needs(p) {
                        let gp = grad_slot(grads, p, m * pn);
                        for r in 0..m {
                            add_into(&mut gp[r * pn..(r + 1) * pn], &g[r * n + off..r * n + off + pn]);
                        }
                    }
                    off += pn;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.rows(p) * n;
                    if self.needs(p) {
                        add_into(grad_slot(grads, p, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols(a, start) => {
                if self.needs(*a) {
                    let an = self.cols(*a);
                    let ga = grad_slot(grads, *a, m * an);
                    for r in 0..m {
                        add_into(&mut ga[r * an + start..r * an + start + n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if self.needs(*a) {
                    let len = self.value(*a).len();
                    let ga = grad_slot(grads, *a, len);
                    add_into(&mut ga[start * n..(start + m) * n], &g);
                }
            }
            Op::Gather(table, ids) => {
                if self.needs(*table) {
                    let len = self.value(*table).len();
                    let gt = grad_slot(grads, *table, len);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.needs(*logits) && *count > 0 {
                    let ln = self.cols(*logits);
                    let lm = self.rows(*logits);
                    let scale = g[0] / T::of(*count as f64);
                    let gl = grad_slot(grads, *logits, lm * ln);
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            for j in 0..ln {
                                let onehot = if j == *t { T::one() } else { T::zero() };
                                gl[r * ln + j] += scale * (probs[r * ln + j] - onehot);
                            }
                        }
                    }
                }
            }
            Op::Bce { p, targets, count } => {
                if self.needs(*p) && *count > 0 {
                    let pv = self.value(*p);
                    let scale = g[0] / T::of(*count as f64);
                    let gp = grad_slot(grads, *p, pv.len());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let s = pv[r].as_f64();
                            if s > BCE_EPS && s < 1.0 - BCE_EPS {
                                let t = t.as_f64();
                                let d = -t / s + (1.0 - t) / (1.0 - s);
                                gp[r] += scale * T::of(d);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn grad_slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `out += a * b` for row-major `a [m,k]`, `b [k,n]`.
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == T::zero() {
                continue;
            }
            axpy(s, &b[p * n..(p + 1) * n], orow);
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Binary cross-entropy of one probability, clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_value(score: f64, target: f64) -> f64 {
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
}
