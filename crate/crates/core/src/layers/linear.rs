use rand::Rng;

use super::add_xavier;
use crate::tensorkit::{Graph, ParamId, ParamStore, Real, Var};
use crate::Result;

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = add_xavier(store, format!("{name}.w"), &[in_dim, out_dim], rng)?;
        let b = if bias {
            Some(add_xavier(store, format!("{name}.b"), &[out_dim], rng)?)
        } else {
            None
        };
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Token embedding table `[vocab, dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = add_xavier(store, name.to_string(), &[vocab, dim], rng)?;
        Ok(Embedding { table, vocab, dim })
    }

    /// Reuses an existing table in `store`.
    pub fn attach<T: Real>(store: &ParamStore<T>, name: &str) -> Option<Self> {
        let table = store.lookup(name)?;
        let t = store.get(table);
        Some(Embedding {
            table,
            vocab: t.rows(),
            dim: t.cols(),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Var {
        let table = g.param(self.table);
        g.gather(table, ids)
    }

    pub fn row<'a, T: Real>(&self, store: &'a ParamStore<T>, id: usize) -> &'a [T] {
        store.get(self.table).row_slice(id)
    }
}
