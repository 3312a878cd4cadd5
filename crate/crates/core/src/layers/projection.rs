use rand::Rng;

use super::add_xavier;
use crate::tensorkit::{Graph, ParamId, ParamStore, Real, Var};
use crate::{Error, Result};

/// Cache projections: `z = tanh(ỹ W_ỹ + b_z)` and `φ = tanh(h W_in + z W_out + b_φ)`.
/// `z` has the width of `h`.
#[derive(Clone, Debug)]
pub struct Projection {
    pub w_y: ParamId,
    pub b_z: ParamId,
    pub w_in: ParamId,
    pub w_out: ParamId,
    pub b_phi: ParamId,
    pub labels: usize,
    pub hidden: usize,
    pub phi_dim: usize,
}

impl Projection {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        labels: usize,
        hidden: usize,
        phi_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Projection {
            w_y: add_xavier(store, format!("{name}.w_y"), &[labels, hidden], rng)?,
            b_z: add_xavier(store, format!("{name}.b_z"), &[hidden], rng)?,
            w_in: add_xavier(store, format!("{name}.w_in"), &[hidden, phi_dim], rng)?,
            w_out: add_xavier(store, format!("{name}.w_out"), &[hidden, phi_dim], rng)?,
            b_phi: add_xavier(store, format!("{name}.b_phi"), &[phi_dim], rng)?,
            labels,
            hidden,
            phi_dim,
        })
    }

    /// Row-wise `z` for logits `[n, labels]`.
    pub fn project_z<T: Real>(&self, g: &mut Graph<'_, T>, logits: Var) -> Var {
        let w = g.param(self.w_y);
        let z = g.matmul(logits, w);
        let b = g.param(self.b_z);
        let z = g.add_row(z, b);
        g.tanh(z)
    }

    /// Row-wise `φ` for hidden states `[n, hidden]` and `z` `[n, hidden]`.
    pub fn fuse_phi<T: Real>(&self, g: &mut Graph<'_, T>, h: Var, z: Var) -> Var {
        let wi = g.param(self.w_in);
        let a = g.matmul(h, wi);
        let wo = g.param(self.w_out);
        let b = g.matmul(z, wo);
        let s = g.add(a, b);
        let bias = g.param(self.b_phi);
        let s = g.add_row(s, bias);
        g.tanh(s)
    }

    /// `(z, φ)` for a single step.
    pub fn project<T: Real>(&self, store: &ParamStore<T>, h: &[T], logits: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if h.len() != self.hidden || logits.len() != self.labels {
            return Err(Error::Shape(format!(
                "projection expects h {} and logits {}, got {} and {}",
                self.hidden,
                self.labels,
                h.len(),
                logits.len()
            )));
        }
        let mut g = Graph::inference(store);
        let lv = g.input_rows(1, logits.len(), logits.to_vec());
        let hv = g.input_rows(1, h.len(), h.to_vec());
        let z = self.project_z(&mut g, lv);
        let phi = self.fuse_phi(&mut g, hv, z);
        Ok((g.value(z).to_vec(), g.value(phi).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::{check_param_gradients, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamStore<f64>, Projection, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = Projection::new(&mut store, "proj", 5, 4, 3, &mut rng).unwrap();
        (store, p, rng)
    }

    #[test]
    fn zero_parameters_give_zero() {
        let (mut store, p, _) = setup(1);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let (z, phi) = p.project(&store, &[1.0, -2.0, 3.0, 0.5], &[4.0, 1.0, 0.0, -7.0, 2.0]).unwrap();
        assert!(z.iter().chain(&phi).all(|&v| v == 0.0));
    }

    #[test]
    fn bounded_and_matches_formula() {
        let (store, p, mut rng) = setup(2);
        for _ in 0..20 {
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (z, phi) = p.project(&store, &h, &y).unwrap();
            assert!(z.iter().chain(&phi).all(|v| v.abs() < 1.0));
            let big: Vec<f64> = y.iter().map(|v| v * 1e4).collect();
            let (zb, pb) = p.project(&store, &h, &big).unwrap();
            assert!(zb.iter().chain(&pb).all(|v| v.abs() <= 1.0));
            let t = |id| store.get(id).clone();
            let (wy, bz, wi, wo, bp) = (t(p.w_y), t(p.b_z), t(p.w_in), t(p.w_out), t(p.b_phi));
            for j in 0..4 {
                let s: f64 = (0..5).map(|k| y[k] * wy.data()[k * 4 + j]).sum::<f64>() + bz.data()[j];
                assert!((s.tanh() - z[j]).abs() <= 1e-6);
            }
            for j in 0..3 {
                let s: f64 = (0..4).map(|k| h[k] * wi.data()[k * 3 + j] + z[k] * wo.data()[k * 3 + j]).sum::<f64>()
                    + bp.data()[j];
                assert!((s.tanh() - phi[j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn width_is_checked() {
        let (store, p, _) = setup(3);
        assert!(p.project(&store, &[1.0; 3], &[0.0; 5]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for case in 0..10u64 {
            let (mut store, p, mut rng) = setup(400 + case);
            let n = 1 + case as usize % 3;
            let h = Tensor::matrix(n, 4, (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let y = Tensor::matrix(n, 5, (0..n * 5).map(|_| rng.gen_range(-2.0..2.0)).collect());
            check_param_gradients(&mut store, 1e-5, 1e-3, 1e-9, |g| {
                let yv = g.input(&y);
                let hv = g.input(&h);
                let z = p.project_z(g, yv);
                let phi = p.fuse_phi(g, hv, z);
                let a = g.sum(phi);
                let b = g.mean(z);
                g.add(a, b)
            })
            .unwrap();
        }
    }
}
