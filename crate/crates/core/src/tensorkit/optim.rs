use super::{Gradients, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// AdamW hyperparameters. Betas follow the training recipe (0.9, 0.98);
/// weight decay and epsilon are configurable defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for every parameter of one store.
#[derive(Clone, Debug)]
pub struct OptimState<T: Real = f32> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        OptimState {
            config,
            step: 0,
            m: store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
            v: store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One AdamW update of every trainable parameter. Weight decay multiplies the
/// parameter directly and is not folded into the gradient; parameters without
/// a gradient see a zero gradient.
pub fn adamw_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, store has {}, gradients {}",
            state.m.len(),
            store.len(),
            grads.len()
        )));
    }
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != store.get(id).shape() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - c.beta1.powf(t);
    let bc2 = 1.0 - c.beta2.powf(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let decay = T::of(1.0 - c.lr * c.weight_decay);
    let lr = T::of(c.lr);
    let eps = T::of(c.eps);
    let (bc1, bc2) = (T::of(bc1), T::of(bc2));

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.is_trainable(id) {
            continue;
        }
        let i = id.index();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        let g = grads.get(id).map(|g| g.data());
        for j in 0..p.len() {
            let gj = g.map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] = p[j] * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// `None` disables clipping. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: Option<f64>) -> f64 {
    let norm = grads.global_norm();
    if let Some(max) = max_norm {
        if max > 0.0 && norm > max {
            grads.scale(T::of(max / norm));
        }
    }
    norm
}

/// Piecewise learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_points: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_epochs: 5,
            decay_points: vec![30, 40, 45],
            factor: 0.5,
        }
    }

    pub fn without_decay(base_lr: f64, warmup_epochs: usize) -> Self {
        LrSchedule {
            base_lr,
            warmup_epochs,
            decay_points: Vec::new(),
            factor: 1.0,
        }
    }

    /// Learning rate for 0-indexed `epoch`: `base * (e + 1) / warmup` during
    /// warmup, then `base * factor^k` where `k` counts decay points reached.
    pub fn lr(&self, epoch: usize) -> f64 {
        let mut lr = self.base_lr;
        if epoch < self.warmup_epochs {
            lr *= (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let passed = self.decay_points.iter().filter(|&&d| epoch >= d).count();
        lr * self.factor.powi(passed as i32)
    }
}

pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    LrSchedule::new(base_lr).lr(epoch)
}
