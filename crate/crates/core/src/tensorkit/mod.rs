//! Dense tensors, reverse-mode differentiation, initialisation, optimisation
//! and checkpoint I/O.

mod checkpoint;
mod graph;
mod init;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, Hyperparams, FORMAT_VERSION, MAGIC};
pub use graph::{bce_value, elu, sigmoid, softmax_in_place, BackwardResult, Graph, Var};
pub use init::xavier_init;
pub use optim::{adamw_step, clip_global_norm, lr_schedule, AdamWConfig, LrSchedule, OptimState};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{DType, Real, Tensor};

pub(crate) use graph::dot;

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 42119392;

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Central finite-difference gradient check.
///
/// `f` builds a scalar loss from the store on a fresh graph. Every element of
/// every trainable parameter is perturbed by `±h`; the analytic gradient must
/// match within `rel_tol` relative error (absolute error below `abs_floor`
/// always passes). Returns the worst relative error seen.
pub fn check_param_gradients<F>(
    store: &mut ParamStore<f64>,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    f: F,
) -> std::result::Result<f64, String>
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        g.backward(loss).map_err(|e| e.to_string())?.params
    };
    let eval = |store: &ParamStore<f64>| {
        let mut g = Graph::inference(store);
        let loss = f(&mut g);
        g.scalar(loss)
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let grad = analytic.dense(id, store);
        for j in 0..store.get(id).numel() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[j] = orig - h;
            let down = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            let err = (a - numeric).abs();
            if err <= abs_floor {
                continue;
            }
            let rel = err / a.abs().max(numeric.abs());
            worst = worst.max(rel);
            if rel > rel_tol {
                return Err(format!(
                    "{}[{j}]: analytic {a:e} vs numeric {numeric:e} (rel {rel:e})",
                    store.name(id)
                ));
            }
        }
    }
    Ok(worst)
}
