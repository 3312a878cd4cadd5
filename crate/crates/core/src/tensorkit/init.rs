use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Xavier/Glorot uniform initialisation on `[-a, a]`,
/// `a = sqrt(6 / (fan_in + fan_out))`. For a rank-1 shape `[n]` both fans are `n`.
pub fn xavier_init<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("cannot initialise shape {shape:?}")));
    }
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, *n),
        [rows, cols] => (*rows, *cols),
        _ => {
            let receptive: usize = shape[2..].iter().product();
            (shape[1] * receptive, shape[0] * receptive)
        }
    }
}
