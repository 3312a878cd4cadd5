use std::path::Path;

use rand::Rng;

use super::Vocab;
use crate::tensorkit::{xavier_init, Real, Tensor};
use crate::{Error, Result};

/// Builds a `[vocab, dim]` table from a text file of `word v1 … vdim` lines.
/// Rows for vocabulary tokens absent from the file keep their Xavier
/// initialisation; words outside the vocabulary are ignored.
pub fn load_embeddings<T: Real, R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let mut table: Tensor<T> = xavier_init(&[vocab.len(), dim], rng)?;
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if values.len() != dim {
            return Err(err(format!("expected {dim} values, found {}", values.len())));
        }
        let Some(id) = vocab.get(word) else { continue };
        let row: Vec<T> = values
            .iter()
            .map(|v| v.parse::<f64>().map(T::of))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("bad number: {e}")))?;
        table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&row);
    }
    Ok(table)
}
