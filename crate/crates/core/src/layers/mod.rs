//! Neural building blocks. Every layer owns only [`ParamId`]s into a
//! [`ParamStore`]; forward passes are written once against [`Graph`] and
//! reused for training and inference.
//!
//! Weights are stored `[in, out]` and activations are row vectors.

mod attention;
mod linear;
mod lstm;
mod lstmn;
mod policy;
mod projection;

pub use attention::{
    positional_encoding, AttentionKind, AttnMode, Encoder, EncoderConfig, EncoderLayer,
    MultiHeadAttention, MAX_POSITIONS,
};
pub use linear::{Embedding, Linear};
pub use lstm::{LstmCell, LstmOutput, LstmStack, LstmState, LstmVars};
pub use lstmn::{ControllerOutput, ControllerState, LstmnController, LstmnLayer, LstmnStepOut};
pub use policy::{decide_action, Action, PolicyHead};
pub use projection::Projection;

#[allow(unused_imports)]
use crate::tensorkit::{Graph, ParamId, ParamStore};

use crate::tensorkit::{xavier_init, Real};
use crate::Result;
use rand::Rng;

pub(crate) fn add_xavier<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: String,
    shape: &[usize],
    rng: &mut R,
) -> Result<ParamId> {
    let t = xavier_init(shape, rng)?;
    Ok(store.add(name, t))
}
