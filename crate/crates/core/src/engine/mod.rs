//! The incremental inference loop, the restart-incremental runner and
//! prefix timelines.

mod infer;
mod labeler;
mod model;
mod timeline;

pub use infer::{InferenceState, StepOutcome};
pub use labeler::Labeler;
pub use model::{SentenceLoss, TapirModel};
pub use timeline::{finalize, Counters, PrefixTimeline};
