use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Counters, PrefixTimeline};
use crate::config::ModelConfig;
use crate::corpus::{LabelSet, Vocab};
use crate::layers::{Action, AttnMode, Encoder, EncoderConfig};
use crate::tensorkit::{Checkpoint, Hyperparams, ParamStore, Real, Tensor};
use crate::{Error, Result};

pub(crate) fn encoder_config(cfg: &ModelConfig, vocab: usize, labels: usize) -> EncoderConfig {
    EncoderConfig {
        kind: cfg.reviser_kind,
        layers: cfg.reviser_layers,
        d_model: cfg.d_model,
        heads: cfg.heads,
        ffn_dim: cfg.ffn_dim,
        vocab,
        embed_dim: cfg.embed_dim,
        labels,
    }
}

/// A full-sequence encoder labeller: the reviser, the restart-incremental
/// reference model, or the action generator. Parameters live under `embed`
/// and `enc.*`.
#[derive(Clone, Debug)]
pub struct Labeler<T: Real = f32> {
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
}

impl<T: Real> Labeler<T> {
    pub fn new(config: &ModelConfig, vocab: Vocab, labels: LabelSet, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "enc", encoder_config(config, vocab.len(), labels.len()), &mut rng)?;
        Ok(Labeler {
            store,
            encoder,
            config: config.clone(),
            vocab,
            labels,
        })
    }

    /// Replaces the embedding table (e.g. with pretrained vectors).
    pub fn set_embeddings(&mut self, table: Tensor<T>) -> Result<()> {
        self.store.assign("embed", table)
    }

    pub fn hparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new();
        self.config.to_hparams(&mut h);
        h.insert("model".into(), "labeler".into());
        h.insert("vocab".into(), self.vocab.to_header());
        h.insert("labels".into(), self.labels.to_header());
        h
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::from_store(&self.store, self.hparams())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        if ckpt.hparams.get("model").map(String::as_str) != Some("labeler") {
            return Err(Error::Checkpoint("not a labeller checkpoint".into()));
        }
        let config = ModelConfig::from_hparams(&ckpt.hparams)?;
        let vocab = Vocab::from_header(ckpt.hparams.get("vocab").map_or("", String::as_str));
        let labels = LabelSet::from_header(ckpt.hparams.get("labels").map_or("", String::as_str));
        let mut m = Self::new(&config, vocab, labels, 0)?;
        ckpt.load_into(&mut m.store, "")?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn logits(&self, ids: &[usize], mode: AttnMode) -> Result<Tensor<T>> {
        self.encoder.logits(&self.store, ids, mode)
    }

    pub fn predict(&self, ids: &[usize], mode: AttnMode) -> Result<Vec<usize>> {
        self.encoder.predict(&self.store, ids, mode)
    }

    /// Restart-incremental deployment: row `t` is the output of a fresh
    /// `mode` pass over `ids[..t]`.
    pub fn run_restart_incremental(&self, ids: &[usize], mode: AttnMode) -> Result<PrefixTimeline> {
        if ids.is_empty() {
            return Err(Error::Empty("sentence has no tokens".into()));
        }
        let mut tl = PrefixTimeline::default();
        let mut counters = Counters::default();
        for t in 1..=ids.len() {
            let row = self.predict(&ids[..t], mode)?;
            counters.reviser_calls += 1;
            counters.reviser_tokens += t;
            tl.push(row, Action::Revise, 1.0);
        }
        tl.counters = counters;
        Ok(tl)
    }
}
