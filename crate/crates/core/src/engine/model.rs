use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labeler::encoder_config;
use super::Labeler;
use crate::config::ModelConfig;
use crate::corpus::{LabelSet, Vocab, PAD};
use crate::layers::{Action, Embedding, Encoder, LstmStack, LstmnController, PolicyHead, Projection};
use crate::tensorkit::{Checkpoint, Graph, Hyperparams, ParamStore, Real, Var};
use crate::{Error, Result};

/// Incremental processor, projections, controller, policy and reviser
/// over one shared embedding table.
///
/// Parameter prefixes: `embed`, `lstm.`, `proj.`, `ctrl.`, `policy.`, `enc.`.
#[derive(Clone, Debug)]
pub struct TapirModel<T: Real = f32> {
    pub store: ParamStore<T>,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    /// Output delay the processor was trained for.
    pub delay: usize,
    pub embed: Embedding,
    pub lstm: LstmStack,
    pub proj: Projection,
    pub ctrl: LstmnController,
    pub policy: PolicyHead,
    pub reviser: Encoder,
}

/// Per-sentence training losses.
pub struct SentenceLoss {
    pub ce: Var,
    pub bce: Option<Var>,
    /// Per-step policy scores `[T + d, 1]`.
    pub scores: Var,
    /// Per-step label logits `[T + d, labels]`.
    pub logits: Var,
}

impl<T: Real> TapirModel<T> {
    pub fn new(config: &ModelConfig, vocab: Vocab, labels: LabelSet, delay: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if delay > 2 {
            return Err(Error::Config(format!("delay must be 0, 1 or 2, got {delay}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (v, l, e) = (vocab.len(), labels.len(), config.embed_dim);
        let embed = Embedding::new(&mut store, "embed", v, e, &mut rng)?;
        let lstm = LstmStack::new(&mut store, "lstm", e, config.lstm_hidden, config.lstm_layers, l, &mut rng)?;
        let proj = Projection::new(&mut store, "proj", l, config.lstm_hidden, config.ctrl_hidden, &mut rng)?;
        let ctrl = LstmnController::new(
            &mut store,
            "ctrl",
            config.ctrl_hidden,
            config.lstm_hidden,
            e,
            config.ctrl_hidden,
            config.ctrl_layers,
            &mut rng,
        )?;
        let policy = PolicyHead::new(&mut store, "policy", config.ctrl_hidden, &mut rng)?;
        let reviser = Encoder::new(&mut store, "enc", encoder_config(config, v, l), &mut rng)?;
        Ok(TapirModel {
            store,
            config: config.clone(),
            vocab,
            labels,
            delay,
            embed,
            lstm,
            proj,
            ctrl,
            policy,
            reviser,
        })
    }

    /// Fresh processor and controller around a trained reviser, whose
    /// embedding table becomes the shared one. `config` must agree with the
    /// reviser on every encoder dimension.
    pub fn from_reviser(config: &ModelConfig, reviser: &Labeler<T>, delay: usize, seed: u64) -> Result<Self> {
        let rc = &reviser.config;
        if (rc.reviser_kind, rc.reviser_layers, rc.d_model, rc.ffn_dim, rc.heads, rc.embed_dim)
            != (config.reviser_kind, config.reviser_layers, config.d_model, config.ffn_dim, config.heads, config.embed_dim)
        {
            return Err(Error::Config("model configuration disagrees with the reviser checkpoint".into()));
        }
        let mut m = Self::new(config, reviser.vocab.clone(), reviser.labels.clone(), delay, seed)?;
        m.store.import(&reviser.store, "")?;
        Ok(m)
    }

    /// The reviser as a standalone labeller.
    pub fn reviser_labeler(&self) -> Result<Labeler<T>> {
        let mut l = Labeler::new(&self.config, self.vocab.clone(), self.labels.clone(), 0)?;
        let names: Vec<String> = l.store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names {
            let id = self.store.lookup(&name).ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            l.store.assign(&name, self.store.get(id).clone())?;
        }
        Ok(l)
    }

    pub fn hparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new();
        self.config.to_hparams(&mut h);
        h.insert("model".into(), "tapir".into());
        h.insert("delay".into(), self.delay.to_string());
        h.insert("vocab".into(), self.vocab.to_header());
        h.insert("labels".into(), self.labels.to_header());
        h
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::from_store(&self.store, self.hparams())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        if ckpt.hparams.get("model").map(String::as_str) != Some("tapir") {
            return Err(Error::Checkpoint("not a TAPIR checkpoint".into()));
        }
        let config = ModelConfig::from_hparams(&ckpt.hparams)?;
        let delay = ckpt
            .hparams
            .get("delay")
            .map_or(Ok(0), |d| d.parse())
            .map_err(|_| Error::Checkpoint("bad delay".into()))?;
        let vocab = Vocab::from_header(ckpt.hparams.get("vocab").map_or("", String::as_str));
        let labels = LabelSet::from_header(ckpt.hparams.get("labels").map_or("", String::as_str));
        let mut m = Self::new(&config, vocab, labels, delay, 0)?;
        ckpt.load_into(&mut m.store, "")?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Training forward over one sentence along the processor path: every
    /// step is treated as a WRITE, so the cache holds the processor's own
    /// outputs. `ids` are the (possibly UNK-noised) tokens and `gold` their
    /// label ids; `self.delay` padding steps are appended and label targets
    /// shifted by the delay. `actions`, aligned with the real tokens,
    /// supervise the policy.
    pub fn sentence_loss(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[usize],
        gold: &[usize],
        actions: Option<&[Action]>,
        dropout: f64,
    ) -> Result<SentenceLoss> {
        let n = ids.len();
        if n == 0 || gold.len() != n || actions.is_some_and(|a| a.len() != n) {
            return Err(Error::Data("tokens, labels and actions must have equal, non-zero length".into()));
        }
        let d = self.delay;
        let steps = n + d;
        let mut input = ids.to_vec();
        input.resize(steps, PAD);
        let xs = self.embed.forward(g, &input);
        let (hs, logits) = self.lstm.forward_sequence(g, xs, dropout);

        let z = self.proj.project_z(g, logits);
        let h_all = g.concat_rows(&hs);
        let phi = self.proj.fuse_phi(g, h_all, z);

        let cap = self.config.memory_size;
        let layers = self.ctrl.layers.len();
        let mut k_tilde: Vec<Var> = (0..layers).map(|_| g.zeros(1, self.ctrl.phi_dim)).collect();
        let mut cells: Vec<Vec<Var>> = vec![Vec::with_capacity(steps); layers];
        let mut tops = Vec::with_capacity(steps);
        for t in 0..steps {
            let lo = t.saturating_sub(cap);
            let (cache, tapes) = if t == 0 {
                (None, vec![None; layers])
            } else {
                let cache = g.slice_rows(phi, lo, t - lo);
                let tapes = cells.iter().map(|c| Some(g.concat_rows(&c[lo..t]))).collect();
                (Some(cache), tapes)
            };
            let x = g.slice_rows(xs, t, 1);
            let outs = self.ctrl.step_vars(g, cache, &tapes, hs[t], x, &k_tilde);
            for (l, o) in outs.iter().enumerate() {
                k_tilde[l] = o.k_tilde;
                cells[l].push(o.c);
            }
            tops.push(outs[layers - 1].k);
        }
        let k = g.concat_rows(&tops);
        let scores = self.policy.score_vars(g, k);

        let targets: Vec<Option<usize>> = (0..steps).map(|t| (t >= d).then(|| gold[t - d])).collect();
        let ce = g.cross_entropy(logits, &targets)?;
        let bce = match actions {
            Some(a) => {
                let targets: Vec<Option<T>> = (0..steps).map(|t| a.get(t).map(|a| T::of(a.target()))).collect();
                Some(g.bce(scores, &targets)?)
            }
            None => None,
        };
        Ok(SentenceLoss { ce, bce, scores, logits })
    }
}
