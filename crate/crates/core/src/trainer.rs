//! Reviser, reference and TAPIR training.
//!
//! Every trainer shuffles the training split each epoch, builds one graph
//! per sentence, averages gradients over a batch, clips and applies AdamW.
//! The last `val_frac` of the corpus is held out; training stops after
//! `patience` epochs without improvement and the best epoch's weights are
//! returned.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::corpus::{apply_unk_training_mask, encode, load_embeddings, Corpus, LabelSet, Vocab};
use crate::engine::{Labeler, TapirModel};
use crate::evalkit::{is_iob, SpanCounts};
use crate::layers::{Action, AttnMode};
use crate::signal::ActionsFile;
use crate::tensorkit::{
    adamw_step, argmax, clip_global_norm, AdamWConfig, Gradients, Graph, LrSchedule, OptimState, ParamStore, Var,
};
use crate::{Error, Result};

/// One line of training progress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub metric: f64,
    pub lr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} split={} loss={:.6} metric={:.6} lr={:.6e}",
            self.epoch, self.split, self.loss, self.metric, self.lr
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_metric: f64,
}

struct Sample {
    ids: Vec<usize>,
    gold: Vec<usize>,
    actions: Option<Vec<Action>>,
}

/// What the shared loop needs from a model.
trait Objective {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Scalar loss and the predicted labels for the sentence's tokens.
    fn loss(&self, g: &mut Graph<'_, f32>, ids: &[usize], s: &Sample, dropout: f64) -> Result<(Var, Vec<usize>)>;
}

struct EncoderObjective {
    model: Labeler,
    mode: AttnMode,
}

impl Objective for EncoderObjective {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn loss(&self, g: &mut Graph<'_, f32>, ids: &[usize], s: &Sample, dropout: f64) -> Result<(Var, Vec<usize>)> {
        let logits = self.model.encoder.forward(g, ids, self.mode, dropout)?;
        let targets: Vec<Option<usize>> = s.gold.iter().map(|&l| Some(l)).collect();
        let loss = g.cross_entropy(logits, &targets)?;
        let n = self.model.labels.len();
        let pred = g.value(logits).chunks(n).map(argmax).collect();
        Ok((loss, pred))
    }
}

struct TapirObjective {
    model: TapirModel,
}

impl Objective for TapirObjective {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn loss(&self, g: &mut Graph<'_, f32>, ids: &[usize], s: &Sample, dropout: f64) -> Result<(Var, Vec<usize>)> {
        let l = self.model.sentence_loss(g, ids, &s.gold, s.actions.as_deref(), dropout)?;
        let loss = match l.bce {
            Some(b) => g.add(l.ce, b),
            None => l.ce,
        };
        let n = self.model.labels.len();
        let d = self.model.delay;
        let pred = g.value(l.logits).chunks(n).skip(d).map(argmax).collect();
        Ok((loss, pred))
    }
}

enum Select {
    /// Highest validation metric, ties broken by lower loss.
    Metric,
    /// Lowest validation loss.
    Loss,
}

fn samples(corpus: &Corpus, vocab: &Vocab, labels: &LabelSet, actions: Option<&[Vec<Action>]>) -> Result<Vec<Sample>> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Sample {
                ids: encode(s, vocab),
                gold: labels.encode(&s.labels)?,
                actions: actions.map(|a| a[i].clone()),
            })
        })
        .collect()
}

struct Evaluation {
    loss: f64,
    metric: f64,
}

/// Span F1 for IOB label sets, token accuracy otherwise.
fn score(labels: &LabelSet, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if is_iob(labels.names()) {
        let mut c = SpanCounts::default();
        for (p, g) in pairs {
            c.add(&labels.decode(p), &labels.decode(g))?;
        }
        Ok(c.f1())
    } else {
        let total: usize = pairs.iter().map(|(_, g)| g.len()).sum();
        let hit: usize = pairs.iter().map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a == b).count()).sum();
        Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    }
}

fn evaluate<O: Objective>(obj: &O, data: &[Sample], labels: &LabelSet) -> Result<Evaluation> {
    let mut loss = 0.0;
    let mut pairs = Vec::with_capacity(data.len());
    for s in data {
        let mut g = Graph::inference(obj.store());
        let (l, pred) = obj.loss(&mut g, &s.ids, s, 0.0)?;
        loss += g.scalar(l) as f64;
        pairs.push((pred, s.gold.clone()));
    }
    Ok(Evaluation {
        loss: loss / data.len().max(1) as f64,
        metric: score(labels, &pairs)?,
    })
}

fn fit<O: Objective>(
    obj: &mut O,
    train: &[Sample],
    val: &[Sample],
    labels: &LabelSet,
    cfg: &Config,
    select: Select,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainReport> {
    let t = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x7261_696e);
    let schedule = LrSchedule {
        warmup_epochs: t.warmup,
        ..LrSchedule::new(t.lr)
    };
    let mut optim = OptimState::new(
        obj.store(),
        AdamWConfig {
            lr: t.lr,
            ..Default::default()
        },
    );
    let val = if val.is_empty() { train } else { val };
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        best_val_metric: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best_store = obj.store().clone();
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=t.epochs {
        let lr = schedule.lr(epoch - 1);
        optim.set_lr(lr);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut pairs = Vec::with_capacity(train.len());
        for (b, batch) in order.chunks(t.batch).enumerate() {
            let mut grads = Gradients::zeros_like(obj.store());
            for &i in batch {
                let s = &train[i];
                let ids = apply_unk_training_mask(&s.ids, t.unk_prob, &mut rng);
                let mut g = Graph::new(obj.store()).with_dropout(rng.next_u64());
                let (loss, pred) = obj.loss(&mut g, &ids, s, t.dropout)?;
                let lv = g.scalar(loss) as f64;
                if !lv.is_finite() {
                    return Err(Error::Numeric(format!("loss is {lv} at epoch {epoch}, batch {}", b + 1)));
                }
                epoch_loss += lv;
                pairs.push((pred, s.gold.clone()));
                grads.add(&g.backward(loss)?.params);
            }
            grads.scale(1.0 / batch.len() as f32);
            if !grads.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}, batch {}", b + 1)));
            }
            clip_global_norm(&mut grads, t.clip);
            adamw_step(obj.store_mut(), &grads, &mut optim)?;
        }
        if !obj.store().all_finite() {
            return Err(Error::Numeric(format!("parameters diverged at epoch {epoch}")));
        }
        let train_log = EpochLog {
            epoch,
            split: "train",
            loss: epoch_loss / train.len().max(1) as f64,
            metric: score(labels, &pairs)?,
            lr,
        };
        on_epoch(&train_log);
        report.history.push(train_log);

        let ev = evaluate(obj, val, labels)?;
        let val_log = EpochLog {
            epoch,
            split: "val",
            loss: ev.loss,
            metric: ev.metric,
            lr,
        };
        on_epoch(&val_log);
        report.history.push(val_log);

        let better = match select {
            Select::Metric => {
                ev.metric > report.best_val_metric
                    || (ev.metric == report.best_val_metric && ev.loss < report.best_val_loss)
            }
            Select::Loss => ev.loss < report.best_val_loss,
        };
        if better {
            report.best_epoch = epoch;
            report.best_val_loss = ev.loss;
            report.best_val_metric = ev.metric;
            best_store = obj.store().clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= t.patience {
                break;
            }
        }
    }
    *obj.store_mut() = best_store;
    Ok(report)
}

/// Trains a full-sequence labeller on `corpus` with attention `mode`.
/// The vocabulary and label inventory come from the whole corpus.
pub fn train_labeler(
    corpus: &Corpus,
    cfg: &Config,
    mode: AttnMode,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Labeler, TrainReport)> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus has no sentences".into()));
    }
    let vocab = Vocab::build(corpus);
    let labels = corpus.label_set();
    let mut model = Labeler::new(&cfg.model, vocab, labels, cfg.train.seed)?;
    if let Some(path) = &cfg.paths.embeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let table = load_embeddings(path, &model.vocab, cfg.model.embed_dim, &mut rng)?;
        model.set_embeddings(table)?;
    }
    let (train, val) = corpus.split_tail(cfg.train.val_frac);
    let train = samples(&train, &model.vocab, &model.labels, None)?;
    let val = samples(&val, &model.vocab, &model.labels, None)?;
    let labels = model.labels.clone();
    let mut obj = EncoderObjective { model, mode };
    let report = fit(&mut obj, &train, &val, &labels, cfg, Select::Metric, on_epoch)?;
    Ok((obj.model, report))
}

/// First training step: the reviser, unmasked.
pub fn train_reviser(corpus: &Corpus, cfg: &Config, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<(Labeler, TrainReport)> {
    train_labeler(corpus, cfg, AttnMode::Full, on_epoch)
}

/// The restart-incremental reference: same architecture and recipe as the reviser.
pub fn train_reference(corpus: &Corpus, cfg: &Config, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<(Labeler, TrainReport)> {
    train_labeler(corpus, cfg, AttnMode::Full, on_epoch)
}

/// Second training step: processor, projections, controller and policy
/// against gold labels and the derived actions. The reviser's weights and
/// the shared embedding table stay fixed.
pub fn train_tapir(
    corpus: &Corpus,
    actions: &ActionsFile,
    reviser: &Labeler,
    cfg: &Config,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(TapirModel, TrainReport)> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    actions.check(corpus)?;
    let mut model = TapirModel::from_reviser(&cfg.model, reviser, cfg.train.delay, cfg.train.seed)?;
    model.store.freeze_prefix("embed");
    model.store.freeze_prefix("enc.");
    let all = samples(corpus, &model.vocab, &model.labels, Some(&actions.sequences))?;
    let n_val = corpus.split_tail(cfg.train.val_frac).1.len();
    let (train, val) = all.split_at(all.len() - n_val);
    let labels = model.labels.clone();
    let mut obj = TapirObjective { model };
    let report = fit(&mut obj, train, val, &labels, cfg, Select::Loss, on_epoch)?;
    let mut model = obj.model;
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.set_trainable(id, true);
    }
    Ok((model, report))
}
