//! WRITE/REVISE supervision from a single-layer Linear Transformer.
//!
//! The generator is trained as a causal labeller, then redeployed without
//! its mask over every prefix of each training sentence. Wherever the
//! labels of earlier tokens change between consecutive prefixes, the
//! sentence gets a REVISE.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::corpus::{encode, Corpus};
use crate::engine::{Labeler, PrefixTimeline};
use crate::layers::{Action, AttentionKind, AttnMode};
use crate::trainer::{train_labeler, TrainReport};
use crate::{Error, Result};

/// Trains the action generator: the configured encoder with linear
/// attention, one layer, causal mask.
pub fn train_action_generator(
    corpus: &Corpus,
    cfg: &Config,
    on_epoch: &mut dyn FnMut(&crate::trainer::EpochLog),
) -> Result<(Labeler, TrainReport)> {
    if cfg.model.reviser_layers != 1 {
        return Err(Error::Config(format!(
            "the action generator must have exactly one layer, config asks for {}",
            cfg.model.reviser_layers
        )));
    }
    let mut cfg = cfg.clone();
    cfg.model.reviser_kind = AttentionKind::Linear;
    train_labeler(corpus, &cfg, AttnMode::Causal, on_epoch)
}

fn check_generator(lt: &Labeler) -> Result<()> {
    if lt.config.reviser_kind != AttentionKind::Linear || lt.config.reviser_layers != 1 {
        return Err(Error::Config("prefix timelines need a single-layer linear-attention model".into()));
    }
    Ok(())
}

/// Row `t` holds the unmasked model's labels for `ids[..t]`.
pub fn collect_prefix_timeline(lt: &Labeler, ids: &[usize]) -> Result<PrefixTimeline> {
    check_generator(lt)?;
    lt.run_restart_incremental(ids, AttnMode::Full)
}

/// `a_1 = W`; for `t > 1`, `a_t = R` iff one of the first `t − 1` labels of
/// row `t` differs from row `t − 1`.
pub fn derive_actions(rows: &[Vec<usize>]) -> Result<Vec<Action>> {
    for (t, r) in rows.iter().enumerate() {
        if r.len() != t + 1 {
            return Err(Error::Data(format!("timeline row {} has {} labels", t + 1, r.len())));
        }
    }
    Ok((0..rows.len())
        .map(|t| {
            if t > 0 && rows[t][..t] != rows[t - 1][..] {
                Action::Revise
            } else {
                Action::Write
            }
        })
        .collect())
}

/// Action sequences bound to the corpus they were derived from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionsFile {
    pub corpus_hash: String,
    pub sequences: Vec<Vec<Action>>,
}

const HASH_PREFIX: &str = "#corpus-sha256=";

impl ActionsFile {
    pub fn to_text(&self) -> String {
        let mut out = format!("{HASH_PREFIX}{}\n", self.corpus_hash);
        for seq in &self.sequences {
            let syms: Vec<String> = seq.iter().map(|a| a.symbol().to_string()).collect();
            let _ = writeln!(out, "{}", syms.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let corpus_hash = lines
            .next()
            .and_then(|l| l.strip_prefix(HASH_PREFIX))
            .ok_or_else(|| Error::Data(format!("actions file must start with {HASH_PREFIX}<hex>")))?
            .trim()
            .to_string();
        let mut sequences = Vec::new();
        for (i, line) in lines.enumerate() {
            let seq = line
                .split_whitespace()
                .map(|s| {
                    Action::from_symbol(s).ok_or_else(|| Error::Data(format!("line {}: bad action {s:?}", i + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            if seq.is_empty() {
                return Err(Error::Data(format!("line {}: empty action sequence", i + 2)));
            }
            sequences.push(seq);
        }
        Ok(ActionsFile { corpus_hash, sequences })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks the file was generated for `corpus` and matches its shape.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        let found = corpus.hash();
        if found != self.corpus_hash {
            return Err(Error::HashMismatch {
                expected: self.corpus_hash.clone(),
                found,
            });
        }
        if self.sequences.len() != corpus.len() {
            return Err(Error::Data(format!(
                "{} action sequences for {} sentences",
                self.sequences.len(),
                corpus.len()
            )));
        }
        for (i, (a, s)) in self.sequences.iter().zip(&corpus.sentences).enumerate() {
            if a.len() != s.len() {
                return Err(Error::Data(format!("sentence {}: {} actions for {} tokens", i + 1, a.len(), s.len())));
            }
        }
        Ok(())
    }

    /// Share of WRITE and REVISE symbols.
    pub fn distribution(&self) -> (f64, f64) {
        let total: usize = self.sequences.iter().map(Vec::len).sum();
        let r = self.sequences.iter().flatten().filter(|&&a| a == Action::Revise).count();
        if total == 0 {
            return (0.0, 0.0);
        }
        ((total - r) as f64 / total as f64, r as f64 / total as f64)
    }
}

/// Derives the actions file for `corpus` from a trained generator.
pub fn generate_actions(lt: &Labeler, corpus: &Corpus) -> Result<ActionsFile> {
    check_generator(lt)?;
    let mut sequences = Vec::with_capacity(corpus.len());
    for s in &corpus.sentences {
        let ids = encode(s, &lt.vocab);
        let tl = collect_prefix_timeline(lt, &ids)?;
        sequences.push(derive_actions(&tl.rows)?);
    }
    Ok(ActionsFile {
        corpus_hash: corpus.hash(),
        sequences,
    })
}
