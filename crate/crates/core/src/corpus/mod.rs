//! Corpora, vocabularies, label inventories and embedding tables.

mod conll;
mod embeddings;
pub mod synth;
mod vocab;

pub use conll::{load_conll, parse_conll, write_conll, MAX_SENTENCE_LEN};
pub use embeddings::load_embeddings;
pub use vocab::{apply_unk_training_mask, encode, LabelSet, Vocab, PAD, UNK};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Tokens with gold labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("sentence has no tokens".into()));
        }
        if tokens.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(Sentence { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// Sentences skipped at load time for exceeding [`MAX_SENTENCE_LEN`].
    pub dropped: usize,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus { sentences, dropped: 0 }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Label inventory observed in this corpus.
    pub fn label_set(&self) -> LabelSet {
        LabelSet::from_labels(self.sentences.iter().flat_map(|s| s.labels.iter().map(String::as_str)))
    }

    /// SHA-256 over the canonical CoNLL serialisation, lowercase hex.
    /// Depends only on sentence content and order, not on the source
    /// file's whitespace or document markers.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.sentences {
            for (t, l) in s.tokens.iter().zip(&s.labels) {
                h.update(t.as_bytes());
                h.update(b"\t");
                h.update(l.as_bytes());
                h.update(b"\n");
            }
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Splits off the last `frac` of sentences (at least one when the
    /// corpus has two or more) as a held-out set.
    pub fn split_tail(&self, frac: f64) -> (Corpus, Corpus) {
        let n = self.sentences.len();
        let mut k = (n as f64 * frac).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = 0;
        }
        let (a, b) = self.sentences.split_at(n - k);
        (Corpus::new(a.to_vec()), Corpus::new(b.to_vec()))
    }
}
