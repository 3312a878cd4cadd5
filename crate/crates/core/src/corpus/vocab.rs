use std::collections::HashMap;

use rand::Rng;

use super::{Corpus, Sentence};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ids: PAD = 0, UNK = 1, then training tokens by descending
/// frequency with ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build(corpus: &Corpus) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &corpus.sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(entries.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Rebuilds a vocabulary from its non-reserved tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for t in tokens {
            if t == PAD_TOKEN || t == UNK_TOKEN || v.index.contains_key(&t) {
                continue;
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Non-reserved tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// Space-separated form used in checkpoint headers.
    pub fn to_header(&self) -> String {
        self.entries().join(" ")
    }

    pub fn from_header(s: &str) -> Self {
        Self::from_tokens(s.split(' ').filter(|t| !t.is_empty()).map(String::from))
    }
}

/// Inference-time encoding; unknown tokens map to UNK.
pub fn encode(sentence: &Sentence, vocab: &Vocab) -> Vec<usize> {
    sentence.tokens.iter().map(|t| vocab.id(t)).collect()
}

/// Training-time UNK noise: each id is independently replaced by UNK with probability `p`.
pub fn apply_unk_training_mask<R: Rng + ?Sized>(ids: &[usize], p: f64, rng: &mut R) -> Vec<usize> {
    ids.iter()
        .map(|&id| if rng.gen::<f64>() < p { UNK } else { id })
        .collect()
}

/// Frozen label inventory: `O` first when present, the rest sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = labels.into_iter().map(String::from).collect();
        names.sort();
        names.dedup();
        if let Some(i) = names.iter().position(|n| n == "O") {
            let o = names.remove(i);
            names.insert(0, o);
        }
        Self::from_names(names)
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        LabelSet { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.id(l)
                    .ok_or_else(|| Error::LabelMismatch(format!("label {l:?} is not in the trained inventory")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.names[i].clone()).collect()
    }

    pub fn to_header(&self) -> String {
        self.names.join(" ")
    }

    pub fn from_header(s: &str) -> Self {
        Self::from_names(s.split(' ').filter(|t| !t.is_empty()).map(String::from).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Corpus {
        let s = |t: &str| {
            let tokens: Vec<String> = t.split(' ').map(String::from).collect();
            let labels = vec!["O".to_string(); tokens.len()];
            Sentence::new(tokens, labels).unwrap()
        };
        Corpus::new(vec![s("b a c a"), s("c d a")])
    }

    #[test]
    fn ids_by_frequency_then_lexicographic() {
        let v = Vocab::build(&corpus());
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("c"), 3);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("d"), 5);
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(Vocab::from_header(&v.to_header()), v);
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let v = Vocab::build(&corpus());
        let s = Sentence::new(
            vec!["a".into(), "zebra".into(), "d".into()],
            vec!["O".into(); 3],
        )
        .unwrap();
        let ids = encode(&s, &v);
        let oracle: Vec<usize> = s.tokens.iter().map(|t| v.get(t).unwrap_or(UNK)).collect();
        assert_eq!(ids, oracle);
        assert_eq!(ids, vec![2, UNK, 5]);
    }

    #[test]
    fn unk_mask_rates() {
        let ids: Vec<usize> = (0..100_000).map(|i| 2 + i % 7).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42119392);
        assert_eq!(apply_unk_training_mask(&ids, 0.0, &mut rng), ids);
        assert!(apply_unk_training_mask(&ids, 1.0, &mut rng).iter().all(|&i| i == UNK));
        let masked = apply_unk_training_mask(&ids, 0.02, &mut rng);
        let rate = masked.iter().filter(|&&i| i == UNK).count() as f64 / ids.len() as f64;
        assert!((0.015..=0.025).contains(&rate), "{rate}");
        let a = apply_unk_training_mask(&ids, 0.02, &mut ChaCha8Rng::seed_from_u64(3));
        let b = apply_unk_training_mask(&ids, 0.02, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn label_inventory() {
        let ls = LabelSet::from_labels(["I-x", "O", "B-x", "O"]);
        assert_eq!(ls.names(), &["O", "B-x", "I-x"]);
        assert_eq!(ls.encode(&["B-x".into(), "O".into()]).unwrap(), vec![1, 0]);
        assert!(matches!(ls.encode(&["B-y".into()]), Err(Error::LabelMismatch(_))));
        assert_eq!(LabelSet::from_header(&ls.to_header()), ls);
    }
}
