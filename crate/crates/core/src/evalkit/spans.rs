use std::collections::BTreeSet;

use crate::{Error, Result};

/// A labelled span `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

enum Tag<'a> {
    O,
    B(&'a str),
    I(&'a str),
}

fn parse(label: &str) -> Result<Tag<'_>> {
    if label == "O" {
        return Ok(Tag::O);
    }
    match label.split_once('-') {
        Some(("B", k)) if !k.is_empty() => Ok(Tag::B(k)),
        Some(("I", k)) if !k.is_empty() => Ok(Tag::I(k)),
        _ => Err(Error::Data(format!("label {label:?} is not in IOB format"))),
    }
}

pub fn is_iob<S: AsRef<str>>(labels: &[S]) -> bool {
    labels.iter().all(|l| parse(l.as_ref()).is_ok())
}

/// Spans under the conlleval reading: `I-X` after `O` or after a different
/// type opens a new span.
pub fn iob_spans<S: AsRef<str>>(labels: &[S]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, l) in labels.iter().enumerate() {
        let tag = parse(l.as_ref())?;
        let continues = match (&tag, &open) {
            (Tag::I(k), Some((ok, _))) => k == ok,
            _ => false,
        };
        if continues {
            continue;
        }
        if let Some((kind, start)) = open.take() {
            spans.push(Span { kind, start, end: i });
        }
        match tag {
            Tag::B(k) | Tag::I(k) => open = Some((k.to_string(), i)),
            Tag::O => {}
        }
    }
    if let Some((kind, start)) = open {
        spans.push(Span {
            kind,
            start,
            end: labels.len(),
        });
    }
    Ok(spans)
}

/// Span counts accumulated over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn add<S: AsRef<str>>(&mut self, pred: &[S], gold: &[S]) -> Result<()> {
        if pred.len() != gold.len() {
            return Err(Error::Data(format!(
                "{} predicted labels for {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        let p: BTreeSet<Span> = iob_spans(pred)?.into_iter().collect();
        let g: BTreeSet<Span> = iob_spans(gold)?.into_iter().collect();
        self.correct += p.intersection(&g).count();
        self.predicted += p.len();
        self.gold += g.len();
        Ok(())
    }

    pub fn precision(&self) -> f64 {
        if self.predicted == 0 { 0.0 } else { self.correct as f64 / self.predicted as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 { 0.0 } else { self.correct as f64 / self.gold as f64 }
    }

    /// `2PR / (P + R)`, or 0 when either is 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
    }
}

/// Span F1 of one labelled sequence.
pub fn span_f1_iob<S: AsRef<str>>(pred: &[S], gold: &[S]) -> Result<f64> {
    let mut c = SpanCounts::default();
    c.add(pred, gold)?;
    Ok(c.f1())
}

pub fn token_accuracy<A: PartialEq>(pred: &[A], gold: &[A]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Data(format!("{} predictions for {} gold labels", pred.len(), gold.len())));
    }
    if gold.is_empty() {
        return Err(Error::Empty("no labels to score".into()));
    }
    let ok = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(ok as f64 / gold.len() as f64)
}
