use std::fmt::Write as _;

use crate::corpus::LabelSet;
use crate::layers::Action;
use crate::{Error, Result};

/// Work done while producing a timeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Incremental-processor steps, including delay flush steps.
    pub lstm_steps: usize,
    pub reviser_calls: usize,
    /// Tokens fed to full-sequence encoder passes.
    pub reviser_tokens: usize,
}

impl Counters {
    /// Tokens pushed through any network.
    pub fn token_forwards(&self) -> usize {
        self.lstm_steps + self.reviser_tokens
    }

    pub fn add(&mut self, other: &Counters) {
        self.lstm_steps += other.lstm_steps;
        self.reviser_calls += other.reviser_calls;
        self.reviser_tokens += other.reviser_tokens;
    }
}

/// Committed output after every step of one sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrefixTimeline {
    /// `rows[t - 1]` is the label sequence committed after step `t`.
    pub rows: Vec<Vec<usize>>,
    pub actions: Vec<Action>,
    pub scores: Vec<f64>,
    pub delay: usize,
    pub counters: Counters,
}

impl PrefixTimeline {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<usize>, action: Action, score: f64) {
        self.rows.push(row);
        self.actions.push(action);
        self.scores.push(score);
    }

    /// Number of tokens the timeline labels.
    pub fn tokens(&self) -> usize {
        self.rows.len().saturating_sub(self.delay)
    }

    pub fn revise_count(&self) -> usize {
        self.actions.iter().filter(|&&a| a == Action::Revise).count()
    }

    /// One line per step: `t=<n> a=<W|R> p=<score>` followed by the
    /// tab-separated labels of that row.
    pub fn dump(&self, labels: &LabelSet) -> String {
        let mut out = String::new();
        for (t, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "t={} a={} p={:.6}", t + 1, self.actions[t], self.scores[t]);
            for &l in row {
                out.push('\t');
                out.push_str(labels.name(l));
            }
            out.push('\n');
        }
        out
    }
}

/// The sentence's final output: the last row, as committed.
pub fn finalize(timeline: &PrefixTimeline) -> Result<Vec<usize>> {
    timeline
        .rows
        .last()
        .cloned()
        .ok_or_else(|| Error::Empty("timeline has no rows".into()))
}
