use std::collections::VecDeque;

use super::{Counters, PrefixTimeline, TapirModel};
use crate::corpus::PAD;
use crate::layers::{decide_action, Action, AttnMode, ControllerState, LstmState};
use crate::memory::CacheSet;
use crate::tensorkit::{argmax, Real};
use crate::{Error, Result};

/// Per-sentence state of the incremental loop.
#[derive(Clone, Debug)]
pub struct InferenceState<T: Real = f32> {
    /// Real input tokens seen so far.
    pub x_buf: Vec<usize>,
    /// Committed labels.
    pub y_buf: Vec<usize>,
    pub caches: CacheSet<T>,
    pub t: usize,
    pub tau: f64,
    pub delay: usize,
    pub counters: Counters,
    lstm: LstmState<T>,
    ctrl: ControllerState<T>,
    /// Processor logits of the last `N` steps, for cache slots whose token
    /// has no delayed reviser output yet.
    lstm_logits: VecDeque<(usize, Vec<T>)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub action: Action,
    pub score: f64,
}

impl<T: Real> TapirModel<T> {
    pub fn start(&self, tau: f64, delay: usize) -> Result<InferenceState<T>> {
        let n = self.config.memory_size;
        Ok(InferenceState {
            x_buf: Vec::new(),
            y_buf: Vec::new(),
            caches: CacheSet::new(n)?,
            t: 0,
            tau,
            delay,
            counters: Counters::default(),
            lstm: self.lstm.zero_state(),
            ctrl: self.ctrl.init_state(n),
            lstm_logits: VecDeque::with_capacity(n),
        })
    }

    /// One step. `token` is the next input, or `None` for a padding step
    /// after the sentence ends.
    pub fn step(&self, s: &mut InferenceState<T>, token: Option<usize>) -> Result<StepOutcome> {
        let t = s.t + 1;
        let d = s.delay;
        let x = self.embed.row(&self.store, token.unwrap_or(PAD)).to_vec();

        let out = self.lstm.step(&self.store, &mut s.lstm, &x)?;
        s.counters.lstm_steps += 1;
        let k = self.ctrl.step(&self.store, &mut s.ctrl, &s.caches.phi_slots(), &out.h, &x, t)?.k;
        let score = self.policy.score(&self.store, &k);
        let action = decide_action(score, s.tau);
        if let Some(tok) = token {
            s.x_buf.push(tok);
        }

        s.caches.push_h(t, out.h.clone());
        let n = s.caches.capacity();
        if s.lstm_logits.len() == n {
            s.lstm_logits.pop_front();
        }
        s.lstm_logits.push_back((t, out.logits.clone()));

        match action {
            Action::Write => {
                if t > d {
                    s.y_buf.push(out.label);
                }
                let (z, phi) = self.proj.project(&self.store, &out.h, &out.logits)?;
                s.caches.push_zp(t, z, phi);
            }
            Action::Revise => {
                let logits = self.reviser.logits(&self.store, &s.x_buf, AttnMode::Full)?;
                s.counters.reviser_calls += 1;
                s.counters.reviser_tokens += s.x_buf.len();
                if logits.rows() != s.x_buf.len() {
                    return Err(Error::ReviserLength {
                        expected: s.x_buf.len(),
                        got: logits.rows(),
                    });
                }
                let rows: Vec<Vec<T>> = (0..logits.rows()).map(|r| logits.row_slice(r).to_vec()).collect();
                s.y_buf = rows.iter().take(t.saturating_sub(d)).map(|r| argmax(r)).collect();
                if d == 0 {
                    s.caches.rebuild_after_revise(&rows, &self.proj, &self.store)?;
                } else {
                    let ring = &s.lstm_logits;
                    s.caches.rebuild_with(&self.proj, &self.store, |j| {
                        if j > d {
                            Ok(rows[j - d - 1].clone())
                        } else {
                            ring.iter()
                                .find(|(tt, _)| *tt == j)
                                .map(|(_, l)| l.clone())
                                .ok_or_else(|| Error::Data(format!("no processor logits for step {j}")))
                        }
                    })?;
                }
            }
        }
        s.t = t;
        debug_assert!(s.caches.is_aligned());
        Ok(StepOutcome { action, score })
    }

    /// Runs a whole sentence with threshold `tau` and output delay `delay`,
    /// recording the committed output after every step. With a delay, `d`
    /// padding steps follow the last token so every token is labelled.
    pub fn run_sentence(&self, ids: &[usize], tau: f64, delay: usize) -> Result<PrefixTimeline> {
        if ids.is_empty() {
            return Err(Error::Empty("sentence has no tokens".into()));
        }
        let mut s = self.start(tau, delay)?;
        let mut tl = PrefixTimeline {
            delay,
            ..Default::default()
        };
        for t in 0..ids.len() + delay {
            let o = self.step(&mut s, ids.get(t).copied())?;
            tl.push(s.y_buf.clone(), o.action, o.score);
        }
        tl.counters = s.counters;
        Ok(tl)
    }

    /// Labels from the processor alone, run over the whole sentence.
    pub fn lstm_predict(&self, ids: &[usize]) -> Vec<usize> {
        let mut data = Vec::with_capacity(ids.len() * self.embed.dim);
        for &id in ids {
            data.extend_from_slice(self.embed.row(&self.store, id));
        }
        let xs = crate::tensorkit::Tensor::matrix(ids.len(), self.embed.dim, data);
        let logits = self.lstm.logits(&self.store, &xs);
        (0..logits.rows()).map(|r| argmax(logits.row_slice(r))).collect()
    }
}
