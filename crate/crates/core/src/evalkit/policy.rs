use serde::Serialize;

use crate::engine::PrefixTimeline;
use crate::layers::Action;

/// Joint counts of actions and the state of the committed prefix the
/// action was taken on (correct when it is a prefix of the final output).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PolicyCounts {
    pub write_correct: usize,
    pub write_incorrect: usize,
    pub revise_correct: usize,
    pub revise_incorrect: usize,
}

/// Overall action shares and the eight conditional ratios of the
/// action/prefix cross table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PolicyDistribution {
    pub write: f64,
    pub revise: f64,
    pub rc_given_r: f64,
    pub ri_given_r: f64,
    pub wi_given_w: f64,
    pub wc_given_w: f64,
    pub rc_given_c: f64,
    pub wc_given_c: f64,
    pub wi_given_i: f64,
    pub ri_given_i: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

impl PolicyCounts {
    /// Step `t`'s action is paired with the prefix committed before it
    /// (row `t − 1`; empty at `t = 1`).
    pub fn add(&mut self, tl: &PrefixTimeline) {
        let Some(fin) = tl.rows.last() else { return };
        let empty = Vec::new();
        for (t, &a) in tl.actions.iter().enumerate() {
            let prev = if t == 0 { &empty } else { &tl.rows[t - 1] };
            let correct = fin.starts_with(prev);
            match (a, correct) {
                (Action::Write, true) => self.write_correct += 1,
                (Action::Write, false) => self.write_incorrect += 1,
                (Action::Revise, true) => self.revise_correct += 1,
                (Action::Revise, false) => self.revise_incorrect += 1,
            }
        }
    }

    pub fn distribution(&self) -> PolicyDistribution {
        let w = self.write_correct + self.write_incorrect;
        let r = self.revise_correct + self.revise_incorrect;
        let c = self.write_correct + self.revise_correct;
        let i = self.write_incorrect + self.revise_incorrect;
        PolicyDistribution {
            write: ratio(w, w + r),
            revise: ratio(r, w + r),
            rc_given_r: ratio(self.revise_correct, r),
            ri_given_r: ratio(self.revise_incorrect, r),
            wi_given_w: ratio(self.write_incorrect, w),
            wc_given_w: ratio(self.write_correct, w),
            rc_given_c: ratio(self.revise_correct, c),
            wc_given_c: ratio(self.write_correct, c),
            wi_given_i: ratio(self.write_incorrect, i),
            ri_given_i: ratio(self.revise_incorrect, i),
        }
    }
}

pub fn policy_distribution<'a>(timelines: impl IntoIterator<Item = &'a PrefixTimeline>) -> PolicyDistribution {
    let mut c = PolicyCounts::default();
    for tl in timelines {
        c.add(tl);
    }
    c.distribution()
}
