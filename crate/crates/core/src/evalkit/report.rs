use serde::Serialize;

use super::{
    correction_time, delayed_view, edit_overhead, is_iob, policy_distribution, relative_correctness,
    PolicyDistribution, SpanCounts,
};
use crate::corpus::LabelSet;
use crate::engine::PrefixTimeline;
use crate::{Error, Result};

/// Corpus-level evaluation. Incremental scores are per-sentence means;
/// `eo_dN`/`rc_dN` are computed on the timeline displayed `N` steps late.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub eo: f64,
    pub ct: f64,
    pub rc: f64,
    pub eo_d1: f64,
    pub rc_d1: f64,
    pub eo_d2: f64,
    pub rc_d2: f64,
    /// Span F1 of the final outputs; `None` for non-IOB label sets.
    pub f1: Option<f64>,
    pub accuracy: f64,
    /// Wall-clock throughput; `None` when timing was not recorded.
    pub sents_per_sec: Option<f64>,
    pub revise_ratio: f64,
    pub reviser_calls: usize,
    pub sentences: usize,
    pub policy: PolicyDistribution,
}

pub fn metrics_report(timelines: &[PrefixTimeline], gold: &[Vec<usize>], labels: &LabelSet) -> Result<MetricsReport> {
    if timelines.is_empty() || timelines.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} timelines for {} gold sequences",
            timelines.len(),
            gold.len()
        )));
    }
    let n = timelines.len() as f64;
    let mut sums = [0.0f64; 7];
    let mut spans = SpanCounts::default();
    let (mut hit, mut total) = (0usize, 0usize);
    let (mut revise, mut steps, mut calls) = (0usize, 0usize, 0usize);
    let iob = is_iob(labels.names());
    for (tl, g) in timelines.iter().zip(gold) {
        let rows = &tl.rows;
        let fin = rows.last().ok_or_else(|| Error::Empty("timeline has no rows".into()))?;
        if fin.len() != g.len() {
            return Err(Error::Data(format!("final output has {} labels, gold has {}", fin.len(), g.len())));
        }
        sums[0] += edit_overhead(rows)?;
        sums[1] += correction_time(rows)?;
        sums[2] += relative_correctness(rows)?;
        for (k, d) in [(3, 1), (5, 2)] {
            let v = delayed_view(rows, d);
            sums[k] += edit_overhead(&v)?;
            sums[k + 1] += relative_correctness(&v)?;
        }
        if iob {
            spans.add(&labels.decode(fin), &labels.decode(g))?;
        }
        hit += fin.iter().zip(g).filter(|(a, b)| a == b).count();
        total += g.len();
        revise += tl.revise_count();
        steps += tl.actions.len();
        calls += tl.counters.reviser_calls;
    }
    Ok(MetricsReport {
        eo: sums[0] / n,
        ct: sums[1] / n,
        rc: sums[2] / n,
        eo_d1: sums[3] / n,
        rc_d1: sums[4] / n,
        eo_d2: sums[5] / n,
        rc_d2: sums[6] / n,
        f1: iob.then(|| spans.f1()),
        accuracy: if total == 0 { 0.0 } else { hit as f64 / total as f64 },
        sents_per_sec: None,
        revise_ratio: if steps == 0 { 0.0 } else { revise as f64 / steps as f64 },
        reviser_calls: calls,
        sentences: timelines.len(),
        policy: policy_distribution(timelines),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Action;

    #[test]
    fn monotonic_report() {
        let labels = LabelSet::from_names(vec!["O".into(), "B-x".into(), "I-x".into()]);
        let mut tl = PrefixTimeline::default();
        tl.push(vec![1], Action::Write, 0.1);
        tl.push(vec![1, 2], Action::Write, 0.1);
        tl.push(vec![1, 2, 0], Action::Write, 0.1);
        let r = metrics_report(&[tl], &[vec![1, 2, 0]], &labels).unwrap();
        assert_eq!((r.eo, r.ct, r.rc), (0.0, 0.0, 1.0));
        assert_eq!((r.eo_d1, r.rc_d1, r.eo_d2, r.rc_d2), (0.0, 1.0, 0.0, 1.0));
        assert_eq!(r.f1, Some(1.0));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.revise_ratio, 0.0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["eo", "ct", "rc", "eo_d1", "rc_d1", "eo_d2", "rc_d2", "f1", "accuracy", "sents_per_sec", "revise_ratio", "policy"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn pos_labels_have_no_f1() {
        let labels = LabelSet::from_names(vec!["DT".into(), "NN".into()]);
        let mut tl = PrefixTimeline::default();
        tl.push(vec![0], Action::Write, 0.1);
        tl.push(vec![0, 0], Action::Write, 0.1);
        let r = metrics_report(&[tl], &[vec![0, 1]], &labels).unwrap();
        assert_eq!(r.f1, None);
        assert_eq!(r.accuracy, 0.5);
    }
}
