use std::time::Instant;

use serde::Serialize;

use crate::engine::Counters;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BenchResult {
    pub sents_per_sec: f64,
    pub seconds: f64,
    pub sentences: usize,
    /// Token forwards per pass over the corpus.
    pub token_forwards: usize,
    pub reviser_calls: usize,
}

/// Times `runner` over every sentence, `timed_iters` passes after
/// `warmup_iters` untimed ones. Sentences run one after another on the
/// calling thread.
pub fn throughput_bench<F>(mut runner: F, corpus: &[Vec<usize>], warmup_iters: usize, timed_iters: usize) -> Result<BenchResult>
where
    F: FnMut(&[usize]) -> Result<Counters>,
{
    if corpus.is_empty() || timed_iters == 0 {
        return Err(Error::Empty("nothing to benchmark".into()));
    }
    for _ in 0..warmup_iters {
        for s in corpus {
            runner(s)?;
        }
    }
    let mut counters = Counters::default();
    let start = Instant::now();
    for it in 0..timed_iters {
        for s in corpus {
            let c = runner(s)?;
            if it == 0 {
                counters.add(&c);
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64().max(1e-9);
    let sentences = corpus.len() * timed_iters;
    Ok(BenchResult {
        sents_per_sec: sentences as f64 / seconds,
        seconds,
        sentences,
        token_forwards: counters.token_forwards(),
        reviser_calls: counters.reviser_calls,
    })
}
