//! Synthetic slot-filling corpus.
//!
//! Requests in two domains, travel (`city` slots) and social (`person`
//! slots), with optional `date` slots. A set of names is shared by both
//! domains, so in templates where the name precedes the verb its label can
//! only be settled once the verb has been read.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Sentence};

const CITIES: &[&str] = &[
    "london", "berlin", "tokyo", "madrid", "rome", "oslo", "cairo", "lima", "dublin", "vienna", "new york",
    "san diego", "los angeles", "hong kong",
];
const PERSONS: &[&str] = &["alice", "bob", "maria", "john", "emma", "liam", "noah", "olivia"];
const SURNAMES: &[&str] = &["smith", "jones", "brown"];
const AMBIGUOUS: &[&str] = &["paris", "jordan", "austin", "georgia", "victoria", "florence", "sydney", "lincoln"];
const DATES: &[&str] = &[
    "today", "tomorrow", "monday", "friday", "tonight", "next week", "this weekend", "next friday",
];

// `X` is the domain's entity slot.
const TRAVEL_PLAIN: &[&str] = &[
    "i want to fly to X",
    "book a hotel in X",
    "what is the weather in X",
    "show me flights to X",
    "plan a trip to X",
    "find a cheap hotel near X",
];
const TRAVEL_LATE: &[&str] = &[
    "X is where i want to fly",
    "X is where i want to book a hotel",
    "is X nice to visit",
    "X and X trip",
    "X weather",
    "X hotel deals",
];
const SOCIAL_PLAIN: &[&str] = &[
    "please call X",
    "send a text to X",
    "i want to meet X",
    "email X about the plan",
    "ask X to join",
    "set up a call with X",
];
const SOCIAL_LATE: &[&str] = &[
    "X is who i want to call",
    "is X free to meet",
    "X and X meet",
    "X needs an email",
    "X should get a message",
    "X call back",
];

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Clauses are appended until the sentence has at least this many tokens.
    pub min_len: usize,
    /// Chance of filling an entity slot with a cross-domain name when the
    /// name precedes the verb.
    pub ambiguous_late: f64,
    pub ambiguous_plain: f64,
    pub date_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 1000,
            seed: crate::tensorkit::DEFAULT_SEED,
            min_len: 0,
            ambiguous_late: 0.7,
            ambiguous_plain: 0.3,
            date_prob: 0.6,
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sentences = (0..cfg.sentences).map(|_| sentence(cfg, &mut rng)).collect();
    Corpus::new(sentences)
}

struct Builder {
    tokens: Vec<String>,
    labels: Vec<String>,
}

impl Builder {
    fn words(&mut self, text: &str, kind: Option<&str>) {
        for (i, w) in text.split(' ').enumerate() {
            self.tokens.push(w.to_string());
            self.labels.push(match kind {
                None => "O".to_string(),
                Some(k) if i == 0 => format!("B-{k}"),
                Some(k) => format!("I-{k}"),
            });
        }
    }
}

fn sentence(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let travel = rng.gen_bool(0.6);
    let clauses = match rng.gen::<f64>() {
        x if x < 0.6 => 1,
        x if x < 0.9 => 2,
        _ => 3,
    };
    let mut b = Builder {
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    let mut n = 0;
    while n < clauses || b.tokens.len() < cfg.min_len {
        if n > 0 {
            b.words(if rng.gen_bool(0.5) { "and" } else { "and then" }, None);
        }
        clause(cfg, travel, &mut b, rng);
        n += 1;
    }
    Sentence {
        tokens: b.tokens,
        labels: b.labels,
    }
}

fn clause(cfg: &SynthConfig, travel: bool, b: &mut Builder, rng: &mut ChaCha8Rng) {
    let late = rng.gen_bool(0.5);
    let pool = match (travel, late) {
        (true, false) => TRAVEL_PLAIN,
        (true, true) => TRAVEL_LATE,
        (false, false) => SOCIAL_PLAIN,
        (false, true) => SOCIAL_LATE,
    };
    let template = pool.choose(rng).unwrap();
    let p_amb = if late { cfg.ambiguous_late } else { cfg.ambiguous_plain };
    let kind = if travel { "city" } else { "person" };
    for w in template.split(' ') {
        if w != "X" {
            b.words(w, None);
            continue;
        }
        if rng.gen_bool(p_amb) {
            b.words(AMBIGUOUS.choose(rng).unwrap(), Some(kind));
        } else if travel {
            b.words(CITIES.choose(rng).unwrap(), Some(kind));
        } else {
            let mut name = PERSONS.choose(rng).unwrap().to_string();
            if rng.gen_bool(0.3) {
                name.push(' ');
                name.push_str(SURNAMES.choose(rng).unwrap());
            }
            b.words(&name, Some(kind));
        }
    }
    if rng.gen_bool(cfg.date_prob) {
        b.words(DATES.choose(rng).unwrap(), Some("date"));
    }
}
