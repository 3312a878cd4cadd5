use std::fmt;

use rand::Rng;

use super::add_xavier;
use crate::tensorkit::{dot, Graph, ParamId, ParamStore, Real, Var};
use crate::Result;

/// Controller decision at one time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Write,
    Revise,
}

impl Action {
    pub fn symbol(self) -> char {
        match self {
            Action::Write => 'W',
            Action::Revise => 'R',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "W" => Some(Action::Write),
            "R" => Some(Action::Revise),
            _ => None,
        }
    }

    /// BCE target: REVISE is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Action::Write => 0.0,
            Action::Revise => 1.0,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// REVISE iff `score >= tau`.
pub fn decide_action(score: f64, tau: f64) -> Action {
    if score >= tau {
        Action::Revise
    } else {
        Action::Write
    }
}

/// Revision policy `σ(θᵀk_t + b_k)`.
#[derive(Clone, Debug)]
pub struct PolicyHead {
    pub theta: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl PolicyHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(PolicyHead {
            theta: add_xavier(store, format!("{name}.theta"), &[dim, 1], rng)?,
            bias: add_xavier(store, format!("{name}.b"), &[1], rng)?,
            dim,
        })
    }

    /// Scores for every row of `k` (`[n, dim]` → `[n, 1]`).
    pub fn score_vars<T: Real>(&self, g: &mut Graph<'_, T>, k: Var) -> Var {
        let th = g.param(self.theta);
        let s = g.matmul(k, th);
        let b = g.param(self.bias);
        let s = g.add_row(s, b);
        g.sigmoid(s)
    }

    /// Score for one controller state. The logit is accumulated in the
    /// working precision and squashed in 64-bit, so scores of exactly 1 only
    /// occur for logits beyond roughly 37.
    pub fn score<T: Real>(&self, store: &ParamStore<T>, k: &[T]) -> f64 {
        let logit = dot(store.get(self.theta).data(), k).as_f64() + store.get(self.bias).data()[0].as_f64();
        crate::tensorkit::sigmoid(logit)
    }
}
