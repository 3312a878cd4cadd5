//! The three fixed-capacity caches Γʰ, Γᶻ, Γᵖ.
//!
//! Slots hold value copies tagged with the absolute time step they were
//! computed at. Γʰ is pushed on every step; Γᶻ and Γᵖ are pushed together on
//! WRITE and rebuilt from the reviser's logits on REVISE, so at step
//! boundaries all three hold the same time window.

use std::collections::VecDeque;

use crate::layers::Projection;
use crate::tensorkit::{ParamStore, Real};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Slot<T> {
    pub time: usize,
    pub value: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct CacheSet<T: Real = f32> {
    capacity: usize,
    h: VecDeque<Slot<T>>,
    z: VecDeque<Slot<T>>,
    p: VecDeque<Slot<T>>,
}

fn push_bounded<T>(q: &mut VecDeque<Slot<T>>, cap: usize, slot: Slot<T>) {
    if q.len() == cap {
        q.pop_front();
    }
    q.push_back(slot);
}

impl<T: Real> CacheSet<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("cache capacity must be positive".into()));
        }
        Ok(CacheSet {
            capacity,
            h: VecDeque::with_capacity(capacity),
            z: VecDeque::with_capacity(capacity),
            p: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn h(&self) -> &VecDeque<Slot<T>> {
        &self.h
    }

    pub fn z(&self) -> &VecDeque<Slot<T>> {
        &self.z
    }

    pub fn p(&self) -> &VecDeque<Slot<T>> {
        &self.p
    }

    /// Γᵖ as `(time, φ)` pairs, oldest first.
    pub fn phi_slots(&self) -> Vec<(usize, &[T])> {
        self.p.iter().map(|s| (s.time, s.value.as_slice())).collect()
    }

    pub fn push_h(&mut self, time: usize, h: Vec<T>) {
        push_bounded(&mut self.h, self.capacity, Slot { time, value: h });
    }

    pub fn push_zp(&mut self, time: usize, z: Vec<T>, phi: Vec<T>) {
        push_bounded(&mut self.z, self.capacity, Slot { time, value: z });
        push_bounded(&mut self.p, self.capacity, Slot { time, value: phi });
    }

    /// Pushes one slot to all three caches.
    pub fn push(&mut self, time: usize, h: Vec<T>, z: Vec<T>, phi: Vec<T>) {
        self.push_h(time, h);
        self.push_zp(time, z, phi);
    }

    pub fn clear_zp(&mut self) {
        self.z.clear();
        self.p.clear();
    }

    /// Clears Γᶻ and Γᵖ and recomputes a slot for every Γʰ entry `(j, h_j)`
    /// from `logits_at(j)` (the logits standing for step `j`'s output).
    pub fn rebuild_with<F>(&mut self, proj: &Projection, store: &ParamStore<T>, mut logits_at: F) -> Result<()>
    where
        F: FnMut(usize) -> Result<Vec<T>>,
    {
        self.clear_zp();
        let window: Vec<(usize, Vec<T>)> = self.h.iter().map(|s| (s.time, s.value.clone())).collect();
        for (j, h) in window {
            let logits = logits_at(j)?;
            let (z, phi) = proj.project(store, &h, &logits)?;
            self.push_zp(j, z, phi);
        }
        Ok(())
    }

    /// Rebuild after a REVISE at step `t` with undelayed outputs:
    /// `reviser_logits[j − 1]` belongs to step `j`, and there must be exactly
    /// `t` rows where `t` is the newest Γʰ time. The window is
    /// `max(1, t − N + 1) ..= t`.
    pub fn rebuild_after_revise(
        &mut self,
        reviser_logits: &[Vec<T>],
        proj: &Projection,
        store: &ParamStore<T>,
    ) -> Result<()> {
        let t = self.h.back().map_or(0, |s| s.time);
        if reviser_logits.len() != t {
            return Err(Error::ReviserLength {
                expected: t,
                got: reviser_logits.len(),
            });
        }
        self.rebuild_with(proj, store, |j| Ok(reviser_logits[j - 1].clone()))
    }

    /// Time indices of the three caches agree and are contiguous, and no
    /// cache exceeds the capacity.
    pub fn is_aligned(&self) -> bool {
        let times = |q: &VecDeque<Slot<T>>| q.iter().map(|s| s.time).collect::<Vec<_>>();
        let (h, z, p) = (times(&self.h), times(&self.z), times(&self.p));
        let contiguous = h.windows(2).all(|w| w[1] == w[0] + 1);
        h == z && z == p && contiguous && h.len() <= self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn times<T: Real>(q: &VecDeque<Slot<T>>) -> Vec<usize> {
        q.iter().map(|s| s.time).collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut c = CacheSet::<f32>::new(3).unwrap();
        c.push(1, vec![1.0], vec![1.0], vec![1.0]);
        assert_eq!(c.h().len(), 1);
        for t in 2..=4 {
            c.push(t, vec![t as f32], vec![0.0], vec![0.0]);
        }
        assert_eq!(times(c.h()), vec![2, 3, 4]);
        assert_eq!(times(c.p()), vec![2, 3, 4]);
        assert!(c.is_aligned());
    }

    fn setup() -> (ParamStore<f64>, Projection) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let p = Projection::new(&mut store, "proj", 3, 4, 2, &mut rng).unwrap();
        (store, p)
    }

    fn rebuild_case(t: usize, n: usize) -> Vec<usize> {
        let (store, proj) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let mut c = CacheSet::<f64>::new(n).unwrap();
        let hs: Vec<Vec<f64>> = (0..t).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for (j, h) in hs.iter().enumerate() {
            c.push(j + 1, h.clone(), vec![0.0; 4], vec![0.0; 2]);
        }
        let logits: Vec<Vec<f64>> = (0..t).map(|_| (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        c.rebuild_after_revise(&logits, &proj, &store).unwrap();
        assert!(c.is_aligned());
        for s in c.p() {
            let (_, phi) = proj.project(&store, &hs[s.time - 1], &logits[s.time - 1]).unwrap();
            for (a, b) in s.value.iter().zip(&phi) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
        assert_eq!(times(c.h()), times(c.z()));
        times(c.p())
    }

    #[test]
    fn rebuild_windows() {
        assert_eq!(rebuild_case(2, 5), vec![1, 2]);
        assert_eq!(rebuild_case(10, 3), vec![8, 9, 10]);
        assert_eq!(rebuild_case(5, 5), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn rebuild_checks_length() {
        let (store, proj) = setup();
        let mut c = CacheSet::<f64>::new(3).unwrap();
        c.push(1, vec![0.0; 4], vec![0.0; 4], vec![0.0; 2]);
        c.push_h(2, vec![0.0; 4]);
        let logits = vec![vec![0.0; 3]];
        assert!(matches!(
            c.rebuild_after_revise(&logits, &proj, &store),
            Err(Error::ReviserLength { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(CacheSet::<f32>::new(0).is_err());
    }

    proptest! {
        #[test]
        fn random_push_sequences_stay_aligned(cap in 1usize..8, ops in proptest::collection::vec(any::<bool>(), 1..60)) {
            let mut c = CacheSet::<f32>::new(cap).unwrap();
            for (i, write) in ops.into_iter().enumerate() {
                let t = i + 1;
                c.push_h(t, vec![t as f32]);
                prop_assert!(c.h().len() >= c.z().len());
                if write {
                    c.push_zp(t, vec![0.0], vec![t as f32]);
                } else {
                    c.rebuild_with_values(|j| j as f32);
                }
                prop_assert!(c.is_aligned());
                prop_assert_eq!(c.h().back().unwrap().time, t);
                prop_assert_eq!(c.h().len(), t.min(cap));
            }
        }
    }

    impl CacheSet<f32> {
        fn rebuild_with_values(&mut self, f: impl Fn(usize) -> f32) {
            self.clear_zp();
            let times: Vec<usize> = self.h.iter().map(|s| s.time).collect();
            for j in times {
                self.push_zp(j, vec![f(j)], vec![f(j)]);
            }
        }
    }
}
