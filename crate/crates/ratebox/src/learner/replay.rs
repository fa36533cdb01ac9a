//! Augmented states, transitions, and the uniform replay buffer.

use crate::geometry::{ConstraintSpec, GeometryError};
use rand::Rng;

/// State of the augmented decision process: the environment observation
/// plus the previous executed command, which restores the Markov property
/// under rate constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub obs: Vec<f64>,
    pub a_prev: Vec<f64>,
}

impl AugmentedState {
    pub fn dim(&self) -> usize {
        self.obs.len() + self.a_prev.len()
    }

    /// Network input layout: observation entries first, then a_prev.
    pub fn write_f32(&self, out: &mut [f32]) {
        assert_eq!(out.len(), self.dim());
        for (o, &x) in out.iter_mut().zip(self.obs.iter().chain(&self.a_prev)) {
            *o = x as f32;
        }
    }
}

/// Builds s̃ = (obs, a_prev), validating that the previous command lies
/// within the position bounds.
pub fn augment(
    obs: Vec<f64>,
    a_prev: Vec<f64>,
    spec: &ConstraintSpec,
) -> Result<AugmentedState, GeometryError> {
    spec.check_command(&a_prev)?;
    Ok(AugmentedState { obs, a_prev })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: AugmentedState,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: AugmentedState,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
///
/// With `check_feasibility` on (every parameterized mapping), each inserted
/// transition is asserted to satisfy the rate limit around its own a_prev
/// and the position bounds, with zero tolerance. Clip-style baselines store
/// raw pre-projection commands, which legitimately violate, so they
/// construct the buffer unchecked.
pub struct ReplayBuffer {
    spec: ConstraintSpec,
    check_feasibility: bool,
    capacity: usize,
    data: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(spec: ConstraintSpec, capacity: usize, check_feasibility: bool) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            spec,
            check_feasibility,
            capacity,
            data: Vec::new(),
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert(&mut self, t: Transition) {
        if self.check_feasibility {
            for i in 0..self.spec.d() {
                let inc = t.a[i] - t.s.a_prev[i];
                assert!(
                    inc.abs() <= self.spec.delta()[i],
                    "stored action violates rate limit in dim {i}: |{inc}| > {}",
                    self.spec.delta()[i]
                );
                assert!(
                    t.a[i] >= self.spec.a_min()[i] && t.a[i] <= self.spec.a_max()[i],
                    "stored action violates position bounds in dim {i}: {}",
                    t.a[i]
                );
            }
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        assert!(!self.is_empty(), "cannot sample from an empty buffer");
        (0..batch).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.data[idx]
    }
}
