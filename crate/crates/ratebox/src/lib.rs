//! Rate-limited action spaces for continuous control: constraint geometry,
//! squashing parameterizations with exact Jacobians and densities, a minimal
//! MLP/Adam stack, SAC and TD3 learners over command-augmented states, a
//! synthetic tracking environment, and evaluation metrics.
//!
//! The central object is a per-dimension rate constraint |a_t^i − a_{t−1}^i|
//! ≤ δ^i combined with position bounds a^i ∈ [a_min^i, a_max^i]. Everything
//! in this crate either enforces that constraint by construction
//! ([`maps`]), reasons about the geometry it induces ([`geometry`]), or
//! measures how well a learned controller uses the budget it allows
//! ([`metrics`]).

pub mod envs;
pub mod geometry;
pub mod learner;
pub mod maps;
pub mod metrics;
pub mod nn;
pub mod policy;
