//! Synthetic environments whose only difficulty is the rate constraint.
//!
//! The tracker issues direct position commands (p_{t+1} = a_t) toward a
//! per-dimension sinusoid target, so tracking quality is decided entirely
//! by how well a policy spends its per-step increment budget. Targets are
//! sized so the steepest per-step motion uses a fixed fraction of each
//! dimension's budget: feasible, but binding.

use crate::geometry::ConstraintSpec;
use crate::maps;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn spec(&self) -> &ConstraintSpec;
    /// Last executed command (the rate-limit anchor for the next step).
    fn a_prev(&self) -> &[f64];
    fn horizon(&self) -> u64;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOutcome;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub spec: ConstraintSpec,
    pub horizon: u64,
    pub reward_sigma: f64,
    /// Fraction of the per-dimension rate budget the steepest target slope
    /// consumes.
    pub slope_fraction: f64,
    /// Amplitude cap as a fraction of the position half-width; frequencies
    /// rise on capped dimensions to keep the slope fraction.
    pub amplitude_cap: f64,
    /// Angular frequency before capping, rad/step.
    pub base_omega: f64,
}

impl TrackerConfig {
    pub fn new(spec: ConstraintSpec) -> TrackerConfig {
        TrackerConfig {
            spec,
            horizon: 400,
            reward_sigma: 0.7,
            slope_fraction: 0.8,
            amplitude_cap: 0.9,
            base_omega: 0.05 * TAU,
        }
    }

    pub fn d(&self) -> usize {
        self.spec.d()
    }

    /// A^i = slope_fraction·δ^i/base_omega, capped at amplitude_cap of the
    /// position half-width so the target stays inside the bounds.
    pub fn amplitudes(&self) -> Vec<f64> {
        (0..self.d())
            .map(|i| {
                let half = 0.5 * (self.spec.a_max()[i] - self.spec.a_min()[i]);
                (self.slope_fraction * self.spec.delta()[i] / self.base_omega)
                    .min(self.amplitude_cap * half)
            })
            .collect()
    }

    /// ω^i = slope_fraction·δ^i/A^i: base_omega where the amplitude is
    /// uncapped, higher where the cap bites, so max per-step target motion
    /// stays ≈ slope_fraction·δ^i everywhere.
    pub fn omegas(&self) -> Vec<f64> {
        self.amplitudes()
            .iter()
            .zip(self.spec.delta())
            .map(|(&a, &delta)| self.slope_fraction * delta / a)
            .collect()
    }
}

/// Sinusoid position tracker. Observations are (x* − p, p): the current
/// target error and the current position, 2d entries total. Phases are
/// drawn fresh each reset from the environment's own RNG.
pub struct SinTracker {
    cfg: TrackerConfig,
    amps: Vec<f64>,
    omegas: Vec<f64>,
    mid: Vec<f64>,
    phases: Vec<f64>,
    p: Vec<f64>,
    t: u64,
    rng: ChaCha8Rng,
}

impl SinTracker {
    pub fn new(cfg: TrackerConfig, rng: ChaCha8Rng) -> SinTracker {
        let d = cfg.d();
        let zeros = vec![0.0; d];
        assert!(
            cfg.spec.in_bounds(&zeros),
            "tracker starts at the origin, which must lie inside the position bounds"
        );
        assert!(cfg.horizon > 0 && cfg.reward_sigma > 0.0);
        let amps = cfg.amplitudes();
        let omegas = cfg.omegas();
        let mid: Vec<f64> = (0..d)
            .map(|i| 0.5 * (cfg.spec.a_max()[i] + cfg.spec.a_min()[i]))
            .collect();
        // steepest per-step target motion must fit the budget with slack
        for i in 0..d {
            let step = 2.0 * amps[i] * (omegas[i] / 2.0).sin();
            assert!(
                step <= 0.9 * cfg.spec.delta()[i] + 1e-12,
                "target in dim {i} moves {step} per step, over 0.9·δ"
            );
        }
        SinTracker {
            phases: vec![0.0; d],
            p: zeros,
            t: 0,
            amps,
            omegas,
            mid,
            cfg,
            rng,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    fn target_at(&self, t: u64) -> Vec<f64> {
        (0..self.cfg.d())
            .map(|i| self.mid[i] + self.amps[i] * (self.omegas[i] * t as f64 + self.phases[i]).sin())
            .collect()
    }

    pub fn current_target(&self) -> Vec<f64> {
        self.target_at(self.t)
    }

    /// Where the target will be after the next step — what a clairvoyant
    /// reference policy aims for.
    pub fn next_target(&self) -> Vec<f64> {
        self.target_at(self.t + 1)
    }

    fn observe(&self) -> Vec<f64> {
        let x = self.current_target();
        let mut obs = Vec::with_capacity(2 * self.cfg.d());
        obs.extend(x.iter().zip(&self.p).map(|(xi, pi)| xi - pi));
        obs.extend_from_slice(&self.p);
        obs
    }
}

impl Env for SinTracker {
    fn obs_dim(&self) -> usize {
        2 * self.cfg.d()
    }

    fn action_dim(&self) -> usize {
        self.cfg.d()
    }

    fn spec(&self) -> &ConstraintSpec {
        &self.cfg.spec
    }

    fn a_prev(&self) -> &[f64] {
        &self.p
    }

    fn horizon(&self) -> u64 {
        self.cfg.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        for ph in &mut self.phases {
            *ph = self.rng.gen_range(0.0..TAU);
        }
        self.p.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        debug_assert!(self.cfg.spec.in_bounds(action));
        self.p.copy_from_slice(action);
        self.t += 1;
        let x = self.current_target();
        let err2: f64 = x
            .iter()
            .zip(&self.p)
            .map(|(xi, pi)| (xi - pi) * (xi - pi))
            .sum();
        let sigma2 = self.cfg.reward_sigma * self.cfg.reward_sigma;
        StepOutcome {
            obs: self.observe(),
            reward: (-err2 / sigma2).exp(),
            done: self.t >= self.cfg.horizon,
        }
    }
}

/// Clairvoyant per-dimension reference: command the projection of the next
/// target onto the one-step feasible box. Upper-bounds what any
/// box-feasible policy can do on this task.
pub fn greedy_box_policy(env: &SinTracker) -> Vec<f64> {
    maps::clip_project(&env.next_target(), env.a_prev(), env.spec())
}

/// Clairvoyant shared-radius reference: move straight toward the next
/// target, ℓ2-capped at the strict shared radius. The best greedy step any
/// shared-radius policy has available.
pub fn greedy_shared_radius_policy(env: &SinTracker) -> Vec<f64> {
    let tgt = env.next_target();
    let p = env.a_prev();
    let r = maps::srad_strict_radius(p, env.spec());
    let e: Vec<f64> = tgt.iter().zip(p).map(|(t, pi)| t - pi).collect();
    let n: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= r {
        tgt
    } else {
        p.iter().zip(&e).map(|(pi, ei)| pi + ei * (r / n)).collect()
    }
}

/// Mean episode return of a reference policy over fresh episodes.
pub fn rollout_mean_return<F>(env: &mut SinTracker, policy: F, episodes: usize) -> f64
where
    F: Fn(&SinTracker) -> Vec<f64>,
{
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset();
        loop {
            let a = policy(env);
            let out = env.step(&a);
            total += out.reward;
            if out.done {
                break;
            }
        }
    }
    total / episodes as f64
}
