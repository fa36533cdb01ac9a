//! Stochastic policy head: a diagonal Gaussian over the latent command,
//! squashed through one of the action maps. Densities over executed
//! commands come from the change of variables
//!
//!   log π(a|s) = Σ_i log N(u_i; μ_i, σ_i) − log|det J(u)|
//!
//! where J is the forward map's Jacobian at u.

use rand::Rng;
use rand_distr::StandardNormal;

/// Mean head output is MEAN_SCALE·tanh(raw): bounded but wide enough to
/// saturate every squashing map.
pub const MEAN_SCALE: f64 = 3.0;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_SQRT_2PI: f64 = 0.9189385332046727;

/// Diagonal Gaussian over the latent command, built from raw network
/// outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDist {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl LatentDist {
    /// Applies the head transforms: mean = MEAN_SCALE·tanh(raw), log std
    /// clamped into [LOG_STD_MIN, LOG_STD_MAX].
    pub fn from_raw(mean_raw: &[f64], log_std_raw: &[f64]) -> Self {
        assert_eq!(mean_raw.len(), log_std_raw.len());
        LatentDist {
            mean: mean_raw.iter().map(|&m| MEAN_SCALE * m.tanh()).collect(),
            log_std: log_std_raw
                .iter()
                .map(|&l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect(),
        }
    }

    /// For callers that already hold transformed parameters (tests,
    /// deterministic policies with a fixed exploration scale).
    pub fn from_transformed(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len());
        LatentDist { mean, log_std }
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Reparameterized draw: returns (u, ε) with u = μ + σ⊙ε so gradients
    /// can flow through μ and σ for fixed noise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let eps: Vec<f64> = (0..self.d()).map(|_| rng.sample(StandardNormal)).collect();
        let u = self
            .mean
            .iter()
            .zip(self.log_std.iter())
            .zip(&eps)
            .map(|((&m, &l), &e)| m + l.exp() * e)
            .collect();
        (u, eps)
    }

    /// Log-density of a latent under the diagonal Gaussian.
    pub fn log_prob(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.d());
        u.iter()
            .zip(&self.mean)
            .zip(&self.log_std)
            .map(|((&ui, &m), &l)| {
                let z = (ui - m) * (-l).exp();
                -LN_SQRT_2PI - l - 0.5 * z * z
            })
            .sum()
    }
}

/// Log-density of the executed command: latent Gaussian density minus the
/// forward map's log-determinant at u. Not meaningful for density-flagged
/// map outputs (collapsed radius or ℓ2 clip); callers must skip those.
pub fn action_log_prob(dist: &LatentDist, u: &[f64], map_log_det: f64) -> f64 {
    dist.log_prob(u) - map_log_det
}

/// ∂mean/∂raw for the scaled-tanh mean head.
pub fn mean_chain(mean_raw: &[f64]) -> Vec<f64> {
    mean_raw
        .iter()
        .map(|&m| {
            let t = m.tanh();
            MEAN_SCALE * (1.0 - t * t)
        })
        .collect()
}

/// Subgradient of the log-std clamp: 1 strictly inside the range, 0 where
/// the raw output saturates.
pub fn log_std_chain(log_std_raw: &[f64]) -> Vec<f64> {
    log_std_raw
        .iter()
        .map(|&l| {
            if l > LOG_STD_MIN && l < LOG_STD_MAX {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
