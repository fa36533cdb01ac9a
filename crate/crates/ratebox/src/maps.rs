//! Action parameterizations for rate-limited control.
//!
//! The primary map squashes an unbounded latent vector per dimension into
//! the one-step feasible box around the previous command, with a
//! direction-dependent effective radius: moving toward a position bound the
//! radius shrinks to the remaining headroom, so rate and position
//! constraints hold by construction ([`dd_srad_forward`]). The map is
//! invertible on the open box ([`dd_srad_inverse`]) and exposes its diagonal
//! Jacobian and log-determinant for change-of-variables densities.
//!
//! Baselines: a shared-radius spherical squashing ([`srad_forward`], with or
//! without a box projection appended, [`srad_qp_forward`]), a tanh variant
//! with the same effective radii ([`dtanh_forward`]), and the plain box
//! projection used by clip-style methods ([`clip_project`]).

use crate::geometry::{ConstraintSpec, GeometryError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Unbounded latent command; every map in this module takes one of these
/// per step.
pub type LatentAction = Vec<f64>;

/// Radii below this are treated as degenerate when forming log-densities.
pub(crate) const RADIUS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("latent[{dim}] = {value} is not finite")]
    NonFiniteLatent { dim: usize, value: f64 },
    #[error("previous command {value} outside position bounds [{lo}, {hi}]")]
    CommandOutsideBounds { value: f64, lo: f64, hi: f64 },
    #[error("target[{dim}] = {value} lies on or outside the open feasible interval ({lo}, {hi})")]
    NoFinitePreimage {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
}

/// Everything a forward pass produces: the executed command, its increment
/// from the previous command, the diagonal Jacobian, the summed
/// log-determinant, the per-dimension radii used, and whether the global
/// ℓ2 safety clip fired.
#[derive(Debug, Clone, PartialEq)]
pub struct MapOutput {
    pub action: Vec<f64>,
    pub increment: Vec<f64>,
    pub jac_diag: Vec<f64>,
    pub log_det: f64,
    pub r_eff: Vec<f64>,
    pub l2_clip_triggered: bool,
}

impl MapOutput {
    /// True when no valid density exists for this sample: either the clip
    /// rescaled the increment, or some radius collapsed to (near) zero at a
    /// position boundary. Flagged samples are excluded from log-prob terms.
    pub fn density_flagged(&self) -> bool {
        self.l2_clip_triggered || self.r_eff.iter().any(|&r| r < RADIUS_FLOOR)
    }
}

/// Direction-dependent radius for one dimension: the rate limit, shrunk to
/// the position-bound headroom on the side the latent points to. Returns
/// the full rate limit at u = 0 (where the increment is zero anyway).
pub fn effective_radius(
    u_i: f64,
    a_prev_i: f64,
    delta_i: f64,
    a_min_i: f64,
    a_max_i: f64,
) -> Result<f64, MapError> {
    if !(a_prev_i >= a_min_i && a_prev_i <= a_max_i) {
        return Err(MapError::CommandOutsideBounds {
            value: a_prev_i,
            lo: a_min_i,
            hi: a_max_i,
        });
    }
    Ok(radius_unchecked(u_i, a_prev_i, delta_i, a_min_i, a_max_i))
}

#[inline]
fn radius_unchecked(u: f64, p: f64, delta: f64, lo: f64, hi: f64) -> f64 {
    if u > 0.0 {
        delta.min(hi - p)
    } else if u < 0.0 {
        delta.min(p - lo)
    } else {
        delta
    }
}

/// u/√(1+u²), stable at any magnitude.
#[inline]
fn squash(u: f64) -> f64 {
    u / 1.0f64.hypot(u)
}

/// ln cosh without overflow.
#[inline]
fn ln_cosh(u: f64) -> f64 {
    let x = u.abs();
    if x > 20.0 {
        x - std::f64::consts::LN_2 + (-2.0 * x).exp().ln_1p()
    } else {
        x.cosh().ln()
    }
}

/// Sum plus clamp with one-ulp guards: `a_prev + inc` can round a single
/// ulp past a bound or past the rate window when the latent is extreme, so
/// pull back until both hard constraints hold as written. The loops almost
/// never execute.
#[inline]
fn guarded_sum(p: f64, inc: f64, lo: f64, hi: f64, delta: f64) -> f64 {
    let mut a = p + inc;
    if a > hi {
        a = hi;
    } else if a < lo {
        a = lo;
    }
    while a - p > delta {
        a = a.next_down();
    }
    while p - a > delta {
        a = a.next_up();
    }
    a
}

fn check_latent(u: &[f64], d: usize) -> Result<(), MapError> {
    if u.len() != d {
        return Err(GeometryError::DimMismatch {
            expected: d,
            got: u.len(),
        }
        .into());
    }
    for (i, &ui) in u.iter().enumerate() {
        if !ui.is_finite() {
            return Err(MapError::NonFiniteLatent { dim: i, value: ui });
        }
    }
    Ok(())
}

/// Per-dimension squashing with direction-dependent radii:
///
///   a^i = a_prev^i + R_eff^i(u^i) · u^i/√(1+(u^i)²)
///
/// Rate and position constraints hold for every input by construction.
/// At u^i = 0 exactly, the reported radius and Jacobian use the upward
/// (right-derivative) radius — the increment is zero there either way, but
/// the kink needs a subgradient choice and this matches what reverse-mode
/// differentiation of the positive branch would return.
///
/// With `apply_l2_clip`, an increment whose ℓ2 norm exceeds ‖δ‖₂ is
/// rescaled onto that sphere and the trigger flag is set; `jac_diag` and
/// `log_det` then still describe the unclipped map (no density correction
/// exists for the clipped one — callers must treat flagged samples
/// accordingly, see [`MapOutput::density_flagged`]).
pub fn dd_srad_forward(
    u: &[f64],
    a_prev: &[f64],
    spec: &ConstraintSpec,
    apply_l2_clip: bool,
) -> Result<MapOutput, MapError> {
    spec.check_command(a_prev)?;
    let d = spec.d();
    check_latent(u, d)?;

    let mut action = vec![0.0; d];
    let mut increment = vec![0.0; d];
    let mut jac_diag = vec![0.0; d];
    let mut r_eff = vec![0.0; d];
    let mut log_det = 0.0;
    for i in 0..d {
        let (p, delta) = (a_prev[i], spec.delta()[i]);
        let (lo, hi) = (spec.a_min()[i], spec.a_max()[i]);
        let r_act = radius_unchecked(u[i], p, delta, lo, hi);
        let r_jac = if u[i] == 0.0 {
            delta.min(hi - p)
        } else {
            r_act
        };
        let h = 1.0f64.hypot(u[i]);
        let inc = r_act * squash(u[i]);
        let box_lo = (p - delta).max(lo);
        let box_hi = (p + delta).min(hi);
        action[i] = guarded_sum(p, inc, box_lo, box_hi, delta);
        increment[i] = inc;
        jac_diag[i] = r_jac / (h * h * h);
        r_eff[i] = r_jac;
        log_det += r_jac.max(RADIUS_FLOOR).ln() - 3.0 * h.ln();
    }

    let mut out = MapOutput {
        action,
        increment,
        jac_diag,
        log_det,
        r_eff,
        l2_clip_triggered: false,
    };
    if apply_l2_clip && l2_clip(&mut out.increment, spec) {
        out.l2_clip_triggered = true;
        for i in 0..d {
            let (p, delta) = (a_prev[i], spec.delta()[i]);
            let box_lo = (p - delta).max(spec.a_min()[i]);
            let box_hi = (p + delta).min(spec.a_max()[i]);
            out.action[i] = guarded_sum(p, out.increment[i], box_lo, box_hi, delta);
        }
    }
    Ok(out)
}

/// Rescales `increment` onto the ℓ2 sphere of radius ‖δ‖₂ when it exceeds
/// it; returns whether the clip fired. The per-dimension map keeps
/// ‖Δa‖₂ ≤ ‖δ‖₂ on its own, so this is a safety net for externally
/// supplied increments and for belt-and-braces deployment configs.
pub fn l2_clip(increment: &mut [f64], spec: &ConstraintSpec) -> bool {
    let norm: f64 = increment.iter().map(|x| x * x).sum::<f64>().sqrt();
    let budget = spec.delta_l2();
    if norm > budget {
        let s = budget / norm;
        for x in increment.iter_mut() {
            *x *= s;
        }
        true
    } else {
        false
    }
}

/// Exact preimage of a target strictly inside the open feasible box:
/// per dimension, u* = Δ*/√(R² − Δ*²) with R the radius on Δ*'s side.
/// Targets on or beyond the box boundary have no finite preimage.
pub fn dd_srad_inverse(
    a_target: &[f64],
    a_prev: &[f64],
    spec: &ConstraintSpec,
) -> Result<LatentAction, MapError> {
    spec.check_command(a_prev)?;
    let d = spec.d();
    if a_target.len() != d {
        return Err(GeometryError::DimMismatch {
            expected: d,
            got: a_target.len(),
        }
        .into());
    }
    let mut u = vec![0.0; d];
    for i in 0..d {
        let (p, delta) = (a_prev[i], spec.delta()[i]);
        let diff = a_target[i] - p;
        if diff == 0.0 {
            continue;
        }
        let r = if diff > 0.0 {
            delta.min(spec.a_max()[i] - p)
        } else {
            delta.min(p - spec.a_min()[i])
        };
        if diff.abs() >= r {
            let box_lo = (p - delta).max(spec.a_min()[i]);
            let box_hi = (p + delta).min(spec.a_max()[i]);
            return Err(MapError::NoFinitePreimage {
                dim: i,
                value: a_target[i],
                lo: box_lo,
                hi: box_hi,
            });
        }
        // factored form avoids cancellation as |Δ*| → R
        u[i] = diff / ((r - diff.abs()) * (r + diff.abs())).sqrt();
    }
    Ok(u)
}

/// Shared-radius spherical squashing: a = center + R·u/√(1+‖u‖₂²), which
/// confines the whole step to one ℓ2 ball of radius R regardless of
/// per-dimension budgets.
pub fn srad_forward(u: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    assert!(
        radius.is_finite() && radius > 0.0,
        "radius must be positive"
    );
    assert_eq!(u.len(), center.len(), "latent/center dimension mismatch");
    let f = spherical_squash(u);
    center
        .iter()
        .zip(f)
        .map(|(&c, fi)| c + radius * fi)
        .collect()
}

fn spherical_squash(u: &[f64]) -> Vec<f64> {
    let m = u.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if m == 0.0 {
        return vec![0.0; u.len()];
    }
    if m <= 1e100 {
        let denom = (1.0 + u.iter().map(|&x| x * x).sum::<f64>()).sqrt();
        u.iter().map(|&x| x / denom).collect()
    } else {
        // rescale so the squared norm cannot overflow
        let s: f64 = u.iter().map(|&x| (x / m) * (x / m)).sum();
        let denom = (1.0 / (m * m) + s).sqrt();
        u.iter().map(|&x| (x / m) / denom).collect()
    }
}

/// ln(1 + ‖u‖₂²) without overflow.
fn ln_1p_normsq(u: &[f64]) -> f64 {
    let m = u.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if m <= 1e100 {
        u.iter().map(|&x| x * x).sum::<f64>().ln_1p()
    } else {
        let s: f64 = u.iter().map(|&x| (x / m) * (x / m)).sum();
        2.0 * m.ln() + (s + 1.0 / (m * m)).ln()
    }
}

/// Log-determinant of the shared-radius map's (dense, symmetric) Jacobian:
/// d·ln R − (d+2)/2 · ln(1+‖u‖²). Used for change-of-variables densities
/// of shared-radius policies.
pub fn srad_log_det(u: &[f64], radius: f64) -> f64 {
    let d = u.len() as f64;
    d * radius.max(RADIUS_FLOOR).ln() - 0.5 * (d + 2.0) * ln_1p_normsq(u)
}

/// Jacobian-vector product for the shared-radius map (J is symmetric):
/// J·v = R·(v/s − u·(u·v)/s³) with s = √(1+‖u‖²).
pub fn srad_jac_vec(u: &[f64], radius: f64, v: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), v.len());
    let s = (1.0 + u.iter().map(|&x| x * x).sum::<f64>()).sqrt();
    let udotv: f64 = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    u.iter()
        .zip(v)
        .map(|(&ui, &vi)| radius * (vi / s - ui * udotv / (s * s * s)))
        .collect()
}

/// Gradient of [`srad_log_det`] with respect to u: −(d+2)·u/(1+‖u‖²).
pub fn srad_log_det_grad(u: &[f64]) -> Vec<f64> {
    let d = u.len() as f64;
    let denom = 1.0 + u.iter().map(|&x| x * x).sum::<f64>();
    u.iter().map(|&ui| -(d + 2.0) * ui / denom).collect()
}

/// Per-dimension derivative of the squashing log-Jacobian term
/// −1.5·ln(1+u²).
pub(crate) fn ddsrad_log_det_grad_dim(u: f64) -> f64 {
    -3.0 * u / (1.0 + u * u)
}

/// Per-dimension derivative of the tanh log-Jacobian term ln(1−tanh²u).
pub(crate) fn dtanh_log_det_grad_dim(u: f64) -> f64 {
    -2.0 * u.tanh()
}

/// Tanh counterpart of [`dd_srad_forward`]: same direction-dependent radii,
/// but a^i = a_prev^i + R_eff^i·tanh(u^i). Its Jacobian decays
/// exponentially in |u| where the squashing map's decays polynomially.
pub fn dtanh_forward(
    u: &[f64],
    a_prev: &[f64],
    spec: &ConstraintSpec,
) -> Result<MapOutput, MapError> {
    spec.check_command(a_prev)?;
    let d = spec.d();
    check_latent(u, d)?;

    let mut action = vec![0.0; d];
    let mut increment = vec![0.0; d];
    let mut jac_diag = vec![0.0; d];
    let mut r_eff = vec![0.0; d];
    let mut log_det = 0.0;
    for i in 0..d {
        let (p, delta) = (a_prev[i], spec.delta()[i]);
        let (lo, hi) = (spec.a_min()[i], spec.a_max()[i]);
        let r_act = radius_unchecked(u[i], p, delta, lo, hi);
        let r_jac = if u[i] == 0.0 {
            delta.min(hi - p)
        } else {
            r_act
        };
        let c = u[i].cosh();
        let sech2 = 1.0 / (c * c);
        let inc = r_act * u[i].tanh();
        let box_lo = (p - delta).max(lo);
        let box_hi = (p + delta).min(hi);
        action[i] = guarded_sum(p, inc, box_lo, box_hi, delta);
        increment[i] = inc;
        jac_diag[i] = r_jac * sech2;
        r_eff[i] = r_jac;
        log_det += r_jac.max(RADIUS_FLOOR).ln() - 2.0 * ln_cosh(u[i]);
    }
    Ok(MapOutput {
        action,
        increment,
        jac_diag,
        log_det,
        r_eff,
        l2_clip_triggered: false,
    })
}

/// Euclidean projection of a raw command onto the one-step feasible box —
/// the box constraint is separable, so the projection is a per-dimension
/// clamp. Panics if `a_prev` violates the position bounds.
pub fn clip_project(a_raw: &[f64], a_prev: &[f64], spec: &ConstraintSpec) -> Vec<f64> {
    let feasible = spec
        .feasible_box(a_prev)
        .expect("a_prev within position bounds");
    feasible.clamp(a_raw)
}

/// Shared-radius squashing at R = min δ centered on the previous command,
/// then projection onto the feasible box. The ball already satisfies the
/// rate limits, so only position bounds can make the projection act.
pub fn srad_qp_forward(u: &[f64], a_prev: &[f64], spec: &ConstraintSpec) -> Vec<f64> {
    let a = srad_forward(u, a_prev, spec.min_delta());
    clip_project(&a, a_prev, spec)
}

/// Raw-action squash for the clip baselines, whose policies see only the
/// position box: a_raw^i = mid^i + half^i·tanh(u^i), plus the diagonal
/// Jacobian and log-determinant of that transform.
#[derive(Debug, Clone)]
pub struct BoxSquash {
    pub a_raw: Vec<f64>,
    pub jac_diag: Vec<f64>,
    pub log_det: f64,
}

pub fn box_tanh_forward(u: &[f64], spec: &ConstraintSpec) -> Result<BoxSquash, MapError> {
    let d = spec.d();
    check_latent(u, d)?;
    let mut a_raw = vec![0.0; d];
    let mut jac_diag = vec![0.0; d];
    let mut log_det = 0.0;
    for i in 0..d {
        let half = 0.5 * (spec.a_max()[i] - spec.a_min()[i]);
        let mid = 0.5 * (spec.a_max()[i] + spec.a_min()[i]);
        let c = u[i].cosh();
        a_raw[i] = mid + half * u[i].tanh();
        jac_diag[i] = half / (c * c);
        log_det += half.ln() - 2.0 * ln_cosh(u[i]);
    }
    Ok(BoxSquash {
        a_raw,
        jac_diag,
        log_det,
    })
}

/// Selector for the action parameterization / projection a learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mapping {
    #[serde(rename = "dd-srad")]
    DdSrad,
    #[serde(rename = "d-tanh")]
    DTanh,
    #[serde(rename = "srad-strict")]
    SradStrict,
    #[serde(rename = "srad-qp")]
    SradQp,
    #[serde(rename = "boxpre+")]
    BoxPrePlus,
    #[serde(rename = "post-clip")]
    PostClip,
}

impl Mapping {
    pub const ALL: [Mapping; 6] = [
        Mapping::DdSrad,
        Mapping::DTanh,
        Mapping::SradStrict,
        Mapping::SradQp,
        Mapping::BoxPrePlus,
        Mapping::PostClip,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mapping::DdSrad => "dd-srad",
            Mapping::DTanh => "d-tanh",
            Mapping::SradStrict => "srad-strict",
            Mapping::SradQp => "srad-qp",
            Mapping::BoxPrePlus => "boxpre+",
            Mapping::PostClip => "post-clip",
        }
    }

    /// Whether executed commands are feasible by construction of the
    /// parameterization itself (as opposed to via projection of a raw
    /// network output).
    pub fn parameterized(&self) -> bool {
        !matches!(self, Mapping::BoxPrePlus | Mapping::PostClip)
    }

    /// Executed command for a latent under this mapping — the geometry
    /// view used by coverage estimation, with no densities attached.
    /// For the shared-radius strict variant the global radius additionally
    /// shrinks to the smallest position-bound headroom so the ball itself
    /// stays feasible without projection.
    pub fn apply(&self, u: &[f64], a_prev: &[f64], spec: &ConstraintSpec) -> Vec<f64> {
        match self {
            Mapping::DdSrad => dd_srad_forward(u, a_prev, spec, false)
                .expect("finite latent, valid command")
                .action,
            Mapping::DTanh => dtanh_forward(u, a_prev, spec)
                .expect("finite latent, valid command")
                .action,
            Mapping::SradStrict => {
                let r = srad_strict_radius(a_prev, spec);
                if r <= 0.0 {
                    a_prev.to_vec()
                } else {
                    let a = srad_forward(u, a_prev, r);
                    // one-ulp rounding guard; the ball itself is feasible
                    spec.feasible_box(a_prev).expect("checked").clamp(&a)
                }
            }
            Mapping::SradQp => srad_qp_forward(u, a_prev, spec),
            Mapping::BoxPrePlus | Mapping::PostClip => {
                let raw = box_tanh_forward(u, spec).expect("finite latent").a_raw;
                clip_project(&raw, a_prev, spec)
            }
        }
    }
}

/// Global radius for the strict shared-radius variant: min δ, shrunk
/// further when any dimension's position-bound headroom is smaller, so the
/// whole ball is feasible with no projection step. One tight dimension
/// throttles every other — the coupling the per-dimension map removes.
/// Returns 0 when some dimension sits on its position bound; callers must
/// hold the command still in that case.
pub fn srad_strict_radius(a_prev: &[f64], spec: &ConstraintSpec) -> f64 {
    let mut r = spec.min_delta();
    for i in 0..spec.d() {
        r = r
            .min(spec.a_max()[i] - a_prev[i])
            .min(a_prev[i] - spec.a_min()[i]);
    }
    r.max(0.0)
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mapping {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mapping::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| {
                format!(
                    "unknown mapping '{s}' (expected one of: {})",
                    Mapping::ALL.map(|m| m.name()).join(", ")
                )
            })
    }
}
