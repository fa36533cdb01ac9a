//! Feasible-set and reachable-set geometry for rate-limited action spaces.
//!
//! A [`ConstraintSpec`] couples per-dimension rate limits δ with position
//! bounds [a_min, a_max]. One control step from a previous command `a_prev`
//! can reach exactly the axis-aligned box returned by
//! [`ConstraintSpec::feasible_box`]. The volume helpers compare that box
//! against the ℓ2 ball a shared-radius squashing map is confined to, and
//! [`mc_coverage`] estimates empirically how much of the box a given
//! parameterization actually reaches.

use rand::Rng;
use rand_distr::{Cauchy, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("spec has no dimensions")]
    EmptySpec,
    #[error("field lengths differ: delta {delta}, a_min {a_min}, a_max {a_max}")]
    LengthMismatch {
        delta: usize,
        a_min: usize,
        a_max: usize,
    },
    #[error("delta[{dim}] = {value} must be positive and finite")]
    BadDelta { dim: usize, value: f64 },
    #[error("bounds[{dim}] invalid: need finite a_min < a_max, got [{a_min}, {a_max}]")]
    BadBounds { dim: usize, a_min: f64, a_max: f64 },
    #[error("command[{dim}] = {value} outside position bounds [{lo}, {hi}]")]
    CommandOutOfBounds {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("box inverted at dim {dim}: lo {lo} > hi {hi}")]
    InvertedBox { dim: usize, lo: f64, hi: f64 },
    #[error("coverage estimate needs at least one sample")]
    NoSamples,
}

/// Per-dimension rate limits and position bounds for a d-dimensional
/// command. Validated on construction; fields stay private so a spec in
/// hand is always internally consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFields", into = "SpecFields")]
pub struct ConstraintSpec {
    delta: Vec<f64>,
    a_min: Vec<f64>,
    a_max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpecFields {
    delta: Vec<f64>,
    a_min: Vec<f64>,
    a_max: Vec<f64>,
}

impl TryFrom<SpecFields> for ConstraintSpec {
    type Error = GeometryError;
    fn try_from(f: SpecFields) -> Result<Self, GeometryError> {
        ConstraintSpec::new(f.delta, f.a_min, f.a_max)
    }
}

impl From<ConstraintSpec> for SpecFields {
    fn from(s: ConstraintSpec) -> Self {
        SpecFields {
            delta: s.delta,
            a_min: s.a_min,
            a_max: s.a_max,
        }
    }
}

impl ConstraintSpec {
    pub fn new(
        delta: Vec<f64>,
        a_min: Vec<f64>,
        a_max: Vec<f64>,
    ) -> Result<Self, GeometryError> {
        if delta.is_empty() {
            return Err(GeometryError::EmptySpec);
        }
        if delta.len() != a_min.len() || delta.len() != a_max.len() {
            return Err(GeometryError::LengthMismatch {
                delta: delta.len(),
                a_min: a_min.len(),
                a_max: a_max.len(),
            });
        }
        for (i, &d) in delta.iter().enumerate() {
            if !(d.is_finite() && d > 0.0) {
                return Err(GeometryError::BadDelta { dim: i, value: d });
            }
        }
        for i in 0..a_min.len() {
            if !(a_min[i].is_finite() && a_max[i].is_finite() && a_min[i] < a_max[i]) {
                return Err(GeometryError::BadBounds {
                    dim: i,
                    a_min: a_min[i],
                    a_max: a_max[i],
                });
            }
        }
        Ok(Self {
            delta,
            a_min,
            a_max,
        })
    }

    /// Spec with bounds ±`half_width` in every dimension.
    pub fn symmetric(delta: Vec<f64>, half_width: f64) -> Result<Self, GeometryError> {
        let d = delta.len();
        Self::new(delta, vec![-half_width; d], vec![half_width; d])
    }

    pub fn d(&self) -> usize {
        self.delta.len()
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn a_min(&self) -> &[f64] {
        &self.a_min
    }

    pub fn a_max(&self) -> &[f64] {
        &self.a_max
    }

    /// Heterogeneity ratio max δ / min δ (≥ 1).
    pub fn kappa(&self) -> f64 {
        self.max_delta() / self.min_delta()
    }

    pub fn min_delta(&self) -> f64 {
        self.delta.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_delta(&self) -> f64 {
        self.delta.iter().cloned().fold(0.0, f64::max)
    }

    pub fn delta_l1(&self) -> f64 {
        self.delta.iter().sum()
    }

    pub fn delta_l2(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// True when `a` lies within the position bounds (closed) in every
    /// dimension.
    pub fn in_bounds(&self, a: &[f64]) -> bool {
        a.len() == self.d()
            && a.iter()
                .enumerate()
                .all(|(i, &x)| x >= self.a_min[i] && x <= self.a_max[i])
    }

    /// Checks `a_prev` dimension and bounds, returning the first offending
    /// dimension on failure.
    pub fn check_command(&self, a_prev: &[f64]) -> Result<(), GeometryError> {
        if a_prev.len() != self.d() {
            return Err(GeometryError::DimMismatch {
                expected: self.d(),
                got: a_prev.len(),
            });
        }
        for (i, &x) in a_prev.iter().enumerate() {
            if !(x >= self.a_min[i] && x <= self.a_max[i]) {
                return Err(GeometryError::CommandOutOfBounds {
                    dim: i,
                    value: x,
                    lo: self.a_min[i],
                    hi: self.a_max[i],
                });
            }
        }
        Ok(())
    }

    /// The set of commands reachable in one step from `a_prev`:
    /// per-dimension interval [max(a_prev−δ, a_min), min(a_prev+δ, a_max)].
    pub fn feasible_box(&self, a_prev: &[f64]) -> Result<FeasibleBox, GeometryError> {
        self.check_command(a_prev)?;
        let lo = a_prev
            .iter()
            .zip(&self.delta)
            .zip(&self.a_min)
            .map(|((&p, &d), &m)| (p - d).max(m))
            .collect();
        let hi = a_prev
            .iter()
            .zip(&self.delta)
            .zip(&self.a_max)
            .map(|((&p, &d), &m)| (p + d).min(m))
            .collect();
        FeasibleBox::new(lo, hi)
    }
}

/// Axis-aligned box, usually the one-step feasible set around a previous
/// command. Zero-width sides are permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl FeasibleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(GeometryError::EmptySpec);
        }
        for i in 0..lo.len() {
            // negated form also rejects NaN endpoints
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(lo[i] <= hi[i]) {
                return Err(GeometryError::InvertedBox {
                    dim: i,
                    lo: lo[i],
                    hi: hi[i],
                });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn d(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    /// Product of side lengths; 0 for degenerate boxes.
    pub fn volume(&self) -> f64 {
        (0..self.d()).map(|i| self.width(i)).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.d()
            && a.iter()
                .enumerate()
                .all(|(i, &x)| x >= self.lo[i] && x <= self.hi[i])
    }

    /// Open-box membership (strict in every dimension).
    pub fn contains_interior(&self, a: &[f64]) -> bool {
        a.len() == self.d()
            && a.iter()
                .enumerate()
                .all(|(i, &x)| x > self.lo[i] && x < self.hi[i])
    }

    /// Per-dimension clamp into the box; this is the Euclidean projection
    /// because the box constraint is separable.
    pub fn clamp(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(i, &x)| x.clamp(self.lo[i], self.hi[i]))
            .collect()
    }

    /// Dimensions with zero width.
    pub fn degenerate_dims(&self) -> Vec<usize> {
        (0..self.d()).filter(|&i| self.width(i) == 0.0).collect()
    }
}

/// Volume of the d-dimensional ℓ2 ball of radius `r`, computed through
/// log-Gamma so large d does not overflow.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    assert!(d >= 1, "ball dimension must be at least 1");
    assert!(r > 0.0, "ball radius must be positive");
    let df = d as f64;
    (0.5 * df * PI.ln() - ln_gamma(0.5 * df + 1.0) + df * r.ln()).exp()
}

/// Ratio of the interior one-step feasible box volume (∏ 2δ^i) to the
/// volume of the ℓ2 ball of radius min δ:
///
///   2^d · Γ(d/2 + 1) · π^(−d/2) · ∏δ^i / (min δ)^d
///
/// Valid away from position boundaries, where the box has full width 2δ^i
/// in every dimension.
pub fn volume_ratio(spec: &ConstraintSpec) -> f64 {
    let d = spec.d() as f64;
    let min_d = spec.min_delta();
    let sum_log_delta: f64 = spec.delta().iter().map(|x| x.ln()).sum();
    let ln_ratio = d * std::f64::consts::LN_2 + ln_gamma(0.5 * d + 1.0) - 0.5 * d * PI.ln()
        + sum_log_delta
        - d * min_d.ln();
    ln_ratio.exp()
}

/// Result of a Monte-Carlo coverage estimate over a feasible box.
#[derive(Debug, Clone)]
pub struct CoverageEstimate {
    /// Fraction of grid cells hit by at least one mapped sample.
    pub coverage: f64,
    pub cells_hit: u64,
    pub cells_total: u64,
    /// Grid resolution actually used per dimension (1 for collapsed dims).
    pub grid: Vec<usize>,
    /// Zero-width dimensions, each counted as a single always-hit cell.
    pub degenerate_dims: Vec<usize>,
}

impl CoverageEstimate {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_dims.is_empty()
    }
}

const COVERAGE_CELL_CAP: f64 = 1e6;
const COVERAGE_GRID_DEFAULT: usize = 50;

/// Estimates what fraction of the one-step feasible box a parameterization
/// reaches. Draws `n` latent vectors with independent standard-Cauchy
/// coordinates (heavy tails keep near-boundary regions sampled), maps each
/// through `forward_map`, and bins the images on a per-dimension grid over
/// the box. Samples that land outside the box are ignored.
///
/// Grid resolution is 50 cells per dimension up to d=3, reduced uniformly
/// above that to keep the total cell count at or below 1e6. Zero-width
/// dimensions collapse to a single cell that counts as covered, and are
/// reported in [`CoverageEstimate::degenerate_dims`].
pub fn mc_coverage<F, R>(
    forward_map: F,
    spec: &ConstraintSpec,
    a_prev: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<CoverageEstimate, GeometryError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let feasible = spec.feasible_box(a_prev)?;
    coverage_in_box(forward_map, &feasible, n, rng)
}

/// [`mc_coverage`] over an explicit box; useful when the box does not come
/// from a spec (or is deliberately degenerate).
pub fn coverage_in_box<F, R>(
    mut forward_map: F,
    feasible: &FeasibleBox,
    n: usize,
    rng: &mut R,
) -> Result<CoverageEstimate, GeometryError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(GeometryError::NoSamples);
    }
    let d = feasible.d();
    let degenerate_dims = feasible.degenerate_dims();
    let live = d - degenerate_dims.len();

    let res_live = if live == 0 {
        1
    } else if live <= 3 {
        COVERAGE_GRID_DEFAULT
    } else {
        (COVERAGE_CELL_CAP.powf(1.0 / live as f64).floor() as usize)
            .clamp(1, COVERAGE_GRID_DEFAULT)
    };
    let grid: Vec<usize> = (0..d)
        .map(|i| if feasible.width(i) == 0.0 { 1 } else { res_live })
        .collect();
    let cells_total: u64 = grid.iter().map(|&g| g as u64).product();

    let mut hit = vec![false; cells_total as usize];
    let mut cells_hit: u64 = 0;
    // Collapsed dimensions count as covered by definition; with every live
    // resolution ≥ 1 the all-degenerate case is a single always-hit cell.
    let cauchy = Cauchy::new(0.0, 1.0).expect("standard Cauchy");
    let mut u = vec![0.0; d];
    for _ in 0..n {
        for ui in u.iter_mut() {
            *ui = cauchy.sample(rng);
        }
        let a = forward_map(&u);
        debug_assert_eq!(a.len(), d, "forward map changed dimension");
        let mut cell: u64 = 0;
        let mut inside = true;
        for i in 0..d {
            let g = grid[i];
            let idx = if g == 1 {
                0
            } else {
                let w = feasible.width(i);
                let rel = (a[i] - feasible.lo()[i]) / w;
                if !(0.0..=1.0).contains(&rel) {
                    inside = false;
                    break;
                }
                (((rel * g as f64) as usize).min(g - 1)) as u64
            };
            cell = cell * g as u64 + idx;
        }
        if inside {
            let slot = &mut hit[cell as usize];
            if !*slot {
                *slot = true;
                cells_hit += 1;
            }
        }
    }

    Ok(CoverageEstimate {
        coverage: cells_hit as f64 / cells_total as f64,
        cells_hit,
        cells_total,
        grid,
        degenerate_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec2() -> ConstraintSpec {
        ConstraintSpec::symmetric(vec![0.2, 0.5], 1.0).unwrap()
    }

    #[test]
    fn validates_and_computes_kappa() {
        let s = ConstraintSpec::symmetric(vec![0.2, 0.2, 0.5, 0.5], 1.0).unwrap();
        assert_eq!(s.d(), 4);
        assert_eq!(s.kappa(), 2.5);
        let homog = ConstraintSpec::symmetric(vec![1.0; 8], 1.0).unwrap();
        assert_eq!(homog.kappa(), 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(
            ConstraintSpec::new(vec![], vec![], vec![]),
            Err(GeometryError::EmptySpec)
        );
        assert!(matches!(
            ConstraintSpec::symmetric(vec![0.5, -0.1], 1.0),
            Err(GeometryError::BadDelta { dim: 1, .. })
        ));
        assert!(matches!(
            ConstraintSpec::new(vec![0.5], vec![1.0], vec![-1.0]),
            Err(GeometryError::BadBounds { dim: 0, .. })
        ));
        assert!(matches!(
            ConstraintSpec::new(vec![0.5], vec![0.0], vec![0.0]),
            Err(GeometryError::BadBounds { .. })
        ));
        assert!(matches!(
            ConstraintSpec::new(vec![0.5, 0.5], vec![-1.0], vec![1.0]),
            Err(GeometryError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ConstraintSpec::symmetric(vec![f64::NAN], 1.0),
            Err(GeometryError::BadDelta { .. })
        ));
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let s = spec2();
        let json = serde_json::to_string(&s).unwrap();
        let back: ConstraintSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"delta":[-0.1],"a_min":[-1.0],"a_max":[1.0]}"#;
        assert!(serde_json::from_str::<ConstraintSpec>(bad).is_err());
    }

    #[test]
    fn feasible_box_interior_and_clipped() {
        let s = ConstraintSpec::symmetric(vec![0.5], 1.0).unwrap();
        let b = s.feasible_box(&[0.0]).unwrap();
        assert_eq!((b.lo()[0], b.hi()[0]), (-0.5, 0.5));
        let b = s.feasible_box(&[0.9]).unwrap();
        assert_eq!((b.lo()[0], b.hi()[0]), (0.4, 1.0));
        let b = s.feasible_box(&[1.0]).unwrap();
        assert_eq!((b.lo()[0], b.hi()[0]), (0.5, 1.0));
        assert!(b.degenerate_dims().is_empty());
        assert!(matches!(
            s.feasible_box(&[1.1]),
            Err(GeometryError::CommandOutOfBounds { dim: 0, .. })
        ));
        assert!(matches!(
            s.feasible_box(&[0.0, 0.0]),
            Err(GeometryError::DimMismatch { .. })
        ));
    }

    #[test]
    fn box_volume_products() {
        let b = spec2().feasible_box(&[0.0, 0.0]).unwrap();
        assert!((b.volume() - 0.4).abs() < 1e-15);
        let b = FeasibleBox::new(vec![0.0, 0.3], vec![1.0, 0.3]).unwrap();
        assert_eq!(b.volume(), 0.0);
        assert_eq!(b.degenerate_dims(), vec![1]);
        let b = FeasibleBox::new(vec![-0.5], vec![0.5]).unwrap();
        assert_eq!(b.volume(), 1.0);
        assert!(FeasibleBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn ball_volumes_match_closed_forms() {
        assert!((ball_volume(2, 0.2) - PI * 0.04).abs() / (PI * 0.04) < 1e-12);
        assert!((ball_volume(1, 0.5) - 1.0).abs() < 1e-12);
        let v3 = 4.0 * PI / 3.0;
        assert!((ball_volume(3, 1.0) - v3).abs() / v3 < 1e-12);
        // no overflow at large d: volume of the unit 64-ball is tiny but finite
        let v64 = ball_volume(64, 1.0);
        assert!(v64 > 0.0 && v64 < 1e-13);
    }

    /// Γ(d/2+1) by the half-integer recurrence, as an independent route to
    /// the ball volume.
    fn half_integer_gamma(d: usize) -> f64 {
        if d % 2 == 0 {
            (1..=d / 2).map(|k| k as f64).product()
        } else {
            // Γ(1/2) = √π, then Γ(x+1) = x·Γ(x) up the half-integers
            let mut g = PI.sqrt();
            let mut x = 0.5;
            for _ in 0..d.div_ceil(2) {
                g *= x;
                x += 1.0;
            }
            g
        }
    }

    #[test]
    fn ball_volume_agrees_with_half_integer_gamma() {
        for d in 1..=17 {
            for &r in &[0.2f64, 0.5, 1.0, 2.0] {
                let expect = PI.powf(d as f64 / 2.0) / half_integer_gamma(d) * r.powi(d as i32);
                let got = ball_volume(d, r);
                assert!(
                    (got - expect).abs() / expect < 1e-12,
                    "d={d} r={r}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn volume_ratio_examples() {
        let d1 = ConstraintSpec::symmetric(vec![0.37], 1.0).unwrap();
        assert!((volume_ratio(&d1) - 1.0).abs() < 1e-12);

        let hetero = spec2();
        let expect = 4.0 / PI * 2.5;
        assert!((volume_ratio(&hetero) - expect).abs() / expect < 1e-12);

        let homog = ConstraintSpec::symmetric(vec![0.3, 0.3], 1.0).unwrap();
        let expect = 4.0 / PI;
        assert!((volume_ratio(&homog) - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn volume_ratio_equals_box_over_ball() {
        for (delta, half) in [
            (vec![0.2, 0.5], 1.0),
            (vec![0.2, 0.2, 0.5, 0.5], 1.0),
            (vec![0.1, 0.3, 0.9], 2.0),
        ] {
            let s = ConstraintSpec::symmetric(delta, half).unwrap();
            let interior = vec![0.0; s.d()];
            let box_vol = s.feasible_box(&interior).unwrap().volume();
            let ident = box_vol / ball_volume(s.d(), s.min_delta());
            let ratio = volume_ratio(&s);
            assert!(
                (ratio - ident).abs() / ident < 1e-10,
                "{ratio} vs {ident}"
            );
        }
    }

    #[test]
    fn coverage_rejects_zero_samples() {
        let s = spec2();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let err = mc_coverage(|u| u.to_vec(), &s, &[0.0, 0.0], 0, &mut rng);
        assert_eq!(err.unwrap_err(), GeometryError::NoSamples);
    }

    #[test]
    fn coverage_full_box_map_near_one() {
        // image spanning the whole box: coverage approaches 1
        let s = spec2();
        let a_prev = [0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = mc_coverage(
            |u| {
                maps::dd_srad_forward(u, &[0.0, 0.0], &spec2(), false)
                    .unwrap()
                    .action
            },
            &s,
            &a_prev,
            200_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.grid, vec![50, 50]);
        assert!(est.coverage > 0.999, "coverage {}", est.coverage);
    }

    #[test]
    fn coverage_ball_map_near_disk_fraction() {
        // shared-radius squashing reaches only the R = min δ disk; the grid
        // estimator overcounts partial boundary cells slightly, so the
        // detection band sits a little above the analytic π·0.2²/0.4 ≈ 0.314
        let s = spec2();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let est = mc_coverage(
            |u| maps::srad_forward(u, &[0.0, 0.0], 0.2),
            &s,
            &[0.0, 0.0],
            200_000,
            &mut rng,
        )
        .unwrap();
        assert!(
            est.coverage > 0.30 && est.coverage < 0.36,
            "coverage {}",
            est.coverage
        );
    }

    #[test]
    fn coverage_monotone_in_prefix_samples() {
        let s = spec2();
        let map = |u: &[f64]| {
            maps::dd_srad_forward(u, &[0.0, 0.0], &spec2(), false)
                .unwrap()
                .action
        };
        let mut prev = 0.0;
        for n in [1_000usize, 5_000, 20_000] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let est = mc_coverage(map, &s, &[0.0, 0.0], n, &mut rng).unwrap();
            assert!(est.coverage >= prev);
            prev = est.coverage;
        }
    }

    #[test]
    fn coverage_degenerate_box_is_one_with_flag() {
        let b = FeasibleBox::new(vec![0.3, -0.1], vec![0.3, -0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let est = coverage_in_box(|_| vec![0.3, -0.1], &b, 100, &mut rng).unwrap();
        assert_eq!(est.coverage, 1.0);
        assert!(est.is_degenerate());
        assert_eq!(est.degenerate_dims, vec![0, 1]);
    }

    #[test]
    fn coverage_grid_shrinks_in_high_dimension() {
        let d = 8;
        let s = ConstraintSpec::symmetric(vec![0.5; d], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let est = mc_coverage(
            |u| u.iter().map(|&x| x.tanh() * 0.4).collect(),
            &s,
            &vec![0.0; d],
            10_000,
            &mut rng,
        )
        .unwrap();
        assert!(est.cells_total <= 1_000_000);
        assert_eq!(est.grid, vec![5; 8]);
    }
}
