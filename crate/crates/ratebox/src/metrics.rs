//! Evaluation metrics and run artifacts: returns, coefficient of
//! variation, constraint-violation rate, ℓ1 and per-dimension utilization,
//! proximal/distal utilization gap, increment density histograms, and the
//! CSV/JSON files a run persists.
//!
//! Every metric is a pure function of logged data, so recomputing from the
//! persisted action log reproduces the published numbers.
//!
//! File schemas (column order is fixed):
//!   actions.csv  step, dim, delta_a, a
//!   eval.csv     step, seed, mean_return, return_std, cvr, util_l1,
//!                util_d0..util_d{d-1}, cv, l2_clip_rate
//!   config.json  pretty-printed run configuration

use crate::geometry::ConstraintSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Slack for calling a logged step a constraint violation; absorbs nothing
/// but honest float noise, and parameterized maps stay at exactly zero
/// violations even with tol = 0.
pub const CVR_TOL: f64 = 1e-9;
pub const HIST_BINS: usize = 64;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("coefficient of variation undefined for zero mean")]
    ZeroMean,
    #[error("index group is empty")]
    EmptyGroup,
    #[error("index groups overlap at {0}")]
    OverlappingGroups(usize),
    #[error("index {index} out of range for {len} dimensions")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("sample {value} outside [-{delta}, {delta}]")]
    OutOfRange { value: f64, delta: f64 },
    #[error("row has {got} dims, log carries {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-step increments and executed commands for one run, with the global
/// step index each row was logged at. Rows are stored flat, d values per
/// row.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLog {
    d: usize,
    steps: Vec<u64>,
    delta_a: Vec<f64>,
    a: Vec<f64>,
}

impl ActionLog {
    pub fn new(d: usize) -> ActionLog {
        assert!(d >= 1, "need at least one dimension");
        ActionLog {
            d,
            steps: Vec::new(),
            delta_a: Vec::new(),
            a: Vec::new(),
        }
    }

    pub fn push(&mut self, step: u64, delta_a: &[f64], a: &[f64]) {
        assert_eq!(delta_a.len(), self.d);
        assert_eq!(a.len(), self.d);
        self.steps.push(step);
        self.delta_a.extend_from_slice(delta_a);
        self.a.extend_from_slice(a);
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_at(&self, row: usize) -> u64 {
        self.steps[row]
    }

    pub fn delta_row(&self, row: usize) -> &[f64] {
        &self.delta_a[row * self.d..(row + 1) * self.d]
    }

    pub fn action_row(&self, row: usize) -> &[f64] {
        &self.a[row * self.d..(row + 1) * self.d]
    }

    /// All increments of one dimension, in logging order.
    pub fn dim_increments(&self, dim: usize) -> Vec<f64> {
        assert!(dim < self.d);
        (0..self.len()).map(|r| self.delta_row(r)[dim]).collect()
    }
}

/// Which global steps the persisted action log keeps: every step early on,
/// every 10th once logs would otherwise dominate the run directory.
pub fn action_log_retention(step: u64) -> bool {
    step < 100_000 || step % 10 == 0
}

/// Mean over steps of ‖Δa_t‖₁ / ‖δ‖₁.
pub fn utilization_l1(log: &ActionLog, spec: &ConstraintSpec) -> Result<f64, MetricsError> {
    check_log(log, spec)?;
    let budget = spec.delta_l1();
    let sum: f64 = (0..log.len())
        .map(|r| log.delta_row(r).iter().map(|x| x.abs()).sum::<f64>() / budget)
        .sum();
    Ok(sum / log.len() as f64)
}

/// Per-dimension utilization: u^i = (1/T) Σ_t |Δa_t^i| / δ^i.
pub fn utilization_per_dim(
    log: &ActionLog,
    spec: &ConstraintSpec,
) -> Result<Vec<f64>, MetricsError> {
    check_log(log, spec)?;
    let mut u = vec![0.0; log.d()];
    for r in 0..log.len() {
        for (ui, (&x, &delta)) in u.iter_mut().zip(log.delta_row(r).iter().zip(spec.delta())) {
            *ui += x.abs() / delta;
        }
    }
    for ui in &mut u {
        *ui /= log.len() as f64;
    }
    Ok(u)
}

/// Fraction of logged steps where any dimension's increment exceeds its
/// rate limit by more than `tol`, or the command leaves the position
/// bounds by more than `tol`.
pub fn cvr(log: &ActionLog, spec: &ConstraintSpec, tol: f64) -> Result<f64, MetricsError> {
    check_log(log, spec)?;
    let violations = (0..log.len())
        .filter(|&r| {
            let da = log.delta_row(r);
            let a = log.action_row(r);
            (0..log.d()).any(|i| {
                da[i].abs() > spec.delta()[i] + tol
                    || a[i] > spec.a_max()[i] + tol
                    || a[i] < spec.a_min()[i] - tol
            })
        })
        .count();
    Ok(violations as f64 / log.len() as f64)
}

fn check_log(log: &ActionLog, spec: &ConstraintSpec) -> Result<(), MetricsError> {
    if log.is_empty() {
        return Err(MetricsError::Empty);
    }
    if log.d() != spec.d() {
        return Err(MetricsError::DimMismatch {
            expected: spec.d(),
            got: log.d(),
        });
    }
    Ok(())
}

/// Percent coefficient of variation: 100 · population std / |mean|.
pub fn cv(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() < 2 {
        return Err(MetricsError::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if mean == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    Ok(100.0 * var.sqrt() / mean.abs())
}

/// Absolute difference between mean utilization over two disjoint index
/// groups (proximal vs distal dimensions).
pub fn gap(
    util_per_dim: &[f64],
    proximal: &[usize],
    distal: &[usize],
) -> Result<f64, MetricsError> {
    if proximal.is_empty() || distal.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    for &i in proximal.iter().chain(distal) {
        if i >= util_per_dim.len() {
            return Err(MetricsError::IndexOutOfRange {
                index: i,
                len: util_per_dim.len(),
            });
        }
    }
    if let Some(&i) = proximal.iter().find(|i| distal.contains(i)) {
        return Err(MetricsError::OverlappingGroups(i));
    }
    let mean = |g: &[usize]| g.iter().map(|&i| util_per_dim[i]).sum::<f64>() / g.len() as f64;
    Ok((mean(proximal) - mean(distal)).abs())
}

/// Normalized histogram of one dimension's increments over [−δ, δ]:
/// p̂_b = c_b / (N·w) with w = 2δ/B, so Σ p̂_b·w = 1. The top edge falls
/// into the last bin.
pub fn density_histogram(
    xs: &[f64],
    delta: f64,
    bins: usize,
) -> Result<Vec<f64>, MetricsError> {
    assert!(bins >= 1 && delta > 0.0);
    if xs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let w = 2.0 * delta / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        if x.abs() > delta {
            return Err(MetricsError::OutOfRange { value: x, delta });
        }
        let b = (((x + delta) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = xs.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / (n * w)).collect())
}

/// One evaluation checkpoint of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub seed: u64,
    pub mean_return: f64,
    pub return_std: f64,
    pub cvr: f64,
    pub util_l1: f64,
    pub util_per_dim: Vec<f64>,
    /// Percent CV of returns across this checkpoint's evaluation episodes.
    pub cv: f64,
    pub l2_clip_rate: f64,
}

pub fn write_eval_csv(path: &Path, records: &[RunRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let d = records[0].util_per_dim.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "step".to_string(),
        "seed".into(),
        "mean_return".into(),
        "return_std".into(),
        "cvr".into(),
        "util_l1".into(),
    ];
    header.extend((0..d).map(|i| format!("util_d{i}")));
    header.push("cv".into());
    header.push("l2_clip_rate".into());
    w.write_record(&header)?;
    for r in records {
        if r.util_per_dim.len() != d {
            return Err(MetricsError::DimMismatch {
                expected: d,
                got: r.util_per_dim.len(),
            });
        }
        let mut row = vec![
            r.step.to_string(),
            r.seed.to_string(),
            r.mean_return.to_string(),
            r.return_std.to_string(),
            r.cvr.to_string(),
            r.util_l1.to_string(),
        ];
        row.extend(r.util_per_dim.iter().map(|u| u.to_string()));
        row.push(r.cv.to_string());
        row.push(r.l2_clip_rate.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<RunRecord>, MetricsError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("util_d")).count();
    let expected = 8 + d;
    if headers.len() != expected {
        return Err(MetricsError::Format(format!(
            "eval.csv has {} columns, expected {expected}",
            headers.len()
        )));
    }
    let parse = |s: &str| -> Result<f64, MetricsError> {
        s.parse::<f64>()
            .map_err(|e| MetricsError::Format(format!("bad float '{s}': {e}")))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| parse(&rec[i]);
        out.push(RunRecord {
            step: rec[0]
                .parse()
                .map_err(|e| MetricsError::Format(format!("bad step: {e}")))?,
            seed: rec[1]
                .parse()
                .map_err(|e| MetricsError::Format(format!("bad seed: {e}")))?,
            mean_return: f(2)?,
            return_std: f(3)?,
            cvr: f(4)?,
            util_l1: f(5)?,
            util_per_dim: (0..d).map(|i| f(6 + i)).collect::<Result<_, _>>()?,
            cv: f(6 + d)?,
            l2_clip_rate: f(7 + d)?,
        });
    }
    Ok(out)
}

pub fn write_actions_csv(path: &Path, log: &ActionLog) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "dim", "delta_a", "a"])?;
    for r in 0..log.len() {
        let (da, a) = (log.delta_row(r), log.action_row(r));
        for i in 0..log.d() {
            w.write_record(&[
                log.step_at(r).to_string(),
                i.to_string(),
                da[i].to_string(),
                a[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_actions_csv(path: &Path, d: usize) -> Result<ActionLog, MetricsError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut log = ActionLog::new(d);
    let mut cur_step = None;
    let mut da = Vec::with_capacity(d);
    let mut a = Vec::with_capacity(d);
    for rec in rdr.records() {
        let rec = rec?;
        let step: u64 = rec[0]
            .parse()
            .map_err(|e| MetricsError::Format(format!("bad step: {e}")))?;
        let dim: usize = rec[1]
            .parse()
            .map_err(|e| MetricsError::Format(format!("bad dim: {e}")))?;
        if dim != da.len() || dim >= d {
            return Err(MetricsError::Format(format!(
                "row for step {step} has dim {dim}, expected {}",
                da.len()
            )));
        }
        if let Some(s) = cur_step {
            if s != step && !da.is_empty() {
                return Err(MetricsError::Format(format!(
                    "step changed from {s} to {step} mid-row"
                )));
            }
        }
        cur_step = Some(step);
        da.push(rec[2]
            .parse::<f64>()
            .map_err(|e| MetricsError::Format(format!("bad delta_a: {e}")))?);
        a.push(rec[3]
            .parse::<f64>()
            .map_err(|e| MetricsError::Format(format!("bad a: {e}")))?);
        if da.len() == d {
            log.push(step, &da, &a);
            da.clear();
            a.clear();
            cur_step = None;
        }
    }
    if !da.is_empty() {
        return Err(MetricsError::Format("trailing partial row".into()));
    }
    Ok(log)
}

/// Pretty-printed JSON with a trailing newline; field order follows the
/// config struct, so identical configs serialize byte-identically.
pub fn write_config_json<T: Serialize>(path: &Path, cfg: &T) -> Result<(), MetricsError> {
    let mut bytes = serde_json::to_vec_pretty(cfg)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}
