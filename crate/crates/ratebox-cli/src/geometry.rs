//! Offline geometry analysis: volume ratio, utilization ceilings, and
//! Monte-Carlo reach coverage for each mapping, written to geometry.json.

use anyhow::{Context, Result};
use ratebox::geometry::{mc_coverage, volume_ratio, ConstraintSpec};
use ratebox::learner::seeded_stream;
use ratebox::maps::Mapping;
use ratebox::metrics::write_config_json;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Serialize)]
pub struct MappingCoverage {
    pub mapping: String,
    pub coverage: f64,
    pub cells_hit: u64,
    pub cells_total: u64,
    pub grid: Vec<usize>,
    pub degenerate_dims: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct GeometryReport {
    pub delta: Vec<f64>,
    pub a_min: Vec<f64>,
    pub a_max: Vec<f64>,
    pub a_prev: Vec<f64>,
    pub kappa: f64,
    pub volume_ratio: f64,
    /// Per-dimension utilization ceiling min δ / δ^i imposed by a shared
    /// radius of min δ.
    pub srad_util_ceiling: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub coverage: Vec<MappingCoverage>,
}

pub fn cmd_geometry(
    spec: &ConstraintSpec,
    a_prev: &[f64],
    mappings: &[Mapping],
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<GeometryReport> {
    spec.check_command(a_prev)
        .context("previous action must be finite and inside the position box")?;
    let min_d = spec.min_delta();
    let ceilings = spec.delta().iter().map(|&d| min_d / d).collect();

    let mut coverage = Vec::with_capacity(mappings.len());
    for &m in mappings {
        // Every mapping sees the same latent draws so differences in
        // coverage come from the map alone.
        let mut rng = seeded_stream(seed, 0);
        let est = mc_coverage(|u| m.apply(u, a_prev, spec), spec, a_prev, n, &mut rng)?;
        coverage.push(MappingCoverage {
            mapping: m.name().to_string(),
            coverage: est.coverage,
            cells_hit: est.cells_hit,
            cells_total: est.cells_total,
            grid: est.grid,
            degenerate_dims: est.degenerate_dims,
        });
    }

    let report = GeometryReport {
        delta: spec.delta().to_vec(),
        a_min: spec.a_min().to_vec(),
        a_max: spec.a_max().to_vec(),
        a_prev: a_prev.to_vec(),
        kappa: spec.kappa(),
        volume_ratio: volume_ratio(spec),
        srad_util_ceiling: ceilings,
        samples: n,
        seed,
        coverage,
    };
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("geometry.json");
    write_config_json(&path, &report)?;
    println!("volume_ratio = {:.6}  kappa = {:.4}", report.volume_ratio, report.kappa);
    for c in &report.coverage {
        println!("{:<12} coverage = {:.4}", c.mapping, c.coverage);
    }
    println!("wrote {}", path.display());
    Ok(report)
}
