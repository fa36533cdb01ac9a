//! Multi-seed, multi-mapping comparison runs and their summary table.
//!
//! Aggregation convention: per (mapping, seed) run, the final evaluation
//! record supplies return and utilization, and the run-level violation
//! rate is the mean of the per-window rates. Across seeds the table
//! reports mean, population std, and percent CV of the final returns; with
//! a single surviving seed std is 0 and CV is marked "na".

use crate::config::RunConfig;
use crate::run::{execute_run, RunOutcome};
use anyhow::{bail, Result};
use ratebox::maps::Mapping;
use ratebox::metrics::{self, RunRecord};
use std::path::Path;

pub struct SeedResult {
    pub seed: u64,
    pub outcome: Result<Vec<RunRecord>, String>,
}

pub struct MappingGroup {
    pub mapping: Mapping,
    pub seeds: Vec<SeedResult>,
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    seeds: &[u64],
    mappings: &[Mapping],
    workers: usize,
    out_root: &Path,
) -> Result<Vec<MappingGroup>> {
    if mappings.len() < 2 {
        bail!(
            "sweep compares mappings and needs at least two, got {:?}",
            mappings.iter().map(|m| m.name()).collect::<Vec<_>>()
        );
    }
    if seeds.is_empty() {
        bail!("sweep needs at least one seed");
    }
    std::fs::create_dir_all(out_root)?;

    let jobs: Vec<(Mapping, u64)> = mappings
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()?;
    let results: Vec<(Mapping, u64, Result<RunOutcome, String>)> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(mapping, seed)| {
                let mut child = cfg.clone();
                child.learner.mapping = mapping;
                let outcome = execute_run(&child, seed, out_root).map_err(|e| format!("{e:#}"));
                (mapping, seed, outcome)
            })
            .collect()
    });

    let groups: Vec<MappingGroup> = mappings
        .iter()
        .map(|&m| MappingGroup {
            mapping: m,
            seeds: results
                .iter()
                .filter(|(rm, _, _)| *rm == m)
                .map(|(_, seed, out)| SeedResult {
                    seed: *seed,
                    outcome: out
                        .as_ref()
                        .map(|o| o.records.clone())
                        .map_err(|e| e.clone()),
                })
                .collect(),
        })
        .collect();

    write_table(&out_root.join("sweep.csv"), &groups)?;
    print_table(&groups);
    Ok(groups)
}

struct Row {
    mapping: String,
    seeds_ok: usize,
    seeds_total: usize,
    mean_return: Option<f64>,
    return_std: Option<f64>,
    cv: Option<f64>,
    cvr: Option<f64>,
    util_l1: Option<f64>,
    failures: String,
}

fn summarize(group: &MappingGroup) -> Row {
    let mut final_returns = Vec::new();
    let mut utils = Vec::new();
    let mut cvrs = Vec::new();
    let mut failures = Vec::new();
    for s in &group.seeds {
        match &s.outcome {
            Ok(records) => {
                if let Some(last) = records.last() {
                    final_returns.push(last.mean_return);
                    utils.push(last.util_l1);
                    let run_cvr =
                        records.iter().map(|r| r.cvr).sum::<f64>() / records.len() as f64;
                    cvrs.push(run_cvr);
                }
            }
            Err(e) => failures.push(format!("seed {}: {}", s.seed, e)),
        }
    }
    let n = final_returns.len();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (mean_return, return_std, cv) = if n == 0 {
        (None, None, None)
    } else {
        let m = mean(&final_returns);
        let var = final_returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n as f64;
        let cv = metrics::cv(&final_returns).ok();
        (Some(m), Some(var.sqrt()), cv)
    };
    Row {
        mapping: group.mapping.name().to_string(),
        seeds_ok: n,
        seeds_total: group.seeds.len(),
        mean_return,
        return_std,
        cv,
        cvr: if n == 0 {
            None
        } else {
            Some(cvrs.iter().cloned().fold(0.0, f64::max))
        },
        util_l1: if n == 0 { None } else { Some(mean(&utils)) },
        failures: failures.join("; "),
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "na".to_string(),
    }
}

pub fn write_table(path: &Path, groups: &[MappingGroup]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mapping",
        "seeds_ok",
        "seeds_total",
        "mean_return",
        "return_std",
        "cv_percent",
        "cvr",
        "util_l1",
        "failures",
    ])?;
    for g in groups {
        let r = summarize(g);
        w.write_record(&[
            r.mapping,
            r.seeds_ok.to_string(),
            r.seeds_total.to_string(),
            cell(r.mean_return),
            cell(r.return_std),
            cell(r.cv),
            cell(r.cvr),
            cell(r.util_l1),
            r.failures,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn print_table(groups: &[MappingGroup]) {
    println!(
        "{:<12} {:>5} {:>12} {:>11} {:>8} {:>9} {:>8}  failures",
        "mapping", "ok", "mean_return", "return_std", "cv%", "cvr", "util_l1"
    );
    for g in groups {
        let r = summarize(g);
        let f = |v: Option<f64>| match v {
            Some(x) => format!("{x:.3}"),
            None => "na".to_string(),
        };
        println!(
            "{:<12} {:>2}/{:<2} {:>12} {:>11} {:>8} {:>9} {:>8}  {}",
            r.mapping,
            r.seeds_ok,
            r.seeds_total,
            f(r.mean_return),
            f(r.return_std),
            f(r.cv),
            f(r.cvr),
            f(r.util_l1),
            r.failures
        );
    }
}

/// Rebuilds the comparison table from run directories already on disk.
pub fn cmd_report(root: &Path) -> Result<Vec<MappingGroup>> {
    let mut found: Vec<(Mapping, u64, Vec<RunRecord>)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let dir = entry?.path();
        let config = dir.join("config.json");
        let eval = dir.join("eval.csv");
        if !(config.is_file() && eval.is_file()) {
            continue;
        }
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)?;
        let records = metrics::read_eval_csv(&eval)?;
        let seed = records.first().map(|r| r.seed).unwrap_or(0);
        found.push((cfg.learner.mapping, seed, records));
    }
    if found.is_empty() {
        bail!("no run directories with config.json and eval.csv under {}", root.display());
    }
    found.sort_by_key(|(m, s, _)| (m.name(), *s));
    let mut groups: Vec<MappingGroup> = Vec::new();
    for (mapping, seed, records) in found {
        let res = SeedResult {
            seed,
            outcome: Ok(records),
        };
        match groups.last_mut() {
            Some(g) if g.mapping == mapping => g.seeds.push(res),
            _ => groups.push(MappingGroup {
                mapping,
                seeds: vec![res],
            }),
        }
    }
    write_table(&root.join("report.csv"), &groups)?;
    print_table(&groups);
    Ok(groups)
}
