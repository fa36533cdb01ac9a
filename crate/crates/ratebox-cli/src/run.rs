//! Executes one training run and persists its artifacts. Everything a run
//! writes is deterministic given config and seed, except run.log, which is
//! the only file carrying wall-clock timestamps.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use ratebox::envs::SinTracker;
use ratebox::learner::{save_checkpoint, seeded_stream, Learner, TrainError};
use ratebox::maps::Mapping;
use ratebox::metrics::{self, RunRecord};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub struct RunOutcome {
    pub dir: PathBuf,
    pub seed: u64,
    pub mapping: Mapping,
    pub records: Vec<RunRecord>,
    pub bound_violations: u64,
}

pub fn run_dir_name(cfg: &RunConfig, seed: u64) -> String {
    format!(
        "{}-{}-s{}",
        cfg.learner.mapping, cfg.learner.backbone, seed
    )
}

fn log_line(log: &mut File, msg: &str) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    // best effort: a failed log write must not kill the run
    let _ = writeln!(log, "ts={ts:.3} {msg}");
}

pub fn execute_run(cfg: &RunConfig, seed: u64, out_root: &Path) -> Result<RunOutcome> {
    let dir = out_root.join(run_dir_name(cfg, seed));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create run directory {}", dir.display()))?;
    // Persist the effective config with this run's seed so the directory
    // is self-describing for eval and report.
    let mut persisted = cfg.clone();
    persisted.learner.seeds = vec![seed];
    metrics::write_config_json(&dir.join("config.json"), &persisted)?;
    let mut log = File::create(dir.join("run.log"))?;
    log_line(
        &mut log,
        &format!(
            "start mapping={} backbone={} seed={seed} steps={}",
            cfg.learner.mapping, cfg.learner.backbone, cfg.learner.total_steps
        ),
    );

    let train_env = SinTracker::new(cfg.tracker.clone(), seeded_stream(seed, 0));
    let eval_env = SinTracker::new(cfg.tracker.clone(), seeded_stream(seed, 4));
    let mut learner = Learner::new(cfg.learner.clone(), train_env, eval_env, seed)?;

    let latest = dir.join("latest.ckpt");
    let train_result = {
        let log = &mut log;
        learner.train_with(|rec, ck| {
            log_line(
                log,
                &format!(
                    "eval step={} return={:.4} std={:.4} cvr={} util_l1={:.4}",
                    rec.step, rec.mean_return, rec.return_std, rec.cvr, rec.util_l1
                ),
            );
            if let Err(e) = save_checkpoint(&latest, ck) {
                log_line(log, &format!("checkpoint write failed: {e}"));
            }
        })
    };
    if let Err(e) = &train_result {
        let diag = match e {
            TrainError::NonFiniteLoss { what, step } => format!(
                "abort: {what} loss went non-finite at step {step} (diverged optimization)"
            ),
            other => format!("abort: {other}"),
        };
        log_line(&mut log, &diag);
        eprintln!("{}: {diag}", dir.display());
    }
    train_result?;

    metrics::write_eval_csv(&dir.join("eval.csv"), learner.records())?;
    metrics::write_actions_csv(&dir.join("actions.csv"), learner.retained_actions())?;
    save_checkpoint(&dir.join("final.ckpt"), &learner.checkpoint())?;

    if cfg.learner.mapping == Mapping::SradStrict {
        log_ceiling_check(&mut log, &learner);
    }
    log_line(
        &mut log,
        &format!(
            "done records={} bound_violations={}",
            learner.records().len(),
            learner.bound_violations()
        ),
    );

    Ok(RunOutcome {
        dir,
        seed,
        mapping: cfg.learner.mapping,
        records: learner.records().to_vec(),
        bound_violations: learner.bound_violations(),
    })
}

/// A shared radius of min δ caps each dimension's utilization at
/// min δ/δ^i; log whether the run's logs respect that geometry.
fn log_ceiling_check(log: &mut File, learner: &Learner<SinTracker>) {
    let spec = learner.spec();
    let ceilings: Vec<f64> = spec.delta().iter().map(|&d| spec.min_delta() / d).collect();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut ok = true;
    for rec in learner.records() {
        for (i, (&u, &c)) in rec.util_per_dim.iter().zip(&ceilings).enumerate() {
            let excess = u - c;
            worst_excess = worst_excess.max(excess);
            if excess > 1e-9 {
                ok = false;
                log_line(
                    log,
                    &format!(
                        "ceiling violation step={} dim={i} util={u:.6} ceiling={c:.6}",
                        rec.step
                    ),
                );
            }
        }
    }
    log_line(
        log,
        &format!(
            "srad-strict utilization ceilings {:?}: {} (worst excess {worst_excess:.3e})",
            ceilings,
            if ok { "respected" } else { "violated" }
        ),
    );
}
