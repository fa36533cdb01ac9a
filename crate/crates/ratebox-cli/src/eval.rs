//! Re-evaluates a finished run from its checkpoint: deterministic episodes
//! on a fresh evaluation environment, summarized in eval_report.json.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use ratebox::envs::SinTracker;
use ratebox::learner::{load_checkpoint, seeded_stream, Learner};
use ratebox::metrics::write_config_json;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub run: String,
    pub checkpoint: String,
    pub step: u64,
    pub seed: u64,
    pub episodes: u32,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub return_std: f64,
}

pub fn cmd_eval(run_dir: &Path, episodes: Option<u32>) -> Result<EvalReport> {
    let config_path = run_dir.join("config.json");
    let text = std::fs::read_to_string(&config_path)
        .with_context(|| format!("cannot read {}", config_path.display()))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", config_path.display()))?;
    if let Some(n) = episodes {
        cfg.learner.eval_episodes = n;
    }
    cfg.validate()?;
    let seed = cfg.learner.seeds[0];

    let ck_path = ["final.ckpt", "latest.ckpt"]
        .iter()
        .map(|f| run_dir.join(f))
        .find(|p| p.is_file());
    let Some(ck_path) = ck_path else {
        bail!("no final.ckpt or latest.ckpt in {}", run_dir.display());
    };
    let ck = load_checkpoint(&ck_path)?;

    let train_env = SinTracker::new(cfg.tracker.clone(), seeded_stream(seed, 0));
    let eval_env = SinTracker::new(cfg.tracker.clone(), seeded_stream(seed, 4));
    let mut learner = Learner::new(cfg.learner.clone(), train_env, eval_env, seed)?;
    learner.restore(&ck)?;

    let returns = learner.evaluate()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let report = EvalReport {
        run: run_dir.display().to_string(),
        checkpoint: ck_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        step: ck.step,
        seed,
        episodes: returns.len() as u32,
        returns,
        mean_return: mean,
        return_std: var.sqrt(),
    };
    write_config_json(&run_dir.join("eval_report.json"), &report)?;
    println!(
        "{} @ step {}: mean return {:.4} ± {:.4} over {} episodes",
        report.run, report.step, report.mean_return, report.return_std, report.episodes
    );
    Ok(report)
}
