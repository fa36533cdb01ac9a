//! Command line driver for rate-limited control experiments: geometry
//! analysis, training runs, multi-seed sweeps, and offline re-evaluation.

mod config;
mod eval;
mod geometry;
mod run;
mod sweep;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use ratebox::maps::Mapping;
use std::collections::HashSet;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "ratebox",
    version,
    about = "Rate-limited action mapping experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config file; built-in defaults apply when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output root; defaults to $RATEBOX_OUT, then ./runs
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed or comma-separated seed list; defaults come from the config
    #[arg(long, value_name = "N[,N...]", value_delimiter = ',')]
    seed: Vec<u64>,
    /// Config override as key=value (repeatable); keys resolve as exact
    /// dotted paths, then as learner fields, then as tracker fields
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a geometry report: volume ratio, utilization ceilings, and
    /// Monte-Carlo coverage of the feasible box per mapping
    Geometry {
        #[command(flatten)]
        common: Common,
        /// Previous action; defaults to the midpoint of the position box
        #[arg(long, value_name = "X[,X...]", value_delimiter = ',', allow_hyphen_values = true)]
        a_prev: Option<Vec<f64>>,
        /// Mappings to analyze; defaults to all of them
        #[arg(long, value_name = "M[,M...]", value_delimiter = ',')]
        mappings: Vec<Mapping>,
    },
    /// Train one run per seed, each in its own output directory
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the mapping x seed cross-product and write a comparison table
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Mappings to compare; at least two
        #[arg(long, value_name = "M[,M...]", value_delimiter = ',')]
        mappings: Vec<Mapping>,
        /// Max concurrent child runs
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Re-evaluate a finished run from its checkpoint
    Eval {
        /// Run directory containing config.json and a checkpoint
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Episode count; defaults to the run's eval_episodes
        #[arg(long, value_name = "N")]
        episodes: Option<u32>,
    },
    /// Rebuild the comparison table from run directories already on disk
    Report {
        /// Directory containing run subdirectories; defaults like --out
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("RATEBOX_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("./runs"))
}

fn check_distinct(seeds: &[u64]) -> Result<()> {
    let unique: HashSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        bail!("seed list contains duplicates: {seeds:?}");
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Geometry {
            common,
            a_prev,
            mappings,
        } => {
            let cfg = config::load(common.config.as_deref(), &common.set)?;
            let spec = &cfg.tracker.spec;
            let a_prev = a_prev.unwrap_or_else(|| {
                spec.a_min()
                    .iter()
                    .zip(spec.a_max())
                    .map(|(lo, hi)| 0.5 * (lo + hi))
                    .collect()
            });
            let mappings = if mappings.is_empty() {
                Mapping::ALL.to_vec()
            } else {
                mappings
            };
            let seed = common.seed.first().copied().unwrap_or(cfg.learner.seeds[0]);
            geometry::cmd_geometry(
                spec,
                &a_prev,
                &mappings,
                cfg.geometry_samples,
                seed,
                &out_root(common.out),
            )?;
        }
        Cmd::Train { common } => {
            let cfg = config::load(common.config.as_deref(), &common.set)?;
            let seeds = if common.seed.is_empty() {
                vec![cfg.learner.seeds[0]]
            } else {
                common.seed.clone()
            };
            check_distinct(&seeds)?;
            let root = out_root(common.out);
            for &seed in &seeds {
                let outcome = run::execute_run(&cfg, seed, &root)?;
                let last = outcome.records.last();
                println!(
                    "{}: mapping={} seed={} records={} final return {} bound_violations={}",
                    outcome.dir.display(),
                    outcome.mapping,
                    outcome.seed,
                    outcome.records.len(),
                    last.map(|r| format!("{:.4}", r.mean_return))
                        .unwrap_or_else(|| "na".to_string()),
                    outcome.bound_violations
                );
            }
        }
        Cmd::Sweep {
            common,
            mappings,
            workers,
        } => {
            let cfg = config::load(common.config.as_deref(), &common.set)?;
            let seeds = if common.seed.is_empty() {
                cfg.learner.seeds.clone()
            } else {
                common.seed.clone()
            };
            check_distinct(&seeds)?;
            let groups =
                sweep::cmd_sweep(&cfg, &seeds, &mappings, workers, &out_root(common.out))?;
            let failed: usize = groups
                .iter()
                .flat_map(|g| &g.seeds)
                .filter(|s| s.outcome.is_err())
                .count();
            if failed > 0 {
                bail!("{failed} child run(s) failed; see sweep.csv failure markers");
            }
        }
        Cmd::Eval { run, episodes } => {
            eval::cmd_eval(&run, episodes)?;
        }
        Cmd::Report { out } => {
            sweep::cmd_report(&out_root(out))?;
        }
    }
    Ok(())
}
