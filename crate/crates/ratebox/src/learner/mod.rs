//! Off-policy training on the rate-augmented state.
//!
//! Every state the agent sees is (obs, a_prev): appending the previously
//! executed command makes the rate-limited problem Markovian, and every
//! mapping then decides how the latent policy output turns into the next
//! command. The loop is the standard interleaved one: act, store, then a
//! critic step (and actor/temperature step) per environment step once the
//! buffer is warm.
//!
//! RNG discipline: one base seed fans out into fixed streams so runs are
//! bit-reproducible on a single worker and seeds never interact. Stream 0
//! drives the training env, 1 network init, 2 all policy sampling (acting
//! and actor updates), 3 replay batch indices, 4 the evaluation env, 5
//! target-policy noise (SAC next-action draws, TD3 smoothing).

mod replay;
mod update;

pub use replay::{augment, AugmentedState, ReplayBuffer, Transition};
pub use update::{actor_update, critic_update, ActorStats, CriticStats, Nets};

use crate::envs::Env;
use crate::geometry::{ConstraintSpec, GeometryError};
use crate::maps::Mapping;
use crate::metrics::{self, ActionLog, RunRecord};
use crate::nn::{self, Mlp, NnError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Sac,
    Td3,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Sac => "sac",
            Backbone::Td3 => "td3",
        })
    }
}

impl std::str::FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sac" => Ok(Backbone::Sac),
            "td3" => Ok(Backbone::Td3),
            other => Err(format!("unknown backbone '{other}' (expected sac or td3)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} loss at step {step}")]
    NonFiniteLoss { what: &'static str, step: u64 },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("corrupt checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Hyperparameters for one training run. Serde defaults let config files
/// state only what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub backbone: Backbone,
    pub mapping: Mapping,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub alpha_lr: f64,
    pub lambda_base: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub learning_starts: u64,
    pub train_freq: u64,
    pub grad_steps: u32,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: u32,
    pub seeds: Vec<u64>,
    /// Shared ℓ2 rate budget on top of the per-dimension one (dd-srad
    /// only). On for training; geometry probes switch it off.
    pub apply_l2_clip: bool,
    /// Defaults to −d when unset.
    pub target_entropy: Option<f64>,
    pub td3_explore_sigma: f64,
    pub td3_smoothing_sigma: f64,
    pub td3_smoothing_clip: f64,
    pub td3_policy_delay: u32,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            backbone: Backbone::Sac,
            mapping: Mapping::DdSrad,
            hidden: vec![256, 256],
            lr: 3e-4,
            alpha_lr: 3e-4,
            lambda_base: 0.005,
            gamma: 0.99,
            tau: 0.005,
            batch: 256,
            buffer_capacity: 1_000_000,
            learning_starts: 10_000,
            train_freq: 1,
            grad_steps: 1,
            total_steps: 200_000,
            eval_every: 5_000,
            eval_episodes: 5,
            seeds: vec![12345, 22345, 32345, 42345, 52345],
            apply_l2_clip: true,
            target_entropy: None,
            td3_explore_sigma: 0.1,
            td3_smoothing_sigma: 0.2,
            td3_smoothing_clip: 0.5,
            td3_policy_delay: 2,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.hidden.is_empty() {
            return bad("need at least one hidden layer".into());
        }
        if !(self.lr > 0.0 && self.alpha_lr > 0.0) {
            return bad(format!("learning rates must be positive, got {} / {}", self.lr, self.alpha_lr));
        }
        if self.lambda_base < 0.0 {
            return bad(format!("lambda_base must be nonnegative, got {}", self.lambda_base));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad(format!(
                "need 0 < batch <= buffer_capacity, got {} / {}",
                self.batch, self.buffer_capacity
            ));
        }
        if self.train_freq == 0 || self.grad_steps == 0 {
            return bad("train_freq and grad_steps must be positive".into());
        }
        if self.total_steps == 0 || self.eval_every == 0 {
            return bad("total_steps and eval_every must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("need at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.td3_policy_delay == 0 {
            return bad("td3_policy_delay must be positive".into());
        }
        if !(self.td3_explore_sigma >= 0.0
            && self.td3_smoothing_sigma >= 0.0
            && self.td3_smoothing_clip >= 0.0)
        {
            return bad("td3 noise scales must be nonnegative".into());
        }
        Ok(())
    }

    pub fn target_entropy_for(&self, d: usize) -> f64 {
        self.target_entropy.unwrap_or(-(d as f64))
    }
}

/// Derives the per-purpose RNG for `seed`; see the module docs for the
/// stream map.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Window {
    log: ActionLog,
    l2_clips: u64,
    steps: u64,
}

impl Window {
    fn new(d: usize) -> Window {
        Window {
            log: ActionLog::new(d),
            l2_clips: 0,
            steps: 0,
        }
    }
}

pub struct Learner<E: Env> {
    cfg: LearnerConfig,
    spec: ConstraintSpec,
    seed: u64,
    env: E,
    eval_env: E,
    nets: Nets,
    buffer: ReplayBuffer,
    action_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    step: u64,
    critic_updates: u64,
    obs: Vec<f64>,
    window: Window,
    retained: ActionLog,
    records: Vec<RunRecord>,
    bound_violations: u64,
}

impl<E: Env> Learner<E> {
    /// `env` and `eval_env` must be seeded by the caller (streams 0 and 4
    /// of the run seed, by convention).
    pub fn new(cfg: LearnerConfig, env: E, eval_env: E, seed: u64) -> Result<Self, TrainError> {
        cfg.validate()?;
        let spec = env.spec().clone();
        if eval_env.spec() != &spec {
            return Err(TrainError::BadConfig(
                "training and evaluation envs disagree on constraints".into(),
            ));
        }
        let d = spec.d();
        let mut init_rng = seeded_stream(seed, 1);
        let nets = Nets::new(env.obs_dim(), d, &cfg, &mut init_rng)?;
        let buffer = ReplayBuffer::new(
            spec.clone(),
            cfg.buffer_capacity,
            cfg.mapping.parameterized(),
        );
        let mut learner = Learner {
            buffer,
            nets,
            action_rng: seeded_stream(seed, 2),
            replay_rng: seeded_stream(seed, 3),
            target_rng: seeded_stream(seed, 5),
            step: 0,
            critic_updates: 0,
            obs: Vec::new(),
            window: Window::new(d),
            retained: ActionLog::new(d),
            records: Vec::new(),
            bound_violations: 0,
            cfg,
            spec,
            seed,
            env,
            eval_env,
        };
        learner.obs = learner.env.reset();
        Ok(learner)
    }

    pub fn cfg(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// Executed actions retained for the action log file (full density
    /// early, subsampled later).
    pub fn retained_actions(&self) -> &ActionLog {
        &self.retained
    }

    /// Total per-sample actor gradient bound failures across the whole run.
    pub fn bound_violations(&self) -> u64 {
        self.bound_violations
    }

    pub fn train(&mut self) -> Result<(), TrainError> {
        self.train_with(|_, _| {})
    }

    /// Runs the full schedule, invoking `on_eval` with each fresh record
    /// and a checkpoint of the current networks.
    pub fn train_with<F>(&mut self, mut on_eval: F) -> Result<(), TrainError>
    where
        F: FnMut(&RunRecord, &Checkpoint),
    {
        while self.step < self.cfg.total_steps {
            self.interact()?;
            let now = self.step;
            if now >= self.cfg.learning_starts
                && self.buffer.len() >= self.cfg.batch
                && now % self.cfg.train_freq == 0
            {
                for _ in 0..self.cfg.grad_steps {
                    self.update_once()?;
                }
            }
            if now % self.cfg.eval_every == 0 || now == self.cfg.total_steps {
                let record = self.evaluate_record()?;
                let ck = self.checkpoint();
                on_eval(&record, &ck);
                self.records.push(record);
            }
        }
        Ok(())
    }

    fn interact(&mut self) -> Result<(), TrainError> {
        let a_prev = self.env.a_prev().to_vec();
        let s = augment(self.obs.clone(), a_prev.clone(), &self.spec)?;
        let ev = self.act(&s, false);
        let out = self.env.step(&ev.executed);
        self.step += 1;

        let s_next = augment(out.obs.clone(), self.env.a_prev().to_vec(), &self.spec)?;
        self.buffer.insert(Transition {
            s,
            a: ev.action_var,
            r: out.reward,
            s_next,
            done: out.done,
        });

        let delta: Vec<f64> = ev
            .executed
            .iter()
            .zip(&a_prev)
            .map(|(a, p)| a - p)
            .collect();
        self.window.log.push(self.step, &delta, &ev.executed);
        self.window.steps += 1;
        if ev.l2_clipped {
            self.window.l2_clips += 1;
        }
        if metrics::action_log_retention(self.step) {
            self.retained.push(self.step, &delta, &ev.executed);
        }

        self.obs = if out.done { self.env.reset() } else { out.obs };
        Ok(())
    }

    fn act(&mut self, s: &AugmentedState, deterministic: bool) -> update::SampleEval {
        let x = update::state_matrix(&[s]);
        let raw = self.nets.actor.forward(&x);
        let mode = if deterministic {
            update::ActMode::Deterministic
        } else {
            update::ActMode::Stochastic
        };
        update::policy_eval(
            &raw,
            &[s.a_prev.as_slice()],
            &self.cfg,
            &self.spec,
            &mut self.action_rng,
            mode,
        )
        .pop()
        .expect("one state in, one action out")
    }

    fn update_once(&mut self) -> Result<(), TrainError> {
        let idx = self
            .buffer
            .sample_indices(&mut self.replay_rng, self.cfg.batch);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();

        critic_update(
            &mut self.nets,
            &batch,
            &self.cfg,
            &self.spec,
            &mut self.target_rng,
            self.step,
        )?;
        self.critic_updates += 1;
        nn::soft_update(&mut self.nets.q1_target, &self.nets.q1, self.cfg.tau as f32);
        nn::soft_update(&mut self.nets.q2_target, &self.nets.q2, self.cfg.tau as f32);

        let actor_due = match self.cfg.backbone {
            Backbone::Sac => true,
            Backbone::Td3 => self.critic_updates % self.cfg.td3_policy_delay as u64 == 0,
        };
        if actor_due {
            let stats = actor_update(
                &mut self.nets,
                &batch,
                &self.cfg,
                &self.spec,
                &mut self.action_rng,
                self.step,
            )?;
            self.bound_violations += stats.bound_violations as u64;
            nn::soft_update(
                &mut self.nets.actor_target,
                &self.nets.actor,
                self.cfg.tau as f32,
            );
        }
        Ok(())
    }

    /// Deterministic-policy rollouts on the held-out env; returns one
    /// undiscounted return per episode.
    pub fn evaluate(&mut self) -> Result<Vec<f64>, TrainError> {
        let mut returns = Vec::with_capacity(self.cfg.eval_episodes as usize);
        for _ in 0..self.cfg.eval_episodes {
            let mut obs = self.eval_env.reset();
            let mut ret = 0.0;
            loop {
                let s = augment(obs, self.eval_env.a_prev().to_vec(), &self.spec)?;
                let ev = self.eval_act(&s);
                let out = self.eval_env.step(&ev.executed);
                ret += out.reward;
                obs = out.obs;
                if out.done {
                    break;
                }
            }
            returns.push(ret);
        }
        Ok(returns)
    }

    fn eval_act(&mut self, s: &AugmentedState) -> update::SampleEval {
        let x = update::state_matrix(&[s]);
        let raw = self.nets.actor.forward(&x);
        update::policy_eval(
            &raw,
            &[s.a_prev.as_slice()],
            &self.cfg,
            &self.spec,
            &mut self.action_rng,
            update::ActMode::Deterministic,
        )
        .pop()
        .expect("one state in, one action out")
    }

    fn evaluate_record(&mut self) -> Result<RunRecord, TrainError> {
        let returns = self.evaluate()?;
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        // single-episode evals have no spread to report
        let cv = metrics::cv(&returns).unwrap_or(0.0);
        let w = &self.window.log;
        let record = RunRecord {
            step: self.step,
            seed: self.seed,
            mean_return: mean,
            return_std: var.sqrt(),
            cvr: metrics::cvr(w, &self.spec, metrics::CVR_TOL)?,
            util_l1: metrics::utilization_l1(w, &self.spec)?,
            util_per_dim: metrics::utilization_per_dim(w, &self.spec)?,
            cv,
            l2_clip_rate: self.window.l2_clips as f64 / self.window.steps as f64,
        };
        self.window = Window::new(self.spec.d());
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let named = |name: &str, net: &Mlp| NamedNet {
            name: name.to_string(),
            dims: net.dims(),
            params: net.to_flat(),
        };
        Checkpoint {
            step: self.step,
            log_alpha: self.nets.log_alpha,
            nets: vec![
                named("actor", &self.nets.actor),
                named("actor_target", &self.nets.actor_target),
                named("q1", &self.nets.q1),
                named("q2", &self.nets.q2),
                named("q1_target", &self.nets.q1_target),
                named("q2_target", &self.nets.q2_target),
            ],
        }
    }

    /// Loads network weights and temperature from a checkpoint. Optimizer
    /// moments are not checkpointed; restoring mid-run restarts them.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), TrainError> {
        let find = |name: &str| -> Result<Mlp, TrainError> {
            let n = ck
                .nets
                .iter()
                .find(|n| n.name == name)
                .ok_or_else(|| TrainError::BadCheckpoint(format!("missing net '{name}'")))?;
            Ok(Mlp::from_flat(&n.dims, &n.params)?)
        };
        let actor = find("actor")?;
        if actor.dims() != self.nets.actor.dims() {
            return Err(TrainError::BadCheckpoint(format!(
                "actor dims {:?} do not match this config's {:?}",
                actor.dims(),
                self.nets.actor.dims()
            )));
        }
        self.nets.actor = actor;
        self.nets.actor_target = find("actor_target")?;
        self.nets.q1 = find("q1")?;
        self.nets.q2 = find("q2")?;
        self.nets.q1_target = find("q1_target")?;
        self.nets.q2_target = find("q2_target")?;
        self.nets.log_alpha = ck.log_alpha;
        self.step = ck.step;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedNet {
    pub name: String,
    pub dims: Vec<usize>,
    pub params: Vec<f32>,
}

/// Network snapshot: a one-line JSON header describing each net followed
/// by the concatenated little-endian f32 payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub log_alpha: f64,
    pub nets: Vec<NamedNet>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    step: u64,
    log_alpha: f64,
    nets: Vec<CheckpointHeaderNet>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeaderNet {
    name: String,
    dims: Vec<usize>,
    len: usize,
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    let header = CheckpointHeader {
        step: ck.step,
        log_alpha: ck.log_alpha,
        nets: ck
            .nets
            .iter()
            .map(|n| CheckpointHeaderNet {
                name: n.name.clone(),
                dims: n.dims.clone(),
                len: n.params.len(),
            })
            .collect(),
    };
    let mut f = File::create(path)?;
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    for n in &ck.nets {
        let mut bytes = Vec::with_capacity(4 * n.params.len());
        for p in &n.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        f.write_all(&bytes)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| TrainError::BadCheckpoint(format!("bad header: {e}")))?;
    let mut nets = Vec::with_capacity(header.nets.len());
    for n in header.nets {
        let expect: usize = n.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if expect != n.len {
            return Err(TrainError::BadCheckpoint(format!(
                "net '{}' declares {} params but dims {:?} imply {expect}",
                n.name, n.len, n.dims
            )));
        }
        let mut bytes = vec![0u8; 4 * n.len];
        r.read_exact(&mut bytes).map_err(|e| {
            TrainError::BadCheckpoint(format!("truncated payload for '{}': {e}", n.name))
        })?;
        let params: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        nets.push(NamedNet {
            name: n.name,
            dims: n.dims,
            params,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(TrainError::BadCheckpoint(
            "trailing bytes after declared payload".into(),
        ));
    }
    Ok(Checkpoint {
        step: header.step,
        log_alpha: header.log_alpha,
        nets,
    })
}
