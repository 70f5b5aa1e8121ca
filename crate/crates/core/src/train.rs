//! The outer training loop: environment interaction interleaved with learner
//! updates, periodic deterministic evaluation, run persistence, resumption
//! and learning-curve export.
//!
//! A run directory holds
//!
//! * `config.json`: the [`TrainConfig`] snapshot,
//! * `metrics.jsonl`: one [`StepRecord`] per gradient step,
//! * `evals.jsonl`: one [`EvalRecord`] per evaluation,
//! * `checkpoints/step_<N>/`: resumable snapshots,
//! * `final.bin` / `final.json`: the trained agent,
//! * `failure/`: the offending batch and agent if an update turned non-finite.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ActMode, SacAgent, SacConfig, UpdateMetrics};
use crate::env::{make_env, ActionScaler, Env, EnvSnapshot};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::policy::SquashedGaussianPolicy;
use crate::replay::{Batch, ReplayBuffer, SharedReplayBuffer, Transition};

/// Number of trailing steps per evaluation episode summarized by
/// [`EvalSummary::tail_mean_reward`].
pub const EVAL_TAIL_STEPS: usize = 100;

/// Header of the learning-curve CSV.
pub const CURVE_HEADER: &str = "env_step,mean_return,min_return,max_return,alpha,entropy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    /// Environment parameter overrides; `null` keeps the defaults.
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Complete description of a training run. Unknown JSON keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub total_env_steps: usize,
    /// Initial steps taken with uniformly random actions before any update.
    pub warmup_steps: usize,
    pub env_steps_per_iteration: usize,
    pub gradient_steps_per_iteration: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Multiplier applied to rewards before they enter the replay buffer.
    /// Evaluation returns are always reported in the environment's units.
    pub reward_scale: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_alpha: f64,
    /// Entropy target in nats; `−dim(A)` when absent.
    pub entropy_target: Option<f64>,
    /// Constant temperature, which disables temperature learning.
    pub fixed_alpha: Option<f64>,
    pub initial_alpha: f64,
    pub hidden_sizes: Vec<usize>,
    pub twin_critics: bool,
    pub grad_clip: Option<f64>,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Seed of the first evaluation episode; episode `i` uses `eval_seed + i`.
    pub eval_seed: u64,
    pub seed: u64,
    /// Collect with a separate thread of control (not reproducible).
    pub async_collection: bool,
    /// Write a resumable checkpoint every this many env steps.
    pub checkpoint_interval: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig {
                name: "point-mass-2d".into(),
                params: serde_json::Value::Null,
            },
            total_env_steps: 1_000_000,
            warmup_steps: 10_000,
            env_steps_per_iteration: 1,
            gradient_steps_per_iteration: 1,
            batch_size: 256,
            replay_capacity: 1_000_000,
            reward_scale: 1.0,
            gamma: 0.99,
            tau: 0.005,
            lr_critic: 3e-4,
            lr_actor: 3e-4,
            lr_alpha: 3e-4,
            entropy_target: None,
            fixed_alpha: None,
            initial_alpha: 1.0,
            hidden_sizes: vec![256, 256],
            twin_critics: true,
            grad_clip: None,
            eval_interval: 1000,
            eval_episodes: 10,
            eval_seed: 1_000_000,
            seed: 0,
            async_collection: false,
            checkpoint_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("training config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("total_env_steps", self.total_env_steps),
            ("env_steps_per_iteration", self.env_steps_per_iteration),
            ("gradient_steps_per_iteration", self.gradient_steps_per_iteration),
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.warmup_steps > self.total_env_steps {
            return Err(Error::Config("warmup_steps exceeds total_env_steps".into()));
        }
        if self.checkpoint_interval == Some(0) {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        if self.entropy_target.is_some() && self.fixed_alpha.is_some() {
            return Err(Error::Config(
                "entropy_target and fixed_alpha are mutually exclusive".into(),
            ));
        }
        if self.async_collection && self.checkpoint_interval.is_some() {
            return Err(Error::Config("checkpoints are only written in single-threaded mode".into()));
        }
        self.sac_config(1).validate()
    }

    /// Learner settings for an action space of dimension `action_dim`.
    pub fn sac_config(&self, action_dim: usize) -> SacConfig {
        SacConfig {
            gamma: self.gamma,
            tau: self.tau,
            lr_critic: self.lr_critic,
            lr_actor: self.lr_actor,
            lr_alpha: self.lr_alpha,
            entropy_target: self.entropy_target.unwrap_or(-(action_dim as f64)),
            fixed_alpha: self.fixed_alpha,
            initial_alpha: self.initial_alpha,
            hidden_sizes: self.hidden_sizes.clone(),
            twin_critics: self.twin_critics,
            grad_clip: self.grad_clip,
            adam: AdamConfig::default(),
        }
    }
}

/// Learner metrics of one gradient step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Environment steps collected when the update ran.
    pub env_step: usize,
    #[serde(flatten)]
    pub metrics: UpdateMetrics,
}

/// Result of deterministic evaluation rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub mean_length: f64,
    /// Mean per-step reward over the last [`EVAL_TAIL_STEPS`] steps of each
    /// episode, averaged over episodes.
    pub tail_mean_reward: f64,
    /// Mean `−log π` of one policy sample at every visited state.
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_step: usize,
    #[serde(flatten)]
    pub summary: EvalSummary,
    pub alpha: f64,
}

/// Everything a run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// True when transitions came from a concurrent collector, in which case
    /// the run is not reproducible.
    pub async_collection: bool,
    pub metrics: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Checkpoint directories written, relative to the run directory.
    pub checkpoints: Vec<String>,
}

impl RunRecord {
    fn new(config: TrainConfig) -> Self {
        Self {
            async_collection: config.async_collection,
            config,
            metrics: Vec::new(),
            evals: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    /// Reads a run directory written by [`train`].
    pub fn load(dir: &Path) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
        let mut record = Self::new(config);
        record.metrics = read_jsonl(&dir.join("metrics.jsonl"))?;
        record.evals = read_jsonl(&dir.join("evals.jsonl"))?;
        let ckpt_dir = dir.join("checkpoints");
        if ckpt_dir.is_dir() {
            let mut names: Vec<(usize, String)> = fs::read_dir(&ckpt_dir)?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    let step = name.strip_prefix("step_")?.parse().ok()?;
                    Some((step, format!("checkpoints/{name}")))
                })
                .collect();
            names.sort();
            record.checkpoints = names.into_iter().map(|(_, n)| n).collect();
        }
        Ok(record)
    }

    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// Mean batch entropy estimate over gradient steps taken in the final
    /// quarter of the run's environment steps.
    pub fn final_quartile_entropy(&self) -> Option<f64> {
        let cutoff = self.config.total_env_steps - self.config.total_env_steps / 4;
        let tail: Vec<f64> = self
            .metrics
            .iter()
            .filter(|m| m.env_step > cutoff)
            .map(|m| m.metrics.entropy())
            .collect();
        if tail.is_empty() {
            None
        } else {
            Some(tail.iter().sum::<f64>() / tail.len() as f64)
        }
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes the learning curve as CSV, one row per evaluation in env-step
/// order, with every number printed in shortest round-trip form.
pub fn emit_curves(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CURVE_HEADER}")?;
    for e in &record.evals {
        let s = &e.summary;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.env_step, s.mean_return, s.min_return, s.max_return, e.alpha, s.entropy
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Deterministic-action rollouts of `episodes` episodes seeded
/// `seed, seed + 1, ...`. The agent is not modified.
pub fn evaluate(agent: &SacAgent, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let scaler = ActionScaler::new(env.spec());
    let mut entropy_rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut returns, mut lengths, mut tails) = (Vec::new(), 0usize, 0.0);
    let (mut entropy_sum, mut visited) = (0.0, 0usize);
    for ep in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(ep as u64));
        let mut rewards = Vec::new();
        loop {
            entropy_sum -= agent.act(&obs, ActMode::Stochastic, &mut entropy_rng)?.log_prob;
            visited += 1;
            let unit = agent.act(&obs, ActMode::Deterministic, &mut entropy_rng)?.action;
            let out = env.step(&scaler.to_env(&unit))?;
            rewards.push(out.reward);
            obs = out.observation;
            if out.terminal || out.truncated {
                break;
            }
        }
        let tail = &rewards[rewards.len().saturating_sub(EVAL_TAIL_STEPS)..];
        tails += tail.iter().sum::<f64>() / tail.len() as f64;
        lengths += rewards.len();
        returns.push(rewards.iter().sum::<f64>());
    }
    let n = episodes as f64;
    Ok(EvalSummary {
        mean_return: returns.iter().sum::<f64>() / n,
        min_return: returns.iter().copied().fold(f64::INFINITY, f64::min),
        max_return: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_length: lengths as f64 / n,
        tail_mean_reward: tails / n,
        entropy: entropy_sum / visited as f64,
    })
}

/// Uniform action strictly inside `(−1, 1)^D`.
fn uniform_action<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| loop {
            let a: f64 = rng.gen_range(-1.0..1.0);
            if a > -1.0 {
                break a;
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    /// `u128` word position, as a decimal string.
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn rebuild(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(
            self.word_pos
                .parse()
                .map_err(|_| Error::Format(format!("bad rng word position {:?}", self.word_pos)))?,
        );
        Ok(rng)
    }
}

/// Resumable loop state beyond the agent and the replay buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LoopState {
    config: TrainConfig,
    step: usize,
    observation: Vec<f64>,
    env: EnvSnapshot,
    explore_rng: RngState,
    update_rng: RngState,
    episode_rng: RngState,
    metrics_len: usize,
    evals_len: usize,
    checkpoints: Vec<String>,
}

/// Appends records to the run directory as they are produced.
struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
    evals: BufWriter<File>,
}

impl RunWriter {
    /// Creates the run directory and writes the config plus any prefix of
    /// records carried over from a resumed run.
    fn create(dir: &Path, record: &RunRecord) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&record.config)?)?;
        let mut w = Self {
            dir: dir.to_path_buf(),
            metrics: BufWriter::new(File::create(dir.join("metrics.jsonl"))?),
            evals: BufWriter::new(File::create(dir.join("evals.jsonl"))?),
        };
        for m in &record.metrics {
            w.metric(m)?;
        }
        for e in &record.evals {
            w.eval(e)?;
        }
        Ok(w)
    }

    fn metric(&mut self, m: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, m)?;
        self.metrics.write_all(b"\n")?;
        Ok(())
    }

    fn eval(&mut self, e: &EvalRecord) -> Result<()> {
        serde_json::to_writer(&mut self.evals, e)?;
        self.evals.write_all(b"\n")?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        self.evals.flush()?;
        Ok(())
    }
}

/// Writes the batch and agent that produced a non-finite update.
fn dump_failure(dir: &Path, agent: &SacAgent, batch: &Batch) -> Result<PathBuf> {
    let fail = dir.join("failure");
    fs::create_dir_all(&fail)?;
    let transitions: Vec<Transition> = (0..batch.len()).map(|i| batch.transition(i)).collect();
    fs::write(fail.join("batch.json"), serde_json::to_string_pretty(&transitions)?)?;
    agent.save(&fail.join("agent"))?;
    Ok(fail)
}

/// Single-threaded trainer state.
struct Trainer {
    config: TrainConfig,
    agent: SacAgent,
    replay: ReplayBuffer,
    env: Box<dyn Env>,
    eval_env: Box<dyn Env>,
    scaler: ActionScaler,
    explore_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    step: usize,
    observation: Vec<f64>,
    record: RunRecord,
    writer: Option<RunWriter>,
}

impl Trainer {
    fn new(config: TrainConfig, out: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let env = make_env(&config.env.name, &config.env.params)?;
        let spec = env.spec().clone();
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = SacAgent::new(spec.state_dim, spec.action_dim, config.sac_config(spec.action_dim), master.gen())?;
        let explore_rng = ChaCha8Rng::from_seed(master.gen());
        let update_rng = ChaCha8Rng::from_seed(master.gen());
        let mut episode_rng = ChaCha8Rng::from_seed(master.gen());
        let mut env = env;
        let observation = env.reset(episode_rng.gen());
        let record = RunRecord::new(config.clone());
        let writer = out.map(|d| RunWriter::create(d, &record)).transpose()?;
        Ok(Self {
            replay: ReplayBuffer::new(config.replay_capacity, spec.state_dim, spec.action_dim)?,
            eval_env: env.box_clone(),
            scaler: ActionScaler::new(&spec),
            config,
            agent,
            env,
            explore_rng,
            update_rng,
            episode_rng,
            step: 0,
            observation,
            record,
            writer,
        })
    }

    fn resume(checkpoint: &Path, out: Option<&Path>) -> Result<Self> {
        let state: LoopState = serde_json::from_str(&fs::read_to_string(checkpoint.join("state.json"))?)?;
        let run_dir = checkpoint
            .parent()
            .and_then(Path::parent)
            .ok_or_else(|| Error::Usage(format!("{} is not inside a run directory", checkpoint.display())))?;
        let mut record = RunRecord::load(run_dir)?;
        if record.metrics.len() < state.metrics_len || record.evals.len() < state.evals_len {
            return Err(Error::Format("run records are shorter than the checkpoint expects".into()));
        }
        record.config = state.config.clone();
        record.metrics.truncate(state.metrics_len);
        record.evals.truncate(state.evals_len);
        record.checkpoints = state.checkpoints.clone();
        let mut env = make_env(&state.config.env.name, &state.config.env.params)?;
        env.restore(&state.env)?;
        let spec = env.spec().clone();
        let agent = SacAgent::load(&checkpoint.join("agent"))?;
        let replay = ReplayBuffer::restore(BufReader::new(File::open(checkpoint.join("replay.bin"))?))?;
        let writer = out.map(|d| RunWriter::create(d, &record)).transpose()?;
        Ok(Self {
            eval_env: env.box_clone(),
            scaler: ActionScaler::new(&spec),
            agent,
            replay,
            env,
            explore_rng: state.explore_rng.rebuild()?,
            update_rng: state.update_rng.rebuild()?,
            episode_rng: state.episode_rng.rebuild()?,
            step: state.step,
            observation: state.observation,
            record,
            writer,
            config: state.config,
        })
    }

    fn collect_one(&mut self) -> Result<()> {
        let (action, pre_squash) = if self.step < self.config.warmup_steps {
            let a = uniform_action(self.agent.action_dim(), &mut self.explore_rng);
            let u = a.iter().map(|v| v.atanh()).collect();
            (a, u)
        } else {
            let s = self.agent.act(&self.observation, ActMode::Stochastic, &mut self.explore_rng)?;
            (s.action, s.pre_squash)
        };
        let out = self.env.step(&self.scaler.to_env(&action))?;
        self.replay.push(Transition {
            state: std::mem::take(&mut self.observation),
            action,
            pre_squash,
            reward: self.config.reward_scale * out.reward,
            next_state: out.observation.clone(),
            terminal: out.terminal,
        })?;
        self.step += 1;
        self.observation = if out.terminal || out.truncated {
            self.env.reset(self.episode_rng.gen())
        } else {
            out.observation
        };
        Ok(())
    }

    fn update_once(&mut self) -> Result<()> {
        let batch = self.replay.sample_tensors(self.config.batch_size, &mut self.update_rng)?;
        match self.agent.update_step(&batch, &mut self.update_rng) {
            Ok(metrics) => {
                let rec = StepRecord {
                    env_step: self.step,
                    metrics,
                };
                if let Some(w) = &mut self.writer {
                    w.metric(&rec)?;
                }
                self.record.metrics.push(rec);
                Ok(())
            }
            Err(err @ Error::Numerical { .. }) => {
                if let Some(w) = &mut self.writer {
                    w.flush()?;
                    let dir = dump_failure(&w.dir, &self.agent, &batch)?;
                    log::error!("non-finite update at env step {}; diagnostics in {}", self.step, dir.display());
                }
                Err(err)
            }
            Err(err) => Err(err),
        }
    }

    fn evaluate_now(&mut self) -> Result<()> {
        let summary = evaluate(
            &self.agent,
            self.eval_env.as_mut(),
            self.config.eval_episodes,
            self.config.eval_seed,
        )?;
        let rec = EvalRecord {
            env_step: self.step,
            summary,
            alpha: self.agent.alpha(),
        };
        log::info!(
            "step {}: return {:.4} [{:.4}, {:.4}], alpha {:.4}, entropy {:.4}",
            rec.env_step,
            rec.summary.mean_return,
            rec.summary.min_return,
            rec.summary.max_return,
            rec.alpha,
            rec.summary.entropy
        );
        if let Some(w) = &mut self.writer {
            w.eval(&rec)?;
        }
        self.record.evals.push(rec);
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<()> {
        let Some(w) = &mut self.writer else { return Ok(()) };
        w.flush()?;
        let rel = format!("checkpoints/step_{}", self.step);
        let dir = w.dir.join(&rel);
        fs::create_dir_all(&dir)?;
        self.agent.save(&dir.join("agent"))?;
        let mut spill = BufWriter::new(File::create(dir.join("replay.bin"))?);
        self.replay.spill(&mut spill)?;
        spill.flush()?;
        self.record.checkpoints.push(rel);
        let state = LoopState {
            config: self.config.clone(),
            step: self.step,
            observation: self.observation.clone(),
            env: self.env.snapshot(),
            explore_rng: RngState::capture(&self.explore_rng),
            update_rng: RngState::capture(&self.update_rng),
            episode_rng: RngState::capture(&self.episode_rng),
            metrics_len: self.record.metrics.len(),
            evals_len: self.record.evals.len(),
            checkpoints: self.record.checkpoints.clone(),
        };
        fs::write(dir.join("state.json"), serde_json::to_string_pretty(&state)?)?;
        Ok(())
    }

    fn run(mut self) -> Result<(SacAgent, RunRecord)> {
        let total = self.config.total_env_steps;
        while self.step < total {
            let before = self.step;
            for _ in 0..self.config.env_steps_per_iteration {
                if self.step == total {
                    break;
                }
                self.collect_one()?;
            }
            if self.step > self.config.warmup_steps {
                for _ in 0..self.config.gradient_steps_per_iteration {
                    self.update_once()?;
                }
            }
            let interval = self.config.eval_interval;
            if self.step / interval > before / interval || self.step == total {
                self.evaluate_now()?;
            }
            if let Some(every) = self.config.checkpoint_interval {
                if self.step / every > before / every && self.step < total {
                    self.checkpoint()?;
                }
            }
        }
        if self.record.evals.last().map(|e| e.env_step) != Some(self.step) {
            self.evaluate_now()?;
        }
        if let Some(w) = &mut self.writer {
            w.flush()?;
            self.agent.save(&w.dir.join("final"))?;
        }
        Ok((self.agent, self.record))
    }
}

/// Trains from scratch. With `out` set the run is persisted incrementally.
pub fn train(config: &TrainConfig, out: Option<&Path>) -> Result<(SacAgent, RunRecord)> {
    if config.async_collection {
        train_async(config, out)
    } else {
        Trainer::new(config.clone(), out)?.run()
    }
}

/// Continues a single-threaded run from `<run>/checkpoints/step_<N>`. The
/// records of the original run up to the checkpoint are carried into `out`.
pub fn resume(checkpoint: &Path, out: Option<&Path>) -> Result<(SacAgent, RunRecord)> {
    Trainer::resume(checkpoint, out)?.run()
}

/// Collector/learner split: a collector thread steps the environment with a
/// periodically refreshed copy of the actor and pushes into a shared replay
/// buffer, while the calling thread runs updates and evaluations.
fn train_async(config: &TrainConfig, out: Option<&Path>) -> Result<(SacAgent, RunRecord)> {
    config.validate()?;
    let env = make_env(&config.env.name, &config.env.params)?;
    let spec = env.spec().clone();
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = SacAgent::new(spec.state_dim, spec.action_dim, config.sac_config(spec.action_dim), master.gen())?;
    let mut explore_rng = ChaCha8Rng::from_seed(master.gen());
    let mut update_rng = ChaCha8Rng::from_seed(master.gen());
    let mut episode_rng = ChaCha8Rng::from_seed(master.gen());
    let replay = SharedReplayBuffer::new(ReplayBuffer::new(config.replay_capacity, spec.state_dim, spec.action_dim)?);
    let published = Arc::new(Mutex::new(agent.actor().clone()));
    let collected = Arc::new(AtomicUsize::new(0));
    let updates_done = Arc::new(AtomicUsize::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let mut record = RunRecord::new(config.clone());
    let mut writer = out.map(|d| RunWriter::create(d, &record)).transpose()?;
    let mut eval_env = env.box_clone();

    let per_iter = config.env_steps_per_iteration;
    let grad_steps = config.gradient_steps_per_iteration;
    // The collector may run ahead of the learner by this many env steps.
    let max_lead = per_iter.max(config.eval_interval);
    let collector = {
        let (replay, published, collected, updates_done, stop) =
            (replay.clone(), published.clone(), collected.clone(), updates_done.clone(), stop.clone());
        let cfg = config.clone();
        let mut env = env;
        std::thread::spawn(move || -> Result<()> {
            let scaler = ActionScaler::new(env.spec());
            let mut actor: SquashedGaussianPolicy = published.lock().unwrap_or_else(|p| p.into_inner()).clone();
            let mut obs = env.reset(episode_rng.gen());
            for step in 0..cfg.total_env_steps {
                while step > cfg.warmup_steps
                    && step - cfg.warmup_steps > updates_done.load(Ordering::Acquire) / grad_steps * per_iter + max_lead
                {
                    if stop.load(Ordering::Acquire) {
                        return Ok(());
                    }
                    std::thread::yield_now();
                }
                if step % per_iter == 0 {
                    actor = published.lock().unwrap_or_else(|p| p.into_inner()).clone();
                }
                let (action, pre_squash) = if step < cfg.warmup_steps {
                    let a = uniform_action(spec.action_dim, &mut explore_rng);
                    let u = a.iter().map(|v| v.atanh()).collect();
                    (a, u)
                } else {
                    let s = actor.sample_random(&obs, &mut explore_rng)?;
                    (s.action, s.pre_squash)
                };
                let out = env.step(&scaler.to_env(&action))?;
                replay.push(Transition {
                    state: std::mem::take(&mut obs),
                    action,
                    pre_squash,
                    reward: cfg.reward_scale * out.reward,
                    next_state: out.observation.clone(),
                    terminal: out.terminal,
                })?;
                collected.store(step + 1, Ordering::Release);
                obs = if out.terminal || out.truncated {
                    env.reset(episode_rng.gen())
                } else {
                    out.observation
                };
            }
            Ok(())
        })
    };

    let total = config.total_env_steps;
    // Updates the single-threaded loop would have made after `steps` env
    // steps: one batch per iteration boundary past the warmup.
    let target_updates = |steps: usize| {
        let mut boundaries = (steps / per_iter).saturating_sub(config.warmup_steps / per_iter);
        if steps == total && !total.is_multiple_of(per_iter) && total > config.warmup_steps {
            boundaries += 1;
        }
        boundaries * grad_steps
    };
    let mut last_eval_bucket = 0;
    let learner = (|| -> Result<()> {
        loop {
            let steps = collected.load(Ordering::Acquire);
            let mut progressed = false;
            while updates_done.load(Ordering::Acquire) < target_updates(steps) {
                let batch = replay.sample_tensors(config.batch_size, &mut update_rng)?;
                let metrics = match agent.update_step(&batch, &mut update_rng) {
                    Ok(m) => m,
                    Err(err) => {
                        if let Some(w) = &mut writer {
                            w.flush()?;
                            dump_failure(&w.dir, &agent, &batch)?;
                        }
                        return Err(err);
                    }
                };
                *published.lock().unwrap_or_else(|p| p.into_inner()) = agent.actor().clone();
                updates_done.fetch_add(1, Ordering::AcqRel);
                let rec = StepRecord { env_step: steps, metrics };
                if let Some(w) = &mut writer {
                    w.metric(&rec)?;
                }
                record.metrics.push(rec);
                progressed = true;
            }
            let bucket = steps / config.eval_interval;
            let finished = steps == total;
            if bucket > last_eval_bucket || (finished && record.evals.last().map(|e| e.env_step) != Some(total)) {
                last_eval_bucket = bucket;
                let summary = evaluate(&agent, eval_env.as_mut(), config.eval_episodes, config.eval_seed)?;
                let rec = EvalRecord {
                    env_step: steps,
                    summary,
                    alpha: agent.alpha(),
                };
                log::info!("step {} (async): return {:.4}", steps, rec.summary.mean_return);
                if let Some(w) = &mut writer {
                    w.eval(&rec)?;
                }
                record.evals.push(rec);
                progressed = true;
            }
            if finished && updates_done.load(Ordering::Acquire) >= target_updates(total) {
                return Ok(());
            }
            if !progressed {
                if collector.is_finished() && collected.load(Ordering::Acquire) < total {
                    return Ok(());
                }
                std::thread::yield_now();
            }
        }
    })();
    stop.store(true, Ordering::Release);
    let collected_result = collector
        .join()
        .map_err(|_| Error::Usage("collector thread panicked".into()))?;
    learner?;
    collected_result?;
    if let Some(w) = &mut writer {
        w.flush()?;
        agent.save(&w.dir.join("final"))?;
    }
    Ok((agent, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str) -> TrainConfig {
        TrainConfig {
            env: EnvConfig {
                name: name.into(),
                params: serde_json::json!({"max_episode_steps": 20}),
            },
            total_env_steps: 120,
            warmup_steps: 40,
            batch_size: 16,
            replay_capacity: 1000,
            hidden_sizes: vec![8, 8],
            eval_interval: 50,
            eval_episodes: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(TrainConfig::from_json(r#"{"total_env_steps": 10, "bogus": 1}"#).is_err());
        let cfg = TrainConfig::from_json(r#"{"env": {"name": "pendulum-swingup"}, "seed": 3}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert!(cfg.env.params.is_null());
        for bad in [
            TrainConfig { tau: 0.0, ..tiny("point-mass-2d") },
            TrainConfig { gamma: 1.0, ..tiny("point-mass-2d") },
            TrainConfig { batch_size: 0, ..tiny("point-mass-2d") },
            TrainConfig { warmup_steps: 500, ..tiny("point-mass-2d") },
            TrainConfig {
                entropy_target: Some(-1.0),
                fixed_alpha: Some(0.1),
                ..tiny("point-mass-2d")
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn warmup_only_run_makes_no_updates() {
        let cfg = TrainConfig {
            total_env_steps: 40,
            ..tiny("point-mass-2d")
        };
        let mut t = Trainer::new(cfg, None).unwrap();
        while t.step < 40 {
            t.collect_one().unwrap();
        }
        assert_eq!(t.replay.len(), 40);
        let (_, rec) = train(&TrainConfig { total_env_steps: 40, ..tiny("point-mass-2d") }, None).unwrap();
        assert!(rec.metrics.is_empty());
        assert_eq!(rec.evals.len(), 1);
    }

    #[test]
    fn evals_are_strictly_increasing_and_end_at_the_last_step() {
        let (_, rec) = train(&tiny("pendulum-swingup"), None).unwrap();
        let steps: Vec<usize> = rec.evals.iter().map(|e| e.env_step).collect();
        assert_eq!(steps, vec![50, 100, 120]);
        assert_eq!(rec.metrics.len(), 80);
        assert_eq!(rec.metrics[0].env_step, 41);
    }

    #[test]
    fn fixed_temperature_is_never_mutated() {
        let (agent, rec) = train(
            &TrainConfig {
                fixed_alpha: Some(0.05),
                ..tiny("point-mass-2d")
            },
            None,
        )
        .unwrap();
        assert_eq!(agent.log_alpha(), 0.05f64.ln());
        assert!(rec.metrics.iter().all(|m| m.metrics.alpha == 0.05f64.ln().exp()));
    }

    #[test]
    fn evaluation_is_reproducible_and_bounded() {
        let mut env = make_env("pendulum-swingup", &serde_json::Value::Null).unwrap();
        let spec = env.spec().clone();
        let agent = SacAgent::new(3, 1, TrainConfig::default().sac_config(1), 4).unwrap();
        let a = evaluate(&agent, env.as_mut(), 1, 7).unwrap();
        let b = evaluate(&agent, env.as_mut(), 1, 7).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = spec.reward_bounds;
        let steps = spec.max_episode_steps as f64;
        assert!(a.mean_return >= lo * steps && a.mean_return <= hi * steps);
        assert!(matches!(evaluate(&agent, env.as_mut(), 0, 7), Err(Error::Usage(_))));
    }

    #[test]
    fn curves_are_deterministic_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny("multigoal-2d");
        let (_, r1) = train(&cfg, Some(&dir.path().join("a"))).unwrap();
        let (_, r2) = train(&cfg, Some(&dir.path().join("b"))).unwrap();
        assert_eq!(r1, r2);
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_curves(&r1, &p1).unwrap();
        emit_curves(&RunRecord::load(&dir.path().join("b")).unwrap(), &p2).unwrap();
        let text = fs::read_to_string(&p1).unwrap();
        assert_eq!(text, fs::read_to_string(&p2).unwrap());
        assert_eq!(text.lines().count(), 1 + r1.evals.len());
        assert_eq!(text.lines().next().unwrap(), CURVE_HEADER);
        let empty = RunRecord::new(cfg);
        emit_curves(&empty, &p1).unwrap();
        assert_eq!(fs::read_to_string(&p1).unwrap(), format!("{CURVE_HEADER}\n"));
        assert!(emit_curves(&r1, &dir.path().join("missing/x.csv")).is_err());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_interval: Some(70),
            ..tiny("point-mass-2d")
        };
        let (agent, full) = train(&cfg, Some(&dir.path().join("full"))).unwrap();
        assert_eq!(full.checkpoints, vec!["checkpoints/step_70".to_string()]);
        let (resumed_agent, resumed) =
            resume(&dir.path().join("full/checkpoints/step_70"), Some(&dir.path().join("resumed"))).unwrap();
        assert_eq!(resumed_agent, agent);
        assert_eq!(resumed, full);
        let reloaded = RunRecord::load(&dir.path().join("resumed")).unwrap();
        assert_eq!((reloaded.metrics, reloaded.evals), (full.metrics, full.evals));
    }

    #[test]
    fn async_collection_trains_and_is_labelled() {
        let (_, rec) = train(
            &TrainConfig {
                async_collection: true,
                ..tiny("point-mass-2d")
            },
            None,
        )
        .unwrap();
        assert!(rec.async_collection);
        assert_eq!(rec.metrics.len(), 80);
        assert_eq!(rec.evals.last().unwrap().env_step, 120);
        assert!(rec.evals.windows(2).all(|w| w[0].env_step < w[1].env_step));
    }
}
