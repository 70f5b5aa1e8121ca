//! Seedable continuous-control tasks.
//!
//! Each task implements [`Dynamics`]: a pure transition function plus an
//! initial-state sampler. [`EnvInstance`] wraps it with the episode
//! bookkeeping shared by all tasks (step counter, truncation, clipping of
//! out-of-bounds actions, reward-bound checks), and is used through the
//! object-safe [`Env`] trait.

mod multigoal;
mod pendulum;
mod point_mass;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use multigoal::{visitation_stats, MultiGoal, MultiGoalParams, VisitationStats};
pub use pendulum::{Pendulum, PendulumParams};
pub use point_mass::{lqr_reference, LqrController, PointMass, PointMassParams};

/// Names accepted by [`make_env`].
pub const ENV_NAMES: [&str; 3] = ["point-mass-2d", "pendulum-swingup", "multigoal-2d"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Per-dimension `(low, high)`.
    pub action_bounds: Vec<(f64, f64)>,
    pub max_episode_steps: usize,
    /// `(r_min, r_max)` over all reachable transitions.
    pub reward_bounds: (f64, f64),
    /// Integration step in seconds.
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Genuine termination.
    pub terminal: bool,
    /// Time limit reached without termination.
    pub truncated: bool,
}

/// Complete episode state, enough to continue a rollout bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub state: Vec<f64>,
    pub steps: usize,
    pub done: bool,
    pub started: bool,
}

/// A task's physics: pure functions of the internal state.
pub trait Dynamics: Clone + Send + 'static {
    fn spec(&self) -> EnvSpec;
    /// Length of the internal state vector.
    fn internal_dim(&self) -> usize;
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn observe(&self, state: &[f64]) -> Vec<f64>;
    /// Next state, reward and termination for an in-bounds action.
    fn transition(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool);
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; the initial state is a function of `seed` only.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one step. Out-of-bounds actions are clipped with a warning.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    fn observation(&self) -> Vec<f64>;
    fn snapshot(&self) -> EnvSnapshot;
    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()>;
    fn box_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Clone, Debug)]
pub struct EnvInstance<D: Dynamics> {
    dynamics: D,
    spec: EnvSpec,
    state: Vec<f64>,
    steps: usize,
    done: bool,
    started: bool,
}

impl<D: Dynamics> EnvInstance<D> {
    pub fn new(dynamics: D) -> Self {
        let spec = dynamics.spec();
        Self {
            state: vec![0.0; dynamics.internal_dim()],
            dynamics,
            spec,
            steps: 0,
            done: false,
            started: false,
        }
    }

    pub fn dynamics(&self) -> &D {
        &self.dynamics
    }

    /// Internal state vector (may differ from the observation).
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl<D: Dynamics> Env for EnvInstance<D> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.dynamics.initial_state(&mut rng);
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.dynamics.observe(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.started {
            return Err(Error::Usage(format!("{}: step called before reset", self.spec.name)));
        }
        if self.done {
            return Err(Error::Usage(format!(
                "{}: step called after the episode ended; reset first",
                self.spec.name
            )));
        }
        if action.len() != self.spec.action_dim {
            return Err(Error::Structural(format!(
                "{}: action has {} components, expected {}",
                self.spec.name,
                action.len(),
                self.spec.action_dim
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::numerical(format!("{} step", self.spec.name), "non-finite action"));
        }
        let clipped: Vec<f64> = action
            .iter()
            .zip(&self.spec.action_bounds)
            .map(|(&a, &(lo, hi))| a.clamp(lo, hi))
            .collect();
        if clipped.as_slice() != action {
            log::warn!("{}: action {:?} clipped to {:?}", self.spec.name, action, clipped);
        }
        let (next, reward, terminal) = self.dynamics.transition(&self.state, &clipped);
        let (lo, hi) = self.spec.reward_bounds;
        if !(reward >= lo && reward <= hi) {
            return Err(Error::numerical(
                format!("{} step {}", self.spec.name, self.steps),
                format!("reward {reward} outside declared bounds [{lo}, {hi}]"),
            ));
        }
        self.state = next;
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.spec.max_episode_steps;
        self.done = terminal || truncated;
        Ok(StepOutcome {
            observation: self.dynamics.observe(&self.state),
            reward,
            terminal,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.dynamics.observe(&self.state)
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state.clone(),
            steps: self.steps,
            done: self.done,
            started: self.started,
        }
    }

    fn restore(&mut self, s: &EnvSnapshot) -> Result<()> {
        if s.state.len() != self.state.len() || s.steps > self.spec.max_episode_steps {
            return Err(Error::Structural(format!("snapshot does not fit {}", self.spec.name)));
        }
        self.state = s.state.clone();
        self.steps = s.steps;
        self.done = s.done;
        self.started = s.started;
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

fn parse_params<P: serde::de::DeserializeOwned + Default>(params: &serde_json::Value) -> Result<P> {
    if params.is_null() {
        return Ok(P::default());
    }
    serde_json::from_value(params.clone()).map_err(|e| Error::Config(format!("environment parameters: {e}")))
}

/// Builds an environment by name from a JSON parameter block (`null` for defaults).
pub fn make_env(name: &str, params: &serde_json::Value) -> Result<Box<dyn Env>> {
    match name {
        "point-mass-2d" => Ok(Box::new(EnvInstance::new(PointMass::new(parse_params(params)?)?))),
        "pendulum-swingup" => Ok(Box::new(EnvInstance::new(Pendulum::new(parse_params(params)?)?))),
        "multigoal-2d" => Ok(Box::new(EnvInstance::new(MultiGoal::new(parse_params(params)?)?))),
        other => Err(Error::Config(format!(
            "unknown environment {other:?}; expected one of {}",
            ENV_NAMES.join(", ")
        ))),
    }
}

/// Affine map between the policy's unit cube and an environment's action box.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionScaler {
    bounds: Vec<(f64, f64)>,
}

impl ActionScaler {
    pub fn new(spec: &EnvSpec) -> Self {
        Self {
            bounds: spec.action_bounds.clone(),
        }
    }

    /// `[-1, 1]^D → [low, high]`.
    pub fn to_env(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(&self.bounds)
            .map(|(&u, &(lo, hi))| lo + 0.5 * (u + 1.0) * (hi - lo))
            .collect()
    }

    /// `[low, high] → [-1, 1]^D`.
    pub fn to_unit(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.bounds)
            .map(|(&a, &(lo, hi))| 2.0 * (a - lo) / (hi - lo) - 1.0)
            .collect()
    }
}

/// One line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Writes records as JSON lines.
pub fn write_trajectory<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs one episode with a policy closure mapping observations to env-space
/// actions, returning the total reward and the trajectory.
pub fn rollout<F: FnMut(&[f64]) -> Result<Vec<f64>>>(
    env: &mut dyn Env,
    seed: u64,
    mut policy: F,
) -> Result<(f64, Vec<TrajectoryRecord>)> {
    let mut obs = env.reset(seed);
    let mut total = 0.0;
    let mut records = Vec::new();
    loop {
        let action = policy(&obs)?;
        let out = env.step(&action)?;
        total += out.reward;
        records.push(TrajectoryRecord {
            step: records.len(),
            observation: obs,
            action,
            reward: out.reward,
            terminal: out.terminal,
            truncated: out.truncated,
        });
        obs = out.observation;
        if out.terminal || out.truncated {
            return Ok((total, records));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn reset_is_a_function_of_the_seed() {
        for name in ENV_NAMES {
            let mut env = make_env(name, &serde_json::Value::Null).unwrap();
            let a = env.reset(5);
            let b = env.reset(5);
            let c = env.reset(6);
            assert_eq!(a, b, "{name}");
            assert_ne!(a, c, "{name}");
        }
    }

    #[test]
    fn unknown_names_and_parameters_are_config_errors() {
        assert!(matches!(make_env("cartpole", &serde_json::Value::Null), Err(Error::Config(_))));
        let bad = serde_json::json!({"no_such_field": 1});
        assert!(matches!(make_env("point-mass-2d", &bad), Err(Error::Config(_))));
    }

    #[test]
    fn step_after_done_and_before_reset_are_usage_errors() {
        let mut env = make_env("point-mass-2d", &serde_json::Value::Null).unwrap();
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Usage(_))));
        env.reset(0);
        let steps = env.spec().max_episode_steps;
        for i in 0..steps {
            let out = env.step(&[0.0, 0.0]).unwrap();
            assert_eq!(out.truncated, i + 1 == steps);
        }
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::Usage(_))));
        assert!(matches!(env.step(&[0.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn out_of_bounds_actions_are_clipped() {
        let mut a = make_env("pendulum-swingup", &serde_json::Value::Null).unwrap();
        let mut b = a.clone();
        a.reset(3);
        b.reset(3);
        assert_eq!(a.step(&[50.0]).unwrap(), b.step(&[2.0]).unwrap());
    }

    #[test]
    fn identical_action_sequences_give_identical_trajectories() {
        for name in ENV_NAMES {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut env = make_env(name, &serde_json::Value::Null).unwrap();
            let spec = env.spec().clone();
            let actions: Vec<Vec<f64>> = (0..spec.max_episode_steps)
                .map(|_| spec.action_bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect())
                .collect();
            let run = |env: &mut Box<dyn Env>| {
                let mut i = 0;
                rollout(env.as_mut(), 17, |_| {
                    i += 1;
                    Ok(actions[i - 1].clone())
                })
                .unwrap()
            };
            let (r1, t1) = run(&mut env);
            let (r2, t2) = run(&mut env);
            assert_eq!(r1.to_bits(), r2.to_bits());
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn random_rollouts_respect_reward_bounds() {
        for name in ENV_NAMES {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut env = make_env(name, &serde_json::Value::Null).unwrap();
            let spec = env.spec().clone();
            let mut seed = 0;
            env.reset(seed);
            for _ in 0..10_000 {
                // Draw slightly past the bounds to exercise clipping too.
                let a: Vec<f64> = spec
                    .action_bounds
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(1.1 * lo..=1.1 * hi))
                    .collect();
                let out = env.step(&a).unwrap();
                assert!(out.reward >= spec.reward_bounds.0 && out.reward <= spec.reward_bounds.1);
                if out.terminal || out.truncated {
                    seed += 1;
                    env.reset(seed);
                }
            }
        }
    }

    #[test]
    fn snapshots_resume_bit_exactly() {
        let mut env = make_env("pendulum-swingup", &serde_json::Value::Null).unwrap();
        env.reset(4);
        for _ in 0..10 {
            env.step(&[0.7]).unwrap();
        }
        let snap = env.snapshot();
        let a = env.step(&[-1.3]).unwrap();
        let mut other = make_env("pendulum-swingup", &serde_json::Value::Null).unwrap();
        other.restore(&snap).unwrap();
        assert_eq!(other.step(&[-1.3]).unwrap(), a);
    }

    #[test]
    fn scaler_round_trips() {
        let spec = make_env("pendulum-swingup", &serde_json::Value::Null).unwrap().spec().clone();
        let s = ActionScaler::new(&spec);
        assert_eq!(s.to_env(&[1.0]), vec![2.0]);
        assert_eq!(s.to_env(&[-1.0]), vec![-2.0]);
        assert!((s.to_unit(&s.to_env(&[0.3]))[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn trajectory_dump_is_json_lines() {
        let mut env = make_env("multigoal-2d", &serde_json::Value::Null).unwrap();
        let (_, traj) = rollout(env.as_mut(), 0, |_| Ok(vec![0.5, 0.0])).unwrap();
        let mut out = Vec::new();
        write_trajectory(&mut out, &traj).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), traj.len());
        let first: TrajectoryRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, traj[0]);
    }
}
