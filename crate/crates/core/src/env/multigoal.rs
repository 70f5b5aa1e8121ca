//! Planar point with two mirror-image goals; reaching either is equally good.
//!
//! Single integrator `p' = clip(p + step_size·a, ±arena)` with
//! `a ∈ [-1, 1]²`, starting near the origin. Reward is
//! `−min_g ‖p' − g‖² − ctrl_cost·‖a‖²` with goals at `(±goal_x, 0)`, and the
//! episode terminates once a goal is within `goal_radius`. The task is
//! symmetric under `x → −x`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dynamics, EnvSpec, TrajectoryRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiGoalParams {
    pub max_episode_steps: usize,
    pub step_size: f64,
    pub arena: f64,
    pub goal_x: f64,
    pub goal_radius: f64,
    /// Initial position is drawn from `±start_noise` around the origin.
    pub start_noise: f64,
    pub ctrl_cost: f64,
}

impl Default for MultiGoalParams {
    fn default() -> Self {
        Self {
            max_episode_steps: 50,
            step_size: 0.3,
            arena: 4.0,
            goal_x: 2.0,
            goal_radius: 0.1,
            start_noise: 0.1,
            ctrl_cost: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiGoal {
    params: MultiGoalParams,
}

impl MultiGoal {
    pub fn new(params: MultiGoalParams) -> Result<Self> {
        let p = &params;
        if [p.step_size, p.arena, p.goal_x, p.goal_radius].iter().any(|v| !(*v > 0.0))
            || p.max_episode_steps == 0
            || p.goal_x >= p.arena
        {
            return Err(Error::Config("multigoal parameters must be positive with goals inside the arena".into()));
        }
        if !(p.start_noise >= 0.0) || !(p.ctrl_cost >= 0.0) {
            return Err(Error::Config("start noise and control cost must be non-negative".into()));
        }
        Ok(Self { params })
    }

    pub fn goals(&self) -> [[f64; 2]; 2] {
        [[-self.params.goal_x, 0.0], [self.params.goal_x, 0.0]]
    }

    /// Squared distances to the left and right goals.
    fn goal_dist_sq(&self, p: &[f64]) -> [f64; 2] {
        let g = self.params.goal_x;
        [(p[0] + g).powi(2) + p[1] * p[1], (p[0] - g).powi(2) + p[1] * p[1]]
    }
}

impl Dynamics for MultiGoal {
    fn spec(&self) -> EnvSpec {
        let p = &self.params;
        // On each half-plane the nearer goal is the one on that side, and the
        // farthest point from it is the top or bottom of the centre line or
        // of the outer wall.
        let worst = p.goal_x.powi(2).max((p.arena - p.goal_x).powi(2)) + p.arena.powi(2);
        let r_min = -(worst + 2.0 * p.ctrl_cost);
        EnvSpec {
            name: "multigoal-2d".into(),
            state_dim: 2,
            action_dim: 2,
            action_bounds: vec![(-1.0, 1.0); 2],
            max_episode_steps: p.max_episode_steps,
            reward_bounds: (r_min, 0.0),
            dt: 1.0,
        }
    }

    fn internal_dim(&self) -> usize {
        2
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.params.start_noise;
        let mut draw = || if n > 0.0 { rng.gen_range(-n..=n) } else { 0.0 };
        vec![draw(), draw()]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn transition(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64, bool) {
        let p = &self.params;
        let next: Vec<f64> = (0..2)
            .map(|i| (s[i] + p.step_size * a[i]).clamp(-p.arena, p.arena))
            .collect();
        let d = self.goal_dist_sq(&next);
        let nearest = d[0].min(d[1]);
        let reward = -nearest - p.ctrl_cost * (a[0] * a[0] + a[1] * a[1]);
        (next, reward, nearest <= p.goal_radius * p.goal_radius)
    }
}

/// Which goal each episode ended nearest to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitationStats {
    pub episodes: usize,
    pub left: usize,
    pub right: usize,
    /// Episodes that terminated inside a goal region.
    pub reached: usize,
}

impl VisitationStats {
    /// Fraction of episodes ending nearer the left goal.
    pub fn left_fraction(&self) -> f64 {
        self.left as f64 / self.episodes.max(1) as f64
    }
}

/// Tallies final positions of multigoal trajectories (observation after the
/// last step is recovered from the last record's action).
pub fn visitation_stats(env: &MultiGoal, trajectories: &[Vec<TrajectoryRecord>]) -> VisitationStats {
    let mut stats = VisitationStats {
        episodes: 0,
        left: 0,
        right: 0,
        reached: 0,
    };
    for traj in trajectories {
        let Some(last) = traj.last() else { continue };
        let (end, _, _) = env.transition(&last.observation, &last.action);
        let d = env.goal_dist_sq(&end);
        stats.episodes += 1;
        if d[0] <= d[1] {
            stats.left += 1;
        } else {
            stats.right += 1;
        }
        if last.terminal {
            stats.reached += 1;
        }
    }
    stats
}
