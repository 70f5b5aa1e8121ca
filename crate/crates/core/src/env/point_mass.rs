//! Planar double integrator that should come to rest at a goal.
//!
//! State `(x, y, vx, vy)`, action is an acceleration in `[-1, 1]²`
//! (scaled by `accel_scale`). Semi-implicit Euler:
//! `v' = clip(v + a·dt, ±max_speed)`, `p' = p + v'·dt`; hitting the arena
//! wall stops the motion along that axis. Reward is
//! `−‖p' − goal‖²·dt − ctrl_cost·‖a‖²·dt`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rollout, Dynamics, EnvInstance, EnvSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassParams {
    pub dt: f64,
    pub max_episode_steps: usize,
    pub accel_scale: f64,
    pub max_speed: f64,
    /// Half-width of the square arena.
    pub arena: f64,
    /// Half-width of the square the start position is drawn from.
    pub start_box: f64,
    pub goal: [f64; 2],
    pub ctrl_cost: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_episode_steps: 100,
            accel_scale: 1.0,
            max_speed: 2.0,
            arena: 2.0,
            start_box: 1.0,
            goal: [0.0, 0.0],
            ctrl_cost: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointMass {
    params: PointMassParams,
}

impl PointMass {
    pub fn new(params: PointMassParams) -> Result<Self> {
        let p = &params;
        let positive = [p.dt, p.accel_scale, p.max_speed, p.arena];
        if positive.iter().any(|v| !(*v > 0.0)) || p.max_episode_steps == 0 {
            return Err(Error::Config("point-mass parameters must be positive".into()));
        }
        if !(p.start_box >= 0.0 && p.start_box <= p.arena) || p.goal.iter().any(|g| g.abs() > p.arena) {
            return Err(Error::Config("start box and goal must lie inside the arena".into()));
        }
        if !(p.ctrl_cost >= 0.0) {
            return Err(Error::Config("control cost must be non-negative".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &PointMassParams {
        &self.params
    }
}

impl Dynamics for PointMass {
    fn spec(&self) -> EnvSpec {
        let p = &self.params;
        let far = (p.arena + p.goal[0].abs()).powi(2) + (p.arena + p.goal[1].abs()).powi(2);
        let r_min = -(far + 2.0 * p.ctrl_cost) * p.dt;
        EnvSpec {
            name: "point-mass-2d".into(),
            state_dim: 4,
            action_dim: 2,
            action_bounds: vec![(-1.0, 1.0); 2],
            max_episode_steps: p.max_episode_steps,
            reward_bounds: (r_min, 0.0),
            dt: p.dt,
        }
    }

    fn internal_dim(&self) -> usize {
        4
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let b = self.params.start_box;
        let mut draw = || if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 };
        vec![draw(), draw(), 0.0, 0.0]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn transition(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64, bool) {
        let p = &self.params;
        let mut next = vec![0.0; 4];
        let mut dist_sq = 0.0;
        for i in 0..2 {
            let mut v = (s[2 + i] + p.accel_scale * a[i] * p.dt).clamp(-p.max_speed, p.max_speed);
            let mut x = s[i] + v * p.dt;
            if x.abs() > p.arena {
                x = x.clamp(-p.arena, p.arena);
                v = 0.0;
            }
            next[i] = x;
            next[2 + i] = v;
            dist_sq += (x - p.goal[i]).powi(2);
        }
        let ctrl = a.iter().map(|u| u * u).sum::<f64>();
        let reward = -(dist_sq + p.ctrl_cost * ctrl) * p.dt;
        (next, reward, false)
    }
}

/// Clipped linear state feedback `a = clip(−K·(p − goal, v))` applied per
/// axis, with `K` from the discrete algebraic Riccati equation of the
/// semi-implicit double integrator under stage cost
/// `dt·(p − goal)² + vel_weight·v² + ρ·a²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrController {
    pub gains: [f64; 2],
    pub goal: [f64; 2],
    pub rho: f64,
    pub vel_weight: f64,
}

impl LqrController {
    pub fn new(params: &PointMassParams, rho: f64, vel_weight: f64) -> Self {
        let dt = params.dt;
        let k = params.accel_scale;
        let a = [[1.0, dt], [0.0, 1.0]];
        let b = [k * dt * dt, k * dt];
        let q = [[dt, 0.0], [0.0, vel_weight]];
        let mut pm = q;
        for _ in 0..100_000 {
            // P ← Q + AᵀPA − AᵀPb (ρ + bᵀPb)⁻¹ bᵀPA
            let pa = mat_mul(&pm, &a);
            let atpa = mat_mul(&transpose(&a), &pa);
            let pb = [pm[0][0] * b[0] + pm[0][1] * b[1], pm[1][0] * b[0] + pm[1][1] * b[1]];
            let btpb = b[0] * pb[0] + b[1] * pb[1];
            let btpa = [pb[0] * a[0][0] + pb[1] * a[1][0], pb[0] * a[0][1] + pb[1] * a[1][1]];
            let s = rho + btpb;
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = q[i][j] + atpa[i][j] - btpa[i] * btpa[j] / s;
                }
            }
            let change = (0..4).map(|k| (next[k / 2][k % 2] - pm[k / 2][k % 2]).abs()).fold(0.0, f64::max);
            pm = next;
            if change < 1e-14 * pm[0][0].abs().max(1.0) {
                break;
            }
        }
        let pb = [pm[0][0] * b[0] + pm[0][1] * b[1], pm[1][0] * b[0] + pm[1][1] * b[1]];
        let btpb = b[0] * pb[0] + b[1] * pb[1];
        let btpa = [pb[0] * a[0][0] + pb[1] * a[1][0], pb[0] * a[0][1] + pb[1] * a[1][1]];
        let s = rho + btpb;
        Self {
            gains: [btpa[0] / s, btpa[1] / s],
            goal: params.goal,
            rho,
            vel_weight,
        }
    }

    /// Action in `[-1, 1]²` for an observation `(x, y, vx, vy)`.
    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        (0..2)
            .map(|i| (-(self.gains[0] * (obs[i] - self.goal[i]) + self.gains[1] * obs[2 + i])).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Control weights searched by [`lqr_reference`].
pub const LQR_RHO_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
/// Velocity weights searched by [`lqr_reference`].
pub const LQR_VEL_WEIGHT_GRID: [f64; 3] = [0.0, 1e-3, 1e-2];

/// Scripted reference: the best mean return of [`LqrController`] over
/// [`LQR_RHO_GRID`] × [`LQR_VEL_WEIGHT_GRID`] on episodes seeded
/// `eval_seed, eval_seed + 1, ...`, together with the winning controller.
pub fn lqr_reference(params: &PointMassParams, eval_seed: u64, episodes: usize) -> Result<(f64, LqrController)> {
    if episodes == 0 {
        return Err(Error::Usage("reference needs at least one episode".into()));
    }
    let mut env = EnvInstance::new(PointMass::new(params.clone())?);
    let mut best: Option<(f64, LqrController)> = None;
    for &rho in &LQR_RHO_GRID {
        for &vel_weight in &LQR_VEL_WEIGHT_GRID {
            let ctrl = LqrController::new(params, rho, vel_weight);
            let mut total = 0.0;
            for i in 0..episodes {
                total += rollout(&mut env, eval_seed.wrapping_add(i as u64), |o| Ok(ctrl.act(o)))?.0;
            }
            let mean = total / episodes as f64;
            if best.as_ref().is_none_or(|(b, _)| mean > *b) {
                best = Some((mean, ctrl));
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}

fn mat_mul(x: &[[f64; 2]; 2], y: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    out
}

fn transpose(x: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[x[0][0], x[1][0]], [x[0][1], x[1][1]]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_action_from_rest_stays_put() {
        let pm = PointMass::new(PointMassParams::default()).unwrap();
        let (next, r, term) = pm.transition(&[0.5, -0.25, 0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(next, vec![0.5, -0.25, 0.0, 0.0]);
        assert_eq!(r, -(0.25 + 0.0625) * 0.1);
        assert!(!term);
    }

    #[test]
    fn start_positions_lie_in_the_box_at_rest() {
        let pm = PointMass::new(PointMassParams::default()).unwrap();
        for seed in 0..200 {
            let s = pm.initial_state(&mut ChaCha8Rng::seed_from_u64(seed));
            assert!(s[0].abs() <= 1.0 && s[1].abs() <= 1.0);
            assert_eq!(&s[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn walls_stop_motion() {
        let pm = PointMass::new(PointMassParams::default()).unwrap();
        let (next, _, _) = pm.transition(&[1.99, 0.0, 2.0, 0.0], &[1.0, 0.0]);
        assert_eq!(next[0], 2.0);
        assert_eq!(next[2], 0.0);
    }

    #[test]
    fn lqr_controller_drives_to_goal_and_beats_doing_nothing() {
        let params = PointMassParams::default();
        let ctrl = LqrController::new(&params, 1e-3, 0.0);
        assert!(ctrl.gains[0] > 0.0 && ctrl.gains[1] > 0.0);
        let mut env = EnvInstance::new(PointMass::new(params).unwrap());
        let (ret, traj) = rollout(&mut env, 3, |o| Ok(ctrl.act(o))).unwrap();
        let (idle, _) = rollout(&mut env, 3, |_| Ok(vec![0.0, 0.0])).unwrap();
        assert!(ret > idle);
        let last = &traj.last().unwrap().observation;
        assert!(last[0].abs() < 1e-3 && last[1].abs() < 1e-3);
        assert_eq!(env.steps(), 100);
    }

    #[test]
    fn reference_is_at_least_as_good_as_every_grid_point() {
        let params = PointMassParams::default();
        let (best, ctrl) = lqr_reference(&params, 11, 3).unwrap();
        let mut env = EnvInstance::new(PointMass::new(params.clone()).unwrap());
        let mut total = 0.0;
        for i in 0..3 {
            total += rollout(&mut env, 11 + i, |o| Ok(ctrl.act(o))).unwrap().0;
        }
        assert_eq!(total / 3.0, best);
        let other = LqrController::new(&params, 1e-1, 0.0);
        let mut worse = 0.0;
        for i in 0..3 {
            worse += rollout(&mut env, 11 + i, |o| Ok(other.act(o))).unwrap().0;
        }
        assert!(best >= worse / 3.0);
    }
}
