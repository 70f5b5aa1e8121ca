//! Torque-limited pendulum that must be swung up and balanced.
//!
//! A uniform rod of mass `m` and length `l` pivots at one end, so its
//! moment of inertia is `I = m·l²/3` and gravity acts at `l/2`. `θ = 0` is
//! upright. Equation of motion:
//! `I·θ̈ = (m·g·l/2)·sin θ − b·θ̇ + u`, with `|u| ≤ max_torque`.
//!
//! Integration uses the implicit discrete-gradient scheme
//!
//! ```text
//! θ' = θ + dt·(ω + ω')/2
//! I·(ω' − ω)/dt = −(V(θ') − V(θ))/(θ' − θ) − b·(ω + ω')/2 + u,   V(θ) = (m·g·l/2)·cos θ
//! ```
//!
//! for which the energy `E = ½·I·ω² + V(θ)` changes by exactly
//! `−b·dt·ω̄² + u·(θ' − θ)` per step, so with zero torque it never
//! increases. The implicit equation is solved by Newton's method. Speed is
//! then clipped to `±max_speed`.
//!
//! Observation `(cos θ, sin θ, θ̇)`; reward `−(θ² + 0.1·θ̇² + 0.001·u²)`
//! evaluated at the pre-step state with θ wrapped to `[−π, π)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dynamics, EnvSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub dt: f64,
    pub max_episode_steps: usize,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    /// Initial angular speed is drawn from `±init_speed`.
    pub init_speed: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            max_episode_steps: 200,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            damping: 0.01,
            max_torque: 2.0,
            max_speed: 8.0,
            init_speed: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pendulum {
    params: PendulumParams,
}

/// Wraps an angle to `[−π, π)`.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// `sin(h)/h`, with its Taylor expansion near zero.
fn sinc(h: f64) -> f64 {
    if h.abs() < 1e-4 {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    }
}

/// Derivative of [`sinc`].
fn sinc_prime(h: f64) -> f64 {
    if h.abs() < 1e-4 {
        -h / 3.0
    } else {
        (h * h.cos() - h.sin()) / (h * h)
    }
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        let p = &params;
        let positive = [p.dt, p.gravity, p.mass, p.length, p.max_torque, p.max_speed];
        if positive.iter().any(|v| !(*v > 0.0)) || p.max_episode_steps == 0 {
            return Err(Error::Config("pendulum parameters must be positive".into()));
        }
        if !(p.damping >= 0.0) || !(p.init_speed >= 0.0) {
            return Err(Error::Config("damping and initial speed must be non-negative".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    fn inertia(&self) -> f64 {
        self.params.mass * self.params.length.powi(2) / 3.0
    }

    fn gravity_torque_scale(&self) -> f64 {
        0.5 * self.params.mass * self.params.gravity * self.params.length
    }

    /// Mechanical energy `½·I·ω² + (m·g·l/2)·cos θ` of a state `(θ, ω)`.
    pub fn energy(&self, state: &[f64]) -> f64 {
        0.5 * self.inertia() * state[1] * state[1] + self.gravity_torque_scale() * state[0].cos()
    }

    /// One integration step without clipping of the applied torque.
    pub fn integrate(&self, theta: f64, omega: f64, torque: f64) -> (f64, f64) {
        let p = &self.params;
        let (dt, i, b, c) = (p.dt, self.inertia(), p.damping, self.gravity_torque_scale());
        // Unknown: half the angle increment, h = (θ' − θ)/2, so ω̄ = 2h/dt.
        let residual = |h: f64| {
            let omega_next = 4.0 * h / dt - omega;
            i * (omega_next - omega) / dt - c * (theta + h).sin() * sinc(h) + b * 2.0 * h / dt - torque
        };
        let slope = |h: f64| {
            4.0 * i / (dt * dt) + 2.0 * b / dt - c * ((theta + h).cos() * sinc(h) + (theta + h).sin() * sinc_prime(h))
        };
        let mut h = 0.5 * omega * dt;
        for _ in 0..50 {
            let step = residual(h) / slope(h);
            h -= step;
            if step.abs() <= 1e-16 * h.abs().max(1e-300) {
                break;
            }
        }
        let omega_next = (4.0 * h / dt - omega).clamp(-p.max_speed, p.max_speed);
        (theta + 2.0 * h, omega_next)
    }
}

impl Dynamics for Pendulum {
    fn spec(&self) -> EnvSpec {
        let p = &self.params;
        let r_min = -(PI * PI + 0.1 * p.max_speed * p.max_speed + 0.001 * p.max_torque * p.max_torque);
        EnvSpec {
            name: "pendulum-swingup".into(),
            state_dim: 3,
            action_dim: 1,
            action_bounds: vec![(-p.max_torque, p.max_torque)],
            max_episode_steps: p.max_episode_steps,
            reward_bounds: (r_min, 0.0),
            dt: p.dt,
        }
    }

    fn internal_dim(&self) -> usize {
        2
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let theta = rng.gen_range(-PI..PI);
        let s = self.params.init_speed;
        let omega = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
        vec![theta, omega]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        vec![state[0].cos(), state[0].sin(), state[1]]
    }

    fn transition(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64, bool) {
        let u = a[0];
        let th = wrap_angle(s[0]);
        let reward = -(th * th + 0.1 * s[1] * s[1] + 0.001 * u * u);
        let (theta, omega) = self.integrate(s[0], s[1], u);
        (vec![wrap_angle(theta), omega], reward, false)
    }
}
