//! Exact maximum-entropy dynamic programming on finite MDPs.
//!
//! Soft policy evaluation repeatedly applies the backup
//! `Q(s,a) ← r(s,a) + γ·E_{s'}[V(s')]` with the soft value
//! `V(s) = E_{a~π}[Q(s,a) − α·log π(a|s)]`; soft policy improvement replaces
//! π by the Boltzmann policy `exp(Q/α)/Z`; alternating the two is soft
//! policy iteration. [`oracle`] holds independent reference solvers used to
//! check these, and [`dual`] solves the finite-horizon problem where the
//! temperature is the dual variable of a minimum-entropy constraint.
//!
//! Discounted backups are used throughout the infinite-horizon solvers; the
//! discount enters only through `γ·E[V(s')]`, matching the bounded
//! entropy-augmented reward formulation.

pub mod dual;
pub mod oracle;
mod soft;

pub(crate) use soft::soft_state_values;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dual::{finite_horizon_dual_solve, DualSearchConfig, FiniteHorizonSolution};
pub use oracle::{hard_value_iteration, soft_evaluation_linear_solve, soft_value_iteration_oracle};
pub use soft::{
    bellman_backup, soft_policy_evaluation, soft_policy_improvement, soft_policy_iteration, SpiIterate,
    SpiOutcome,
};

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with flat row-major tables:
/// `transition[(s·A + a)·S + s']` and `reward[s·A + a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    reward_bounds: (f64, f64),
}

/// JSON form: `{states, actions, transition[S][A][S], reward[S][A], gamma}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub states: usize,
    pub actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_bounds: Option<(f64, f64)>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        reward_bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Structural("an MDP needs at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states || reward.len() != n_states * n_actions {
            return Err(Error::Structural(format!(
                "tables for {n_states} states and {n_actions} actions have wrong sizes ({} transitions, {} rewards)",
                transition.len(),
                reward.len()
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount {gamma} outside [0, 1]")));
        }
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if chunk.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Structural(format!(
                    "transition row (s={}, a={}) is not a distribution (sum {sum})",
                    row / n_actions,
                    row % n_actions
                )));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Structural("rewards must be finite".into()));
        }
        let observed = reward
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let reward_bounds = match reward_bounds {
            Some((lo, hi)) => {
                if observed.0 < lo || observed.1 > hi {
                    return Err(Error::Structural(format!(
                        "rewards span [{}, {}], outside declared bounds [{lo}, {hi}]",
                        observed.0, observed.1
                    )));
                }
                (lo, hi)
            }
            None => observed,
        };
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            reward_bounds,
        })
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        let (s, a) = (doc.states, doc.actions);
        if doc.transition.len() != s || doc.reward.len() != s {
            return Err(Error::Structural("outer table dimension must equal `states`".into()));
        }
        let mut transition = Vec::with_capacity(s * a * s);
        for per_state in &doc.transition {
            if per_state.len() != a || per_state.iter().any(|row| row.len() != s) {
                return Err(Error::Structural("transition must be [states][actions][states]".into()));
            }
            per_state.iter().for_each(|row| transition.extend_from_slice(row));
        }
        if doc.reward.iter().any(|row| row.len() != a) {
            return Err(Error::Structural("reward must be [states][actions]".into()));
        }
        let reward = doc.reward.concat();
        Self::new(s, a, transition, reward, doc.gamma, doc.reward_bounds)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn to_document(&self) -> MdpDocument {
        let (s, a) = (self.n_states, self.n_actions);
        MdpDocument {
            states: s,
            actions: a,
            transition: (0..s)
                .map(|i| (0..a).map(|j| self.next_state_dist(i, j).to_vec()).collect())
                .collect(),
            reward: (0..s).map(|i| self.reward[i * a..(i + 1) * a].to_vec()).collect(),
            gamma: self.gamma,
            reward_bounds: Some(self.reward_bounds),
        }
    }

    /// Random instance: rewards uniform in `[0, 1)`, transition rows from
    /// normalized uniform weights with roughly a third of entries zeroed.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Self {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let mut row: Vec<f64> = (0..n_states)
                .map(|_| if rng.gen_bool(0.33) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            if row.iter().all(|&w| w == 0.0) {
                row[rng.gen_range(0..n_states)] = 1.0;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= sum);
            // Fold the normalization residual into the largest entry.
            let resid = 1.0 - row.iter().sum::<f64>();
            let imax = (0..n_states).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            row[imax] += resid;
            transition.extend(row);
        }
        let reward = (0..n_states * n_actions).map(|_| rng.gen::<f64>()).collect();
        Self::new(n_states, n_actions, transition, reward, gamma, Some((0.0, 1.0)))
            .expect("random construction is valid")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `p(·|s, a)`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let row = s * self.n_actions + a;
        &self.transition[row * self.n_states..(row + 1) * self.n_states]
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            gamma,
            Some(self.reward_bounds),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    /// `probs[s·A + a] = π(a|s)`.
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Structural("policy table has the wrong size".into()));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Structural(format!("policy row {s} is not a distribution (sum {sum})")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Random full-support policy.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let row: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = row.iter().sum();
            probs.extend(row.iter().map(|w| w / sum));
        }
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Shannon entropy of `π(·|s)` in nats, with `0·log 0 = 0`.
    pub fn entropy(&self, s: usize) -> f64 {
        entropy_of(self.row(s))
    }

    /// Largest absolute probability difference.
    pub fn max_abs_diff(&self, other: &TabularPolicy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest per-state total-variation distance.
    pub fn max_total_variation(&self, other: &TabularPolicy) -> f64 {
        (0..self.n_states)
            .map(|s| {
                0.5 * self
                    .row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Index of the most probable action per state, ties to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s))).collect()
    }
}

/// Shannon entropy in nats with `0·log 0 = 0`.
pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftQTable {
    pub n_states: usize,
    pub n_actions: usize,
    /// `q[s·A + a]`.
    pub q: Vec<f64>,
    pub alpha: f64,
}

impl SoftQTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.q.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Bound from the entropy-augmented reward: `(|r|max + γ·α·log A)/(1 − γ)`.
    pub fn magnitude_bound(mdp: &TabularMdp, alpha: f64) -> f64 {
        let (lo, hi) = mdp.reward_bounds();
        let r = lo.abs().max(hi.abs());
        (r + mdp.gamma() * alpha * (mdp.n_actions() as f64).ln()) / (1.0 - mdp.gamma())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_and_validation() {
        let text = r#"{"states":1,"actions":2,"transition":[[[1.0],[1.0]]],"reward":[[1.0,0.0]],"gamma":0.5}"#;
        let mdp = TabularMdp::from_json(text).unwrap();
        assert_eq!(mdp.reward(0, 0), 1.0);
        assert_eq!(mdp.reward_bounds(), (0.0, 1.0));
        let again = TabularMdp::from_document(mdp.to_document()).unwrap();
        assert_eq!(again, mdp);

        let bad_row = r#"{"states":1,"actions":1,"transition":[[[0.9]]],"reward":[[0.0]],"gamma":0.5}"#;
        assert!(matches!(TabularMdp::from_json(bad_row), Err(Error::Structural(_))));
        let unknown = r#"{"states":1,"actions":1,"transition":[[[1.0]]],"reward":[[0.0]],"gamma":0.5,"x":1}"#;
        assert!(TabularMdp::from_json(unknown).is_err());
        let out_of_bounds = r#"{"states":1,"actions":1,"transition":[[[1.0]]],"reward":[[3.0]],"gamma":0.5,"reward_bounds":[0.0,1.0]}"#;
        assert!(TabularMdp::from_json(out_of_bounds).is_err());
    }

    #[test]
    fn random_instances_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = rng.gen_range(1..=6);
            let a = rng.gen_range(1..=4);
            let mdp = TabularMdp::random(s, a, 0.9, &mut rng);
            for i in 0..s {
                for j in 0..a {
                    let sum: f64 = mdp.next_state_dist(i, j).iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn entropy_conventions() {
        assert_eq!(entropy_of(&[1.0, 0.0]), 0.0);
        assert!((entropy_of(&[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
