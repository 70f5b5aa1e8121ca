//! Reference solvers that share no code path with soft policy iteration.
//!
//! * [`soft_value_iteration_oracle`] iterates the optimal soft backup
//!   `Q ← r + γ·P·(α·logsumexp(Q/α))` directly, never forming a policy.
//! * [`soft_evaluation_linear_solve`] evaluates a fixed policy exactly by
//!   solving `(I − γ·P_π)·V = r_π + α·H_π` with Gaussian elimination.
//! * [`hard_value_iteration`] is the zero-temperature limit `Q ← r + γ·P·max Q`.

use super::{entropy_of, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};

fn ensure_discounted(mdp: &TabularMdp) -> Result<()> {
    if mdp.gamma() >= 1.0 {
        return Err(Error::Unsupported("reference solvers need a discount below one".into()));
    }
    Ok(())
}

fn expected_next(mdp: &TabularMdp, s: usize, a: usize, v: &[f64]) -> f64 {
    mdp.next_state_dist(s, a).iter().zip(v).map(|(p, x)| p * x).sum()
}

fn iterate_to_fixed_point<F: Fn(&[f64]) -> Vec<f64>>(mdp: &TabularMdp, state_value: F, tol: f64) -> Result<Vec<f64>> {
    ensure_discounted(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![0.0; ns * na];
    let mut change = f64::INFINITY;
    for _ in 0..10_000_000usize {
        let v = state_value(&q);
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                next[s * na + a] = mdp.reward(s, a) + mdp.gamma() * expected_next(mdp, s, a, &v);
            }
        }
        change = next.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        q = next;
        if change < tol {
            return Ok(q);
        }
    }
    Err(Error::Convergence {
        iterations: 10_000_000,
        last_change: change,
        trace: String::new(),
    })
}

/// Optimal soft Q-function by value iteration on the log-sum-exp backup.
pub fn soft_value_iteration_oracle(mdp: &TabularMdp, alpha: f64, tol: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::Config("the soft oracle needs a positive temperature".into()));
    }
    let na = mdp.n_actions();
    iterate_to_fixed_point(
        mdp,
        |q| {
            q.chunks(na)
                .map(|row| {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + alpha * row.iter().map(|&x| ((x - m) / alpha).exp()).sum::<f64>().ln()
                })
                .collect()
        },
        tol,
    )
}

/// Optimal Q-function of the unregularized problem.
pub fn hard_value_iteration(mdp: &TabularMdp, tol: f64) -> Result<Vec<f64>> {
    let na = mdp.n_actions();
    iterate_to_fixed_point(
        mdp,
        |q| q.chunks(na).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
        tol,
    )
}

/// Exact soft Q-function of a fixed policy via a dense linear solve.
pub fn soft_evaluation_linear_solve(mdp: &TabularMdp, policy: &TabularPolicy, alpha: f64) -> Result<Vec<f64>> {
    ensure_discounted(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states != ns || policy.n_actions != na {
        return Err(Error::Structural("policy and MDP dimensions differ".into()));
    }
    // Augmented matrix [I − γ·P_π | r_π + α·H_π], row-major with ns + 1 columns.
    let w = ns + 1;
    let mut m = vec![0.0; ns * w];
    for s in 0..ns {
        m[s * w + s] = 1.0;
        let mut rhs = alpha * entropy_of(policy.row(s));
        for a in 0..na {
            let p = policy.row(s)[a];
            rhs += p * mdp.reward(s, a);
            for (t, &pt) in mdp.next_state_dist(s, a).iter().enumerate() {
                m[s * w + t] -= mdp.gamma() * p * pt;
            }
        }
        m[s * w + ns] = rhs;
    }
    let v = gaussian_elimination(&mut m, ns)?;
    let mut q = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            q.push(mdp.reward(s, a) + mdp.gamma() * expected_next(mdp, s, a, &v));
        }
    }
    Ok(q)
}

/// Solves an `n × n` system stored as an augmented `n × (n+1)` matrix, with
/// partial pivoting.
fn gaussian_elimination(m: &mut [f64], n: usize) -> Result<Vec<f64>> {
    let w = n + 1;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i * w + col].abs().total_cmp(&m[j * w + col].abs()))
            .expect("non-empty range");
        if m[pivot * w + col].abs() < 1e-300 {
            return Err(Error::numerical("linear solve", "singular system"));
        }
        if pivot != col {
            for k in 0..w {
                m.swap(pivot * w + k, col * w + k);
            }
        }
        for row in col + 1..n {
            let f = m[row * w + col] / m[col * w + col];
            if f != 0.0 {
                for k in col..w {
                    m[row * w + k] -= f * m[col * w + k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[row * w + k] * x[k]).sum();
        x[row] = (m[row * w + n] - tail) / m[row * w + row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_solve_matches_closed_form_bandit() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], 0.5, None).unwrap();
        let q = soft_evaluation_linear_solve(&mdp, &TabularPolicy::uniform(1, 2), 1.0).unwrap();
        let v = (0.5 + std::f64::consts::LN_2) / 0.5;
        assert!((q[0] - (1.0 + 0.5 * v)).abs() < 1e-14);
    }

    #[test]
    fn soft_oracle_closed_form_bandit() {
        // Optimal soft value of a one-state bandit: V = α·log Σ exp(r/α) / (1 − γ).
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], 0.5, None).unwrap();
        let q = soft_value_iteration_oracle(&mdp, 1.0, 1e-14).unwrap();
        let v = (1f64.exp() + 1.0).ln() / 0.5;
        assert!((q[0] - (1.0 + 0.5 * v)).abs() < 1e-12);
        assert!((q[1] - 0.5 * v).abs() < 1e-12);
    }

    #[test]
    fn soft_oracle_approaches_hard_values_as_temperature_falls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
        let hard = hard_value_iteration(&mdp, 1e-13).unwrap();
        let mut last = f64::INFINITY;
        for alpha in [1.0, 0.1, 0.01, 0.001] {
            let soft = soft_value_iteration_oracle(&mdp, alpha, 1e-13).unwrap();
            let gap = soft.iter().zip(&hard).map(|(a, b)| a - b).fold(0.0, f64::max);
            // The soft value exceeds the hard one by at most α·log A/(1 − γ).
            assert!(gap <= alpha * 3f64.ln() / 0.1 + 1e-10);
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn singular_systems_are_reported() {
        let mut m = vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0];
        assert!(gaussian_elimination(&mut m, 2).is_err());
    }
}
