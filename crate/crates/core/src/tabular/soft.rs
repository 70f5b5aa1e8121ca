use serde::{Deserialize, Serialize};

use super::{SoftQTable, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};

/// Iteration cap for a single evaluation run; far above what any
/// contraction with `γ < 1` needs for reachable tolerances.
const MAX_EVAL_ITERATIONS: usize = 10_000_000;

fn check_common(mdp: &TabularMdp, policy: Option<&TabularPolicy>, alpha: f64) -> Result<()> {
    if mdp.gamma() >= 1.0 {
        return Err(Error::Unsupported(format!(
            "discount {} does not give a contraction; use the finite-horizon solver",
            mdp.gamma()
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("temperature {alpha} must be finite and positive")));
    }
    if let Some(p) = policy {
        if p.n_states != mdp.n_states() || p.n_actions != mdp.n_actions() {
            return Err(Error::Structural("policy and MDP dimensions differ".into()));
        }
    }
    Ok(())
}

/// Soft value `V(s) = Σ_a π(a|s)·(Q(s,a) − α·log π(a|s))` with `0·log 0 = 0`.
pub(crate) fn soft_state_values(q: &[f64], policy: &TabularPolicy, alpha: f64) -> Vec<f64> {
    let a = policy.n_actions;
    (0..policy.n_states)
        .map(|s| {
            policy
                .row(s)
                .iter()
                .zip(&q[s * a..(s + 1) * a])
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &qv)| p * (qv - alpha * p.ln()))
                .sum()
        })
        .collect()
}

/// `r(s,a) + γ·Σ_{s'} p(s'|s,a)·V(s')`.
pub fn bellman_backup(mdp: &TabularMdp, values: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp.next_state_dist(s, a).iter().zip(values).map(|(p, v)| p * v).sum();
            out.push(mdp.reward(s, a) + mdp.gamma() * ev);
        }
    }
    out
}

/// Iterates the soft Bellman backup for `policy` from `Q⁰ = 0` until the
/// sup-norm change drops below `tol`.
pub fn soft_policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, alpha: f64, tol: f64) -> Result<SoftQTable> {
    check_common(mdp, Some(policy), alpha)?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let mut q = vec![0.0; mdp.n_states() * mdp.n_actions()];
    let mut last_change = f64::INFINITY;
    for _ in 0..MAX_EVAL_ITERATIONS {
        let next = bellman_backup(mdp, &soft_state_values(&q, policy, alpha));
        last_change = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if last_change < tol {
            return Ok(SoftQTable {
                n_states: mdp.n_states(),
                n_actions: mdp.n_actions(),
                q,
                alpha,
            });
        }
    }
    Err(Error::Convergence {
        iterations: MAX_EVAL_ITERATIONS,
        last_change,
        trace: String::new(),
    })
}

/// Boltzmann policy `π(a|s) ∝ exp(Q(s,a)/α)`, computed with the row maximum
/// subtracted. At `α = 0` this is the greedy policy (ties to the lowest index).
pub fn soft_policy_improvement(q: &SoftQTable) -> TabularPolicy {
    let na = q.n_actions;
    let mut probs = Vec::with_capacity(q.q.len());
    for s in 0..q.n_states {
        let row = q.row(s);
        if q.alpha == 0.0 {
            let best = super::argmax(row);
            probs.extend((0..na).map(|a| if a == best { 1.0 } else { 0.0 }));
            continue;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = row.iter().map(|&x| ((x - m) / q.alpha).exp()).collect();
        let z: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / z));
    }
    TabularPolicy {
        n_states: q.n_states,
        n_actions: na,
        probs,
    }
}

/// One iterate of soft policy iteration: the Q-function of the policy in
/// force and how far the following improvement moved the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiIterate {
    pub q: Vec<f64>,
    pub policy_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiOutcome {
    pub policy: TabularPolicy,
    pub q: SoftQTable,
    pub iterations: usize,
    pub trace: Vec<SpiIterate>,
}

/// Alternates soft evaluation and improvement from the uniform policy until
/// the largest probability change falls below `tol`. The returned Q-function
/// is the evaluation of the returned policy, and the trace holds every
/// evaluated Q-function in order.
pub fn soft_policy_iteration(mdp: &TabularMdp, alpha: f64, tol: f64, max_iters: usize) -> Result<SpiOutcome> {
    check_common(mdp, None, alpha)?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let eval_tol = evaluation_tolerance(mdp, alpha, tol);
    let mut policy = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    for it in 0..max_iters {
        let q = soft_policy_evaluation(mdp, &policy, alpha, eval_tol)?;
        let next = soft_policy_improvement(&q);
        last_change = next.max_abs_diff(&policy);
        log::debug!("soft policy iteration {it}: policy change {last_change:.3e}");
        trace.push(SpiIterate {
            q: q.q,
            policy_change: last_change,
        });
        policy = next;
        if last_change < tol {
            let q = soft_policy_evaluation(mdp, &policy, alpha, eval_tol)?;
            trace.push(SpiIterate {
                q: q.q.clone(),
                policy_change: 0.0,
            });
            return Ok(SpiOutcome {
                policy,
                q,
                iterations: it + 1,
                trace,
            });
        }
    }
    let trace = serde_json::to_string(&trace.iter().map(|t| t.policy_change).collect::<Vec<_>>())?;
    Err(Error::Convergence {
        iterations: max_iters,
        last_change,
        trace,
    })
}

/// Inner tolerance for evaluations inside policy iteration: tight enough that
/// the evaluation error stays well below the outer tolerance, but not below
/// what f64 resolves at the Q magnitude.
fn evaluation_tolerance(mdp: &TabularMdp, alpha: f64, tol: f64) -> f64 {
    let scale = SoftQTable::magnitude_bound(mdp, alpha).max(1.0);
    (tol * (1.0 - mdp.gamma()) * 1e-2).max(scale * 1e-14)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_arm(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], gamma, None).unwrap()
    }

    #[test]
    fn single_state_bandit_values() {
        // Under the uniform policy V = (½ + α·ln2)/(1 − γ) and Q(a) = r(a) + γ·V.
        let mdp = two_arm(0.5);
        let alpha = 1.0;
        let pi = TabularPolicy::uniform(1, 2);
        let q = soft_policy_evaluation(&mdp, &pi, alpha, 1e-14).unwrap();
        let v = (0.5 + alpha * std::f64::consts::LN_2) / (1.0 - 0.5);
        assert!((q.get(0, 0) - (1.0 + 0.5 * v)).abs() < 1e-12);
        assert!((q.get(0, 1) - (0.0 + 0.5 * v)).abs() < 1e-12);
    }

    #[test]
    fn myopic_and_pure_entropy_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let myopic = TabularMdp::random(4, 3, 0.0, &mut rng);
        let pi = TabularPolicy::random(4, 3, &mut rng);
        let q = soft_policy_evaluation(&myopic, &pi, 0.7, 1e-14).unwrap();
        assert_eq!(q.q, myopic.rewards());

        let entropy_only = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], 0.5, None).unwrap();
        let q = soft_policy_evaluation(&entropy_only, &TabularPolicy::uniform(1, 2), 1.0, 1e-15).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((q.get(0, 0) - ln2).abs() < 1e-14 && (q.get(0, 1) - ln2).abs() < 1e-14);
    }

    #[test]
    fn improvement_is_boltzmann() {
        let q = SoftQTable {
            n_states: 1,
            n_actions: 2,
            q: vec![1.0, 0.0],
            alpha: 1.0,
        };
        let p = soft_policy_improvement(&q);
        let e = std::f64::consts::E;
        assert!((p.probs[0] - e / (e + 1.0)).abs() < 1e-15);
        let huge = SoftQTable {
            q: vec![1e5, 0.0],
            alpha: 1e-3,
            ..q.clone()
        };
        assert_eq!(soft_policy_improvement(&huge).probs, vec![1.0, 0.0]);
        let greedy = SoftQTable { alpha: 0.0, q: vec![2.0, 2.0], ..q };
        assert_eq!(soft_policy_improvement(&greedy).probs, vec![1.0, 0.0]);
    }

    #[test]
    fn rejects_undiscounted_and_bad_inputs() {
        let mdp = two_arm(1.0);
        let pi = TabularPolicy::uniform(1, 2);
        assert!(matches!(soft_policy_evaluation(&mdp, &pi, 1.0, 1e-9), Err(Error::Unsupported(_))));
        assert!(matches!(soft_policy_iteration(&mdp, 1.0, 1e-9, 10), Err(Error::Unsupported(_))));
        let mdp = two_arm(0.5);
        assert!(soft_policy_evaluation(&mdp, &pi, -1.0, 1e-9).is_err());
        assert!(soft_policy_evaluation(&mdp, &TabularPolicy::uniform(2, 2), 1.0, 1e-9).is_err());
    }

    #[test]
    fn iteration_budget_exhaustion_reports_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = TabularMdp::random(5, 3, 0.95, &mut rng);
        match soft_policy_iteration(&mdp, 0.1, 1e-14, 1) {
            Err(Error::Convergence { iterations, trace, .. }) => {
                assert_eq!(iterations, 1);
                assert!(trace.starts_with('['));
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn converged_policy_is_boltzmann_in_its_own_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
        let out = soft_policy_iteration(&mdp, 0.5, 1e-12, 500).unwrap();
        let again = soft_policy_improvement(&out.q);
        assert!(again.max_total_variation(&out.policy) < 1e-10);
    }
}
