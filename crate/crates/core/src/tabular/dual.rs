//! Finite-horizon maximum-return problem under a minimum expected entropy
//! constraint, solved through its Lagrangian dual.
//!
//! Working backwards from the last step, the inner maximization at step `t`
//! for a fixed multiplier `α_t` is the Boltzmann policy
//! `π_t ∝ exp(Q_t/α_t)`. The multiplier is then chosen so the expected
//! entropy `E_{s~ρ_t}[H(π_t(·|s))]` meets the target `H̄` (or set to the
//! search floor when the constraint is slack there). The soft Q-function of
//! the previous step is
//!
//! ```text
//! Q_{t-1}(s,a) = r(s,a) + E_{s'}[ Σ_a' π_t(a'|s')·(Q_t(s',a') − α_t·log π_t(a'|s')) ]
//! Q_{T-1}(s,a) = r(s,a)
//! ```
//!
//! The horizon problem is undiscounted; the MDP's discount is not used. The
//! state marginals `ρ_t` come from propagating the start distribution
//! forward under the current policies, so backward and forward sweeps are
//! repeated until the marginals and multipliers stop changing.

use serde::{Deserialize, Serialize};

use super::{soft::soft_state_values, soft_policy_improvement, SoftQTable, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualSearchConfig {
    /// Lower end of the temperature search.
    pub alpha_min: f64,
    /// Upper end of the temperature search.
    pub alpha_max: f64,
    /// Stop bisecting once the expected entropy is this close to the target.
    pub entropy_tol: f64,
    pub max_bisections: usize,
    /// Number of log-spaced temperatures tried when bisection cannot bracket.
    pub grid_points: usize,
    pub max_sweeps: usize,
    /// Sweeps stop when marginals and temperatures change by less than this.
    pub sweep_tol: f64,
    /// Initial state distribution; uniform when absent.
    pub start_distribution: Option<Vec<f64>>,
}

impl Default for DualSearchConfig {
    fn default() -> Self {
        Self {
            alpha_min: 1e-8,
            alpha_max: 1e4,
            entropy_tol: 1e-12,
            max_bisections: 300,
            grid_points: 400,
            max_sweeps: 1000,
            sweep_tol: 1e-12,
            start_distribution: None,
        }
    }
}

/// How the temperature of one step was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureSearch {
    /// Bisection matched the entropy target.
    Bracketed,
    /// The constraint already holds at the lower search bound.
    LowerBound,
    /// The target could not be bracketed; the best grid point was used.
    GridFallback,
    /// Non-positive target: the constraint is vacuous and `α = 0`.
    Vacuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteHorizonSolution {
    pub horizon: usize,
    pub target_entropy: f64,
    pub policies: Vec<TabularPolicy>,
    pub alphas: Vec<f64>,
    pub q_tables: Vec<SoftQTable>,
    /// Realized `E_{ρ_t}[H(π_t)]` per step.
    pub entropies: Vec<f64>,
    /// `ρ_t` per step.
    pub state_marginals: Vec<Vec<f64>>,
    pub searches: Vec<TemperatureSearch>,
    pub sweeps: usize,
    /// Largest change in marginals or temperatures per sweep.
    pub sweep_changes: Vec<f64>,
}

impl FiniteHorizonSolution {
    /// Largest shortfall `max(0, H̄ − entropy_t)` over steps.
    pub fn max_entropy_violation(&self) -> f64 {
        self.entropies
            .iter()
            .map(|h| (self.target_entropy - h).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Largest `|α_t·(entropy_t − H̄)|` over steps.
    pub fn max_slackness_residual(&self) -> f64 {
        self.alphas
            .iter()
            .zip(&self.entropies)
            .map(|(a, h)| (a * (h - self.target_entropy)).abs())
            .fold(0.0, f64::max)
    }
}

/// Entropy of `softmax(q/α)` in nats.
pub fn softmax_entropy(q: &[f64], alpha: f64) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = q.iter().map(|&x| (x - m) / alpha).collect();
    let w: Vec<f64> = z.iter().map(|x| x.exp()).collect();
    let sum: f64 = w.iter().sum();
    let mean_z: f64 = w.iter().zip(&z).map(|(p, x)| p * x).sum::<f64>() / sum;
    sum.ln() - mean_z
}

fn expected_entropy(q: &[f64], n_actions: usize, weights: &[f64], alpha: f64) -> f64 {
    q.chunks(n_actions)
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(row, &w)| w * softmax_entropy(row, alpha))
        .sum()
}

/// Chooses the temperature for one step given its Q-table and state weights.
fn search_temperature(
    q: &[f64],
    n_actions: usize,
    weights: &[f64],
    target: f64,
    cfg: &DualSearchConfig,
) -> (f64, TemperatureSearch) {
    let h = |log_alpha: f64| expected_entropy(q, n_actions, weights, log_alpha.exp()) - target;
    let (mut lo, mut hi) = (cfg.alpha_min.ln(), cfg.alpha_max.ln());
    if h(lo) >= 0.0 {
        return (cfg.alpha_min, TemperatureSearch::LowerBound);
    }
    if h(hi) < 0.0 {
        // Entropy is monotone in α, so a grid can only help when the target
        // is numerically out of reach; keep the point with the highest entropy
        // that falls short by the least.
        let mut best = (cfg.alpha_max, f64::NEG_INFINITY);
        for i in 0..cfg.grid_points.max(2) {
            let x = lo + (hi - lo) * i as f64 / (cfg.grid_points.max(2) - 1) as f64;
            let v = h(x);
            if v > best.1 {
                best = (x.exp(), v);
            }
        }
        log::warn!("temperature search could not bracket the entropy target; using grid point α = {}", best.0);
        return (best.0, TemperatureSearch::GridFallback);
    }
    for _ in 0..cfg.max_bisections {
        let mid = 0.5 * (lo + hi);
        let v = h(mid);
        if v >= 0.0 {
            hi = mid;
            if v <= cfg.entropy_tol {
                break;
            }
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    // The upper end always satisfies the constraint.
    (hi.exp(), TemperatureSearch::Bracketed)
}

fn propagate(mdp: &TabularMdp, start: &[f64], policies: &[TabularPolicy]) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut marginals = vec![start.to_vec()];
    for pi in &policies[..policies.len() - 1] {
        let rho = marginals.last().expect("non-empty");
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if rho[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = rho[s] * pi.row(s)[a];
                if w == 0.0 {
                    continue;
                }
                for (t, p) in mdp.next_state_dist(s, a).iter().enumerate() {
                    next[t] += w * p;
                }
            }
        }
        marginals.push(next);
    }
    marginals
}

/// Solves the entropy-constrained finite-horizon problem with horizon `T`
/// and target `H̄`.
pub fn finite_horizon_dual_solve(
    mdp: &TabularMdp,
    target_entropy: f64,
    horizon: usize,
    cfg: &DualSearchConfig,
) -> Result<FiniteHorizonSolution> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if !target_entropy.is_finite() {
        return Err(Error::Config("entropy target must be finite".into()));
    }
    let max_entropy = (na as f64).ln();
    if target_entropy >= max_entropy {
        return Err(Error::Infeasible(format!(
            "entropy target {target_entropy} is not below log |A| = {max_entropy}"
        )));
    }
    if !(cfg.alpha_min > 0.0 && cfg.alpha_max > cfg.alpha_min) {
        return Err(Error::Config("temperature search needs 0 < alpha_min < alpha_max".into()));
    }
    let vacuous = target_entropy <= 0.0;
    if vacuous {
        log::warn!("entropy target {target_entropy} ≤ 0 makes the constraint vacuous; using α = 0");
    }
    let start = match &cfg.start_distribution {
        Some(d) => {
            let sum: f64 = d.iter().sum();
            if d.len() != ns || d.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Structural("start distribution must be a distribution over states".into()));
            }
            d.clone()
        }
        None => vec![1.0 / ns as f64; ns],
    };

    let mut policies = vec![TabularPolicy::uniform(ns, na); horizon];
    let mut marginals = propagate(mdp, &start, &policies);
    let mut alphas = vec![f64::NAN; horizon];
    let mut searches = vec![TemperatureSearch::Vacuous; horizon];
    let mut sweep_changes = Vec::new();

    for sweep in 0..cfg.max_sweeps {
        let mut new_alphas = vec![0.0; horizon];
        let mut new_q = vec![Vec::new(); horizon];
        let mut q = mdp.rewards().to_vec();
        for t in (0..horizon).rev() {
            let (alpha, how) = if vacuous {
                (0.0, TemperatureSearch::Vacuous)
            } else {
                search_temperature(&q, na, &marginals[t], target_entropy, cfg)
            };
            let table = SoftQTable {
                n_states: ns,
                n_actions: na,
                q: q.clone(),
                alpha,
            };
            let pi = soft_policy_improvement(&table);
            if t > 0 {
                let v = soft_state_values(&q, &pi, alpha);
                let mut prev = Vec::with_capacity(ns * na);
                for s in 0..ns {
                    for a in 0..na {
                        let ev: f64 = mdp.next_state_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                        prev.push(mdp.reward(s, a) + ev);
                    }
                }
                q = prev;
            }
            new_alphas[t] = alpha;
            searches[t] = how;
            policies[t] = pi;
            new_q[t] = table.q;
        }
        let new_marginals = propagate(mdp, &start, &policies);
        let marginal_change = new_marginals
            .iter()
            .flatten()
            .zip(marginals.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let alpha_change = new_alphas
            .iter()
            .zip(&alphas)
            .map(|(a, b)| if b.is_nan() { f64::INFINITY } else { (a - b).abs() / a.abs().max(1.0) })
            .fold(0.0, f64::max);
        let change = marginal_change.max(alpha_change);
        sweep_changes.push(change);
        log::debug!("dual sweep {sweep}: change {change:.3e}");
        marginals = new_marginals;
        alphas = new_alphas;
        let q_tables: Vec<SoftQTable> = new_q
            .into_iter()
            .zip(&alphas)
            .map(|(q, &alpha)| SoftQTable {
                n_states: ns,
                n_actions: na,
                q,
                alpha,
            })
            .collect();
        if change <= cfg.sweep_tol || (marginal_change == 0.0 && alpha_change <= cfg.sweep_tol) {
            let entropies = policies
                .iter()
                .zip(&marginals)
                .map(|(pi, rho)| (0..ns).map(|s| rho[s] * pi.entropy(s)).sum())
                .collect();
            return Ok(FiniteHorizonSolution {
                horizon,
                target_entropy,
                policies,
                alphas,
                q_tables,
                entropies,
                state_marginals: marginals,
                searches,
                sweeps: sweep + 1,
                sweep_changes,
            });
        }
    }
    Err(Error::Convergence {
        iterations: cfg.max_sweeps,
        last_change: sweep_changes.last().copied().unwrap_or(f64::NAN),
        trace: serde_json::to_string(&sweep_changes)?,
    })
}
