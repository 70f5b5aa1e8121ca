//! Property suites with measured residuals, shared by the command-line
//! `verify` verb and the acceptance tests.
//!
//! * `theory`: exact soft evaluation, monotone improvement, soft policy
//!   iteration against an independent oracle, the zero-temperature limit,
//!   the finite-horizon entropy-constrained dual and the soft backup's
//!   contraction.
//! * `gradients`: reverse-mode gradients of the critic, actor and
//!   temperature losses and of the squashed log-likelihood against central
//!   finite differences.
//! * `density`: normalization of the squashed Gaussian under adaptive
//!   quadrature.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::agent::{temperature_loss_at, SacAgent, SacConfig};
use crate::autodiff::{finite_difference_check, Bindings, Graph, Tensor};
use crate::error::{Error, Result};
use crate::nn::{MlpParams, ParamMode};
use crate::policy::{squash_head, LOG_STD_MAX, LOG_STD_MIN};
use crate::quadrature::integrate_batched;
use crate::replay::{Batch, Transition};
use crate::tabular::{
    argmax, bellman_backup, finite_horizon_dual_solve, hard_value_iteration, soft_evaluation_linear_solve,
    soft_policy_evaluation, soft_policy_improvement, soft_policy_iteration, soft_state_values,
    soft_value_iteration_oracle, DualSearchConfig, SoftQTable, TabularMdp, TabularPolicy,
};

/// Discounts cycled through by the random tabular instances.
pub const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];
/// Temperatures cycled through by the random tabular instances.
pub const ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Theory,
    Gradients,
    Density,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Suite::Theory),
            "gradients" => Ok(Suite::Gradients),
            "density" => Ok(Suite::Density),
            "all" => Ok(Suite::All),
            other => Err(Error::Usage(format!(
                "unknown suite {other:?}; expected theory, gradients, density or all"
            ))),
        }
    }
}

/// Outcome of one property check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst residual observed (or a count, as described by `detail`).
    pub measured: f64,
    /// Pass threshold for `measured`.
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e} (threshold {:.1e}) {} [{:.2} s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Runs every check of `suite`.
pub fn run_suite(suite: Suite) -> Result<Report> {
    let mut checks = Vec::new();
    if matches!(suite, Suite::Theory | Suite::All) {
        checks.push(soft_evaluation_check(100)?);
        checks.push(improvement_check(100)?);
        checks.push(policy_iteration_check(100)?);
        checks.push(zero_temperature_check(100)?);
        checks.push(finite_horizon_dual_check(50)?);
        checks.push(contraction_check(100)?);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        checks.push(critic_gradient_check(100)?);
        checks.push(actor_gradient_check(100)?);
        checks.push(temperature_gradient_check(100)?);
        checks.push(log_prob_gradient_check(100)?);
    }
    if matches!(suite, Suite::Density | Suite::All) {
        checks.push(density_normalization_check(50)?);
    }
    Ok(Report { checks })
}

/// Instance `i` of the seeded random tabular family: 1–6 states, 2–4
/// actions, with discount and temperature cycled over [`GAMMAS`] and
/// [`ALPHAS`] so every pairing occurs.
pub fn random_instance(i: usize) -> (TabularMdp, f64, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + i as u64);
    let ns = rng.gen_range(1..=6);
    let na = rng.gen_range(2..=4);
    let gamma = GAMMAS[i % 3];
    let alpha = ALPHAS[(i / 3) % 3];
    (TabularMdp::random(ns, na, gamma, &mut rng), alpha, rng)
}

fn result(name: &str, measured: f64, threshold: f64, passed: bool, detail: String, start: Instant) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        measured,
        threshold,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterative soft evaluation of a random policy against the direct linear
/// solve, max-norm.
pub fn soft_evaluation_check(instances: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (mdp, alpha, mut rng) = random_instance(i);
        let policy = TabularPolicy::random(mdp.n_states(), mdp.n_actions(), &mut rng);
        let iterative = soft_policy_evaluation(&mdp, &policy, alpha, 1e-13)?;
        let exact = soft_evaluation_linear_solve(&mdp, &policy, alpha)?;
        worst = worst.max(iterative.max_abs_diff(&exact));
    }
    let tol = 1e-8;
    Ok(result(
        "soft policy evaluation vs linear solve",
        worst,
        tol,
        worst <= tol,
        format!("max-norm over {instances} MDPs"),
        start,
    ))
}

/// One improvement step from a random policy never lowers the exact soft
/// Q-function anywhere. Reports the largest decrease.
pub fn improvement_check(instances: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst_drop = f64::NEG_INFINITY;
    for i in 0..instances {
        let (mdp, alpha, mut rng) = random_instance(i);
        let old = TabularPolicy::random(mdp.n_states(), mdp.n_actions(), &mut rng);
        let q_old = soft_evaluation_linear_solve(&mdp, &old, alpha)?;
        let table = SoftQTable {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            q: q_old.clone(),
            alpha,
        };
        let new = soft_policy_improvement(&table);
        let q_new = soft_evaluation_linear_solve(&mdp, &new, alpha)?;
        for (o, n) in q_old.iter().zip(&q_new) {
            worst_drop = worst_drop.max(o - n);
        }
    }
    let tol = 1e-9;
    Ok(result(
        "soft policy improvement is monotone",
        worst_drop,
        tol,
        worst_drop <= tol,
        format!("largest Q decrease over {instances} MDPs"),
        start,
    ))
}

/// Softmax of a Q-row at temperature `alpha`.
fn boltzmann(row: &[f64], alpha: f64) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = row.iter().map(|&q| ((q - m) / alpha).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Soft policy iteration against log-sum-exp value iteration, and the
/// converged policy against the Boltzmann policy of the oracle Q-function.
pub fn policy_iteration_check(instances: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let (mut worst_q, mut worst_tv): (f64, f64) = (0.0, 0.0);
    for i in 0..instances {
        let (mdp, alpha, _) = random_instance(i);
        let spi = soft_policy_iteration(&mdp, alpha, 1e-10, 10_000)?;
        let oracle = soft_value_iteration_oracle(&mdp, alpha, 1e-13)?;
        worst_q = worst_q.max(spi.q.max_abs_diff(&oracle));
        let na = mdp.n_actions();
        for (s, row) in oracle.chunks(na).enumerate() {
            let target = boltzmann(row, alpha);
            let tv = 0.5 * max_diff_sum(spi.policy.row(s), &target);
            worst_tv = worst_tv.max(tv);
        }
    }
    let (q_tol, tv_tol) = (1e-6, 1e-8);
    Ok(result(
        "soft policy iteration reaches the soft optimum",
        worst_q,
        q_tol,
        worst_q <= q_tol && worst_tv <= tv_tol,
        format!("Q max-norm over {instances} MDPs; worst policy total variation {worst_tv:.3e} (threshold {tv_tol:.0e})"),
        start,
    ))
}

fn max_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Smallest gap between the best and second-best hard Q-value over states.
fn action_gap(q: &[f64], na: usize) -> f64 {
    q.chunks(na)
        .map(|row| {
            let best = argmax(row);
            row.iter()
                .enumerate()
                .filter(|&(a, _)| a != best)
                .map(|(_, &v)| row[best] - v)
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Temperature at which the zero-temperature limit is probed.
pub const LOW_TEMPERATURE: f64 = 1e-3;

/// Minimum hard action gap for an optimal action to count as unique.
pub const UNIQUE_GAP: f64 = 1e-6;

/// At α = 10⁻³ the soft-optimal greedy actions coincide with hard value
/// iteration on MDPs whose optimal actions are unique. Instances with
/// tied optima are skipped and replaced by later draws. Reports the number
/// of mismatching instances.
pub fn zero_temperature_check(instances: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let (mut mismatches, mut accepted, mut drawn, mut min_gap) = (0usize, 0usize, 0usize, f64::INFINITY);
    while accepted < instances {
        let (mdp, _, _) = random_instance(drawn);
        drawn += 1;
        let hard = hard_value_iteration(&mdp, 1e-13)?;
        let gap = action_gap(&hard, mdp.n_actions());
        if gap < UNIQUE_GAP {
            continue;
        }
        accepted += 1;
        min_gap = min_gap.min(gap);
        let spi = soft_policy_iteration(&mdp, LOW_TEMPERATURE, 1e-8, 10_000)?;
        let hard_greedy: Vec<usize> = hard.chunks(mdp.n_actions()).map(argmax).collect();
        if spi.policy.argmax() != hard_greedy {
            mismatches += 1;
        }
    }
    Ok(result(
        "zero-temperature limit recovers hard greedy actions",
        mismatches as f64,
        0.0,
        mismatches == 0,
        format!(
            "mismatching instances out of {accepted} ({} tied instances skipped, smallest action gap {min_gap:.2e})",
            drawn - accepted
        ),
        start,
    ))
}

/// Finite-horizon dual on random instances with horizons 1–5: realized
/// per-step entropy never below the target and complementary slackness.
pub fn finite_horizon_dual_check(instances: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let (mut worst_violation, mut worst_slack): (f64, f64) = (0.0, 0.0);
    let cfg = DualSearchConfig::default();
    for i in 0..instances {
        let (mdp, _, mut rng) = random_instance(1000 + i);
        let horizon = rng.gen_range(1..=5);
        let target = rng.gen_range(0.05..0.95) * (mdp.n_actions() as f64).ln();
        let sol = finite_horizon_dual_solve(&mdp, target, horizon, &cfg)?;
        worst_violation = worst_violation.max(sol.max_entropy_violation());
        worst_slack = worst_slack.max(sol.max_slackness_residual());
    }
    let tol = 1e-4;
    let measured = worst_violation.max(worst_slack);
    Ok(result(
        "finite-horizon dual feasibility and slackness",
        measured,
        tol,
        measured <= tol,
        format!("entropy shortfall {worst_violation:.3e}, slackness {worst_slack:.3e} over {instances} instances"),
        start,
    ))
}

/// The soft backup `Q ↦ r + γ·P·V_π(Q)` under the Boltzmann policy of
/// each argument is a γ-contraction in max-norm. Reports the worst ratio
/// `‖TQ₁ − TQ₂‖ / (γ‖Q₁ − Q₂‖)`.
pub fn contraction_check(instances: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (mdp, alpha, mut rng) = random_instance(i);
        let n = mdp.n_states() * mdp.n_actions();
        let q1: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let q2: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let backup = |q: &[f64]| {
            let table = SoftQTable {
                n_states: mdp.n_states(),
                n_actions: mdp.n_actions(),
                q: q.to_vec(),
                alpha,
            };
            let pi = soft_policy_improvement(&table);
            bellman_backup(&mdp, &soft_state_values(q, &pi, alpha))
        };
        let ratio = max_diff(&backup(&q1), &backup(&q2)) / (mdp.gamma() * max_diff(&q1, &q2));
        worst = worst.max(ratio);
    }
    let tol = 1.0 + 1e-12;
    Ok(result(
        "soft optimality backup is a contraction",
        worst,
        tol,
        worst <= tol,
        format!("worst ‖TQ₁ − TQ₂‖/(γ‖Q₁ − Q₂‖) over {instances} pairs"),
        start,
    ))
}

/// Relative tolerance of the gradient checks.
pub const GRADIENT_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

/// Small agent with every parameter (biases included) drawn at random.
fn random_point_agent(point: usize) -> Result<(SacAgent, Batch, Tensor, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a4d_0000 + point as u64);
    let cfg = SacConfig {
        hidden_sizes: vec![8, 8],
        ..SacConfig::for_action_dim(2)
    };
    let mut agent = SacAgent::new(3, 2, cfg, rng.gen())?;
    let mut jitter = |net: &mut MlpParams| -> Result<()> {
        let flat: Vec<f64> = net.flatten().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        net.set_flat(&flat)
    };
    for net in agent.critics_mut().iter_mut() {
        jitter(net)?;
    }
    for net in agent.targets_mut().iter_mut() {
        jitter(net)?;
    }
    jitter(agent.actor_mut().trunk_mut())?;
    agent.set_log_alpha(rng.gen_range(-3.0..1.0));
    let transitions: Vec<Transition> = (0..4)
        .map(|i| {
            let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.95..0.95)).collect();
            Transition {
                state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                pre_squash: a.iter().map(|v: &f64| v.atanh()).collect(),
                action: a,
                reward: rng.gen_range(-1.0..1.0),
                next_state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                terminal: i == 3,
            }
        })
        .collect();
    let batch = Batch::from_transitions(&transitions)?;
    let noise = Tensor::matrix(4, 2, (0..8).map(|_| rng.sample(StandardNormal)).collect())?;
    Ok((agent, batch, noise, rng))
}

fn flat_grads(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().iter().copied()).collect()
}

fn gradient_result(name: &str, worst: f64, points: usize, start: Instant) -> CheckResult {
    result(
        name,
        worst,
        GRADIENT_TOL,
        worst <= GRADIENT_TOL,
        format!("max relative error over {points} random parameter points"),
        start,
    )
}

/// Critic loss gradient for both critics with the bootstrapped targets held
/// fixed.
pub fn critic_gradient_check(points: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let (agent, batch, noise, _) = random_point_agent(p)?;
        let y = agent.critic_target(&batch, &noise)?;
        for k in 0..agent.critics().len() {
            let point = agent.critics()[k].flatten();
            let err = finite_difference_check(
                |x| {
                    let mut probe = agent.clone();
                    probe.critics_mut()[k].set_flat(x)?;
                    let l = probe.critic_loss(&batch, &y)?.swap_remove(k);
                    Ok((l.value, flat_grads(&l.grads)))
                },
                &point,
                FD_STEP,
            )?;
            worst = worst.max(err);
        }
    }
    Ok(gradient_result("critic loss gradient", worst, points, start))
}

/// Actor loss gradient with the reparameterization noise frozen.
pub fn actor_gradient_check(points: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let (agent, batch, noise, _) = random_point_agent(p)?;
        let point = agent.actor().trunk().flatten();
        let err = finite_difference_check(
            |x| {
                let mut probe = agent.clone();
                probe.actor_mut().trunk_mut().set_flat(x)?;
                let l = probe.actor_loss(&batch.states, &noise)?;
                Ok((l.value, flat_grads(&l.grads)))
            },
            &point,
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(gradient_result("actor loss gradient", worst, points, start))
}

/// Temperature loss gradient with respect to `log α`.
pub fn temperature_gradient_check(points: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e40_0000 + p as u64);
        let n = rng.gen_range(1..=16);
        let lp = Tensor::matrix(n, 1, (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect())?;
        let target = rng.gen_range(-3.0..1.0);
        let la: f64 = rng.gen_range(-5.0..2.0);
        let err = finite_difference_check(
            |x| {
                let (v, d) = temperature_loss_at(x[0], &lp, target)?;
                Ok((v, vec![d]))
            },
            &[la],
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(gradient_result("temperature loss gradient", worst, points, start))
}

/// Gradient of the summed squashed log-likelihood of reparameterized
/// samples with respect to the policy parameters.
pub fn log_prob_gradient_check(points: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let (agent, batch, noise, _) = random_point_agent(p)?;
        let point = agent.actor().trunk().flatten();
        let err = finite_difference_check(
            |x| {
                let mut probe = agent.actor().clone();
                probe.trunk_mut().set_flat(x)?;
                let mut g = Graph::new();
                let s = g.constant(batch.states.clone());
                let e = g.constant(noise.clone());
                let sample = probe.build_sample(&mut g, s, e, ParamMode::Variable);
                let total = g.sum(sample.log_prob);
                let value = g.eval(&Bindings::new(), total)?.item();
                g.backward(total)?;
                let grads: Vec<Tensor> = sample.params.iter().map(|&n| g.grad(n)).collect();
                Ok((value, flat_grads(&grads)))
            },
            &point,
            FD_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(gradient_result("squashed log-likelihood gradient", worst, points, start))
}

/// Log-density `log p(a)` of a 1-D squashed Gaussian at `a = tanh(u)` for
/// a batch of pre-squash points `u`, computed with the policy's graph head.
pub fn squashed_log_density(mean: f64, log_std: f64, us: &[f64]) -> Result<Vec<f64>> {
    let n = us.len();
    let std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
    let mut g = Graph::new();
    let m = g.constant(Tensor::matrix(n, 1, vec![mean; n])?);
    let ls = g.constant(Tensor::matrix(n, 1, vec![log_std; n])?);
    let e = g.constant(Tensor::matrix(n, 1, us.iter().map(|u| (u - mean) / std).collect())?);
    let head = squash_head(&mut g, m, ls, e);
    Ok(g.eval(&Bindings::new(), head.log_prob)?.into_data())
}

/// `∫ p(a) da` over `(−1, 1)` for a 1-D squashed Gaussian, computed as
/// `∫ p(tanh u)·sech²(u) du` over `μ ± 40σ` split at `μ`, with `sech²`
/// evaluated directly from `cosh`.
pub fn squashed_mass(mean: f64, log_std: f64) -> Result<f64> {
    let std = log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
    let f = |us: &[f64]| {
        let lp = squashed_log_density(mean, log_std, us).expect("finite density");
        lp.iter().zip(us).map(|(l, u)| l.exp() / u.cosh().powi(2)).collect()
    };
    let (left, _) = integrate_batched(f, mean - 40.0 * std, mean, 1e-12, 10_000);
    let (right, _) = integrate_batched(f, mean, mean + 40.0 * std, 1e-12, 10_000);
    Ok(left + right)
}

/// Normalization of 1-D squashed Gaussians with means in `[−3, 3]` and
/// log standard deviations spanning the clamp range.
pub fn density_normalization_check(cases: usize) -> Result<CheckResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xde75_1717);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let mean = rng.gen_range(-3.0..3.0);
        let log_std = rng.gen_range(LOG_STD_MIN..=LOG_STD_MAX);
        worst = worst.max((squashed_mass(mean, log_std)? - 1.0).abs());
    }
    let tol = 1e-4;
    Ok(result(
        "squashed density integrates to one",
        worst,
        tol,
        worst <= tol,
        format!("max |mass − 1| over {cases} (μ, log σ) pairs"),
        start,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_usage_error() {
        assert!(matches!("bogus".parse::<Suite>(), Err(Error::Usage(_))));
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
    }

    #[test]
    fn instance_family_covers_every_pairing() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..9 {
            let (mdp, alpha, _) = random_instance(i);
            seen.insert(((mdp.gamma() * 100.0) as i64, (alpha * 10.0) as i64));
            assert!((1..=6).contains(&mdp.n_states()) && (2..=4).contains(&mdp.n_actions()));
        }
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn small_runs_of_each_check_pass() {
        for c in [
            soft_evaluation_check(5).unwrap(),
            improvement_check(5).unwrap(),
            policy_iteration_check(5).unwrap(),
            zero_temperature_check(5).unwrap(),
            finite_horizon_dual_check(5).unwrap(),
            contraction_check(5).unwrap(),
            critic_gradient_check(2).unwrap(),
            actor_gradient_check(2).unwrap(),
            temperature_gradient_check(5).unwrap(),
            log_prob_gradient_check(2).unwrap(),
            density_normalization_check(5).unwrap(),
        ] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn a_density_missing_the_tanh_correction_would_be_caught() {
        let f = |us: &[f64]| -> Vec<f64> {
            let lp = squashed_log_density(0.5, 0.8, us).unwrap();
            lp.iter().zip(us).map(|(l, u)| (l + (1.0 - u.tanh().powi(2)).ln()).exp() / u.cosh().powi(2)).collect()
        };
        let (mass, _) = integrate_batched(f, 0.5 - 40.0 * 0.8f64.exp(), 0.5 + 40.0 * 0.8f64.exp(), 1e-10, 1000);
        assert!((mass - 1.0).abs() > 0.1, "{mass}");
        assert!((squashed_mass(0.5, 0.8).unwrap() - 1.0).abs() < 1e-8);
    }
}
