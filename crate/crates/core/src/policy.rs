//! Tanh-squashed diagonal Gaussian policies.
//!
//! A trunk network maps a state to `(μ, log σ)`. Samples are drawn by
//! reparameterization, `u = μ + σ ⊙ ε` with `ε ~ N(0, I)`, and squashed to
//! `a = tanh(u)`. The log-likelihood of `a` is the Gaussian log-density of
//! `u` minus the log-determinant of the tanh Jacobian,
//! `Σᵢ log(1 − tanh²(uᵢ))`, which is evaluated through the softplus identity
//! so it stays finite for large `|u|`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Bindings, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{MlpParams, ParamMode};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `½·log(2π)`.
pub const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub pre_squash: Vec<f64>,
    pub action: Vec<f64>,
    /// Log-density of `action`, in nats.
    pub log_prob: f64,
}

/// Graph nodes produced by [`squash_head`] and [`SquashedGaussianPolicy::build_sample`].
#[derive(Clone, Debug)]
pub struct SampleNodes {
    pub pre_squash: NodeId,
    pub action: NodeId,
    /// `[n, 1]` log-likelihoods.
    pub log_prob: NodeId,
    pub mean: NodeId,
    pub log_std: NodeId,
    /// Trunk parameter leaves (empty for [`squash_head`]).
    pub params: Vec<NodeId>,
}

/// Reparameterized squashed sample from `(mean, log_std)` nodes and a noise
/// node, all `[n, D]`.
pub fn squash_head(g: &mut Graph, mean: NodeId, log_std: NodeId, noise: NodeId) -> SampleNodes {
    let log_std_c = g.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = g.exp(log_std_c);
    let spread = g.mul(std, noise);
    let pre_squash = g.add(mean, spread);
    let action = g.tanh(pre_squash);

    // log N(u; μ, σ) with (u − μ)/σ = ε exactly.
    let sq = g.square(noise);
    let quad = g.scale(sq, -0.5);
    let gauss = g.sub(quad, log_std_c);
    let gauss = g.offset(gauss, -HALF_LOG_TWO_PI);
    let jac = g.log_one_minus_tanh_sq(pre_squash);
    let per_dim = g.sub(gauss, jac);
    let log_prob = g.sum_cols(per_dim);
    g.label(log_prob, "policy log-prob");
    SampleNodes {
        pre_squash,
        action,
        log_prob,
        mean,
        log_std,
        params: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussianPolicy {
    trunk: MlpParams,
    action_dim: usize,
}

/// Monte-Carlo entropy estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub entropy: f64,
    pub std_error: f64,
}

impl SquashedGaussianPolicy {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(state_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self::from_trunk(MlpParams::init(&sizes, seed)?)
    }

    pub fn from_trunk(trunk: MlpParams) -> Result<Self> {
        let out = trunk.output_dim();
        if !out.is_multiple_of(2) {
            return Err(Error::Structural(format!(
                "policy trunk must emit mean and log-std halves, got {out} outputs"
            )));
        }
        Ok(Self {
            trunk,
            action_dim: out / 2,
        })
    }

    pub fn trunk(&self) -> &MlpParams {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut MlpParams {
        &mut self.trunk
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Records the policy on `g` for a `[n, state_dim]` state node and a
    /// `[n, D]` noise node.
    pub fn build_sample(&self, g: &mut Graph, states: NodeId, noise: NodeId, mode: ParamMode) -> SampleNodes {
        let trunk = self.trunk.build(g, states, mode);
        let d = self.action_dim;
        let mean = g.slice_cols(trunk.output, 0, d);
        let log_std = g.slice_cols(trunk.output, d, 2 * d);
        let mut nodes = squash_head(g, mean, log_std, noise);
        nodes.params = trunk.params;
        nodes
    }

    fn check_state(&self, states: &Tensor) -> Result<()> {
        if states.cols() != self.state_dim() {
            return Err(Error::Structural(format!(
                "state has {} features, policy expects {}",
                states.cols(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// Batched reparameterized samples for `[n, state_dim]` states and
    /// `[n, D]` noise. Returns `(pre_squash, action, log_prob [n, 1])`.
    pub fn sample_batch(&self, states: &Tensor, noise: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_state(states)?;
        if noise.cols() != self.action_dim || noise.rows() != states.rows() {
            return Err(Error::Structural(format!(
                "noise shape {:?} does not match {} states of action dimension {}",
                noise.shape(),
                states.rows(),
                self.action_dim
            )));
        }
        let mut g = Graph::new();
        let s = g.constant(states.clone());
        let e = g.constant(noise.clone());
        let nodes = self.build_sample(&mut g, s, e, ParamMode::Constant);
        g.forward(&Bindings::new())?;
        let get = |n: NodeId| g.value(n).expect("evaluated").clone();
        Ok((get(nodes.pre_squash), get(nodes.action), get(nodes.log_prob)))
    }

    /// Single reparameterized sample at `state` with the given noise.
    pub fn sample(&self, state: &[f64], noise: &[f64]) -> Result<ActionSample> {
        if noise.len() != self.action_dim {
            return Err(Error::Structural(format!(
                "noise has dimension {}, policy acts in {}",
                noise.len(),
                self.action_dim
            )));
        }
        let s = Tensor::matrix(1, state.len(), state.to_vec())?;
        let e = Tensor::matrix(1, noise.len(), noise.to_vec())?;
        let (u, a, lp) = self.sample_batch(&s, &e)?;
        Ok(ActionSample {
            pre_squash: u.into_data(),
            action: a.into_data(),
            log_prob: lp.item(),
        })
    }

    /// Draws standard-normal noise and samples.
    pub fn sample_random<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActionSample> {
        let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sample(state, &noise)
    }

    /// `tanh(μ(s))`, the deterministic evaluation action. Bitwise equal to
    /// the action of [`Self::sample`] with zero noise.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sample(state, &vec![0.0; self.action_dim])?.action)
    }

    /// `(μ(s), clamped log σ(s))`.
    pub fn moments(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = Tensor::matrix(1, state.len(), state.to_vec())?;
        self.check_state(&s)?;
        let out = self.trunk.apply(&s)?;
        let d = self.action_dim;
        let mean = out.data()[..d].to_vec();
        let log_std = out.data()[d..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok((mean, log_std))
    }

    /// Log-likelihood of `tanh(u)` given a stored pre-squash value `u`,
    /// avoiding `atanh` of actions near the boundary.
    pub fn log_prob_of_pre_squash(&self, state: &[f64], pre_squash: &[f64]) -> Result<f64> {
        let (mean, log_std) = self.moments(state)?;
        if pre_squash.len() != self.action_dim {
            return Err(Error::Structural("pre-squash action has the wrong dimension".into()));
        }
        let noise: Vec<f64> = pre_squash
            .iter()
            .zip(&mean)
            .zip(&log_std)
            .map(|((u, m), ls)| (u - m) / ls.exp())
            .collect();
        let mut g = Graph::new();
        let m = g.constant(Tensor::matrix(1, mean.len(), mean)?);
        let ls = g.constant(Tensor::matrix(1, log_std.len(), log_std)?);
        let e = g.constant(Tensor::matrix(1, noise.len(), noise)?);
        let nodes = squash_head(&mut g, m, ls, e);
        Ok(g.eval(&Bindings::new(), nodes.log_prob)?.item())
    }

    /// `−(1/n) Σ log π(aᵢ|s)` over `n` fresh samples at `state`.
    pub fn entropy_estimate<R: Rng + ?Sized>(&self, state: &[f64], n: usize, rng: &mut R) -> Result<EntropyEstimate> {
        if n == 0 {
            return Err(Error::Usage("entropy estimate needs at least one sample".into()));
        }
        let d = self.action_dim;
        let mut states = Vec::with_capacity(n * state.len());
        for _ in 0..n {
            states.extend_from_slice(state);
        }
        let noise: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let (_, _, lp) = self.sample_batch(
            &Tensor::matrix(n, state.len(), states)?,
            &Tensor::matrix(n, d, noise)?,
        )?;
        let neg: Vec<f64> = lp.data().iter().map(|v| -v).collect();
        let mean = neg.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = neg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Ok(EntropyEstimate {
            entropy: mean,
            std_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A one-layer trunk whose output is exactly `(mean, log_std)`
    /// regardless of the state (zero weights, biases carry the moments).
    fn constant_policy(mean: &[f64], log_std: &[f64]) -> SquashedGaussianPolicy {
        let d = mean.len();
        let w = Tensor::zeros(&[1, 2 * d]);
        let mut b = mean.to_vec();
        b.extend_from_slice(log_std);
        SquashedGaussianPolicy::from_trunk(MlpParams::from_tensors(vec![w, Tensor::vector(b)]).unwrap()).unwrap()
    }

    #[test]
    fn zero_noise_returns_squashed_mean() {
        let p = SquashedGaussianPolicy::new(3, 2, &[16], 4).unwrap();
        let s = [0.3, -0.2, 1.0];
        let sample = p.sample(&s, &[0.0, 0.0]).unwrap();
        let (mean, _) = p.moments(&s).unwrap();
        assert_eq!(sample.pre_squash, mean);
        let squashed: Vec<f64> = mean.iter().map(|m| m.tanh()).collect();
        assert_eq!(sample.action, squashed);
        assert_eq!(p.mean_action(&s).unwrap(), sample.action);
    }

    #[test]
    fn standard_normal_at_zero_has_no_jacobian_correction() {
        let p = constant_policy(&[0.0], &[0.0]);
        let s = p.sample(&[0.0], &[0.0]).unwrap();
        assert!((s.log_prob - -0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn log_prob_at_half_sigma_matches_high_precision_value() {
        // −0.125 − ½log 2π − log(1 − tanh²(0.5)), 50-digit mpmath.
        let p = constant_policy(&[0.0], &[0.0]);
        let s = p.sample(&[0.0], &[0.5]).unwrap();
        assert!((s.log_prob - -0.803_709_519_288_117_7).abs() < 1e-14, "{}", s.log_prob);
    }

    #[test]
    fn mean_action_saturates_but_stays_inside() {
        let p = constant_policy(&[40.0, -40.0], &[0.0, 0.0]);
        let a = p.mean_action(&[0.0]).unwrap();
        // tanh(40) rounds to 1 in f64; the open-interval guarantee is about
        // the moderately large pre-squash values the clamp admits.
        assert!(a[0] <= 1.0 && a[1] >= -1.0);
        let p = constant_policy(&[8.0], &[0.0]);
        let a = p.mean_action(&[0.0]).unwrap()[0];
        assert!(a > 0.9999 && a < 1.0);
        let p = constant_policy(&[0.0], &[0.0]);
        assert_eq!(p.mean_action(&[5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn log_std_is_clamped() {
        let p = constant_policy(&[0.0], &[50.0]);
        let (_, ls) = p.moments(&[0.0]).unwrap();
        assert_eq!(ls, vec![LOG_STD_MAX]);
        let p = constant_policy(&[0.0], &[-50.0]);
        let s = p.sample(&[0.0], &[1.0]).unwrap();
        assert!((s.pre_squash[0] - LOG_STD_MIN.exp()).abs() < 1e-20);
    }

    #[test]
    fn change_of_variables_consistency() {
        let p = SquashedGaussianPolicy::new(2, 3, &[8], 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let state = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let s = p.sample_random(&state, &mut rng).unwrap();
            let (mean, log_std) = p.moments(&state).unwrap();
            let mut density = 1.0;
            for i in 0..3 {
                let sigma = log_std[i].exp();
                let z = (s.pre_squash[i] - mean[i]) / sigma;
                let gauss = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let jac = 1.0 / s.pre_squash[i].cosh().powi(2);
                density *= gauss / jac;
            }
            let rel = (s.log_prob.exp() - density).abs() / density;
            assert!(rel < 1e-10, "{rel}");
            for (a, u) in s.action.iter().zip(&s.pre_squash) {
                assert_eq!(*a, u.tanh());
                assert!(a.abs() < 1.0);
            }
            let again = p.log_prob_of_pre_squash(&state, &s.pre_squash).unwrap();
            assert!((again - s.log_prob).abs() < 1e-9);
        }
    }

    #[test]
    fn monte_carlo_entropy_agrees_with_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (mean, log_std) in [(0.0, 0.0), (1.0, -1.0), (-0.5, 1.0), (2.0, -3.0)] {
            let p = constant_policy(&[mean], &[log_std]);
            let sigma = f64::exp(log_std);
            let integrand = |u: f64| {
                let z = (u - mean) / sigma;
                let gauss = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                -gauss * p.log_prob_of_pre_squash(&[0.0], &[u]).unwrap()
            };
            let (exact, _) = crate::quadrature::integrate(integrand, mean - 40.0 * sigma, mean + 40.0 * sigma, 1e-12, 5000);
            let mc = p.entropy_estimate(&[0.0], 20_000, &mut rng).unwrap();
            assert!((mc.entropy - exact).abs() < 3.0 * mc.std_error, "{mean} {log_std}: {} vs {exact}", mc.entropy);
        }
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let p = SquashedGaussianPolicy::new(2, 1, &[4], 0).unwrap();
        assert!(matches!(p.sample(&[0.0, 0.0], &[0.0, 0.0]), Err(Error::Structural(_))));
        assert!(matches!(p.sample(&[0.0], &[0.0]), Err(Error::Structural(_))));
    }

    #[test]
    fn near_deterministic_policy_has_very_negative_entropy() {
        let p = constant_policy(&[0.1], &[LOG_STD_MIN]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = p.entropy_estimate(&[0.0], 100, &mut rng).unwrap();
        assert!(h.entropy < -15.0, "{}", h.entropy);
    }

    #[test]
    fn reparameterization_gradient_matches_finite_differences() {
        let eps = [0.7, -1.3];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut g = Graph::new();
            let m = g.variable(Tensor::matrix(1, 2, x[0..2].to_vec())?);
            let ls = g.variable(Tensor::matrix(1, 2, x[2..4].to_vec())?);
            let e = g.constant(Tensor::matrix(1, 2, eps.to_vec())?);
            let nodes = squash_head(&mut g, m, ls, e);
            // Mix log-prob and actions so both paths are exercised.
            let a_sum = g.sum(nodes.action);
            let lp = g.sum(nodes.log_prob);
            let out = g.add(lp, a_sum);
            g.forward(&Bindings::new())?;
            g.backward(out)?;
            let mut grad = g.grad(m).into_data();
            grad.extend(g.grad(ls).into_data());
            Ok((g.value(out).unwrap().item(), grad))
        };
        let err = finite_difference_check(f, &[0.2, -0.4, -0.3, 0.5], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
