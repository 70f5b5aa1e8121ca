//! Randomized invariants across the public API.

use maxent_sac::autodiff::{finite_difference_check, Bindings, Graph, Tensor};
use maxent_sac::env::{make_env, ActionScaler};
use maxent_sac::nn::{polyak_update, AdamConfig, AdamState, MlpParams, ParamMode};
use maxent_sac::policy::SquashedGaussianPolicy;
use maxent_sac::quadrature::integrate;
use maxent_sac::tabular::{
    soft_evaluation_linear_solve, soft_policy_evaluation, soft_policy_improvement, soft_policy_iteration, TabularMdp,
    TabularPolicy,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest pre-squash magnitude well below where `tanh` rounds to ±1 in f64.
const TANH_BELOW_ONE: f64 = 18.0;

fn mdp_from(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> (TabularMdp, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (TabularMdp::random(n_states, n_actions, gamma, &mut rng), rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iterative_evaluation_matches_linear_solve(
        seed in any::<u64>(),
        n_states in 1usize..=6,
        n_actions in 2usize..=4,
        gamma in 0.0f64..0.95,
        alpha in 0.05f64..5.0,
    ) {
        let (mdp, mut rng) = mdp_from(seed, n_states, n_actions, gamma);
        let policy = TabularPolicy::random(n_states, n_actions, &mut rng);
        let iterative = soft_policy_evaluation(&mdp, &policy, alpha, 1e-12).unwrap();
        let direct = soft_evaluation_linear_solve(&mdp, &policy, alpha).unwrap();
        prop_assert!(iterative.max_abs_diff(&direct) <= 1e-8);
    }

    #[test]
    fn improved_policies_are_distributions_within_the_entropy_bound(
        seed in any::<u64>(),
        n_states in 1usize..=6,
        n_actions in 2usize..=4,
        alpha in 0.01f64..10.0,
    ) {
        let (mdp, mut rng) = mdp_from(seed, n_states, n_actions, 0.9);
        let policy = TabularPolicy::random(n_states, n_actions, &mut rng);
        let q = soft_policy_evaluation(&mdp, &policy, alpha, 1e-10).unwrap();
        let improved = soft_policy_improvement(&q);
        for s in 0..n_states {
            let row = improved.row(s);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(improved.entropy(s) <= (n_actions as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn soft_policy_iteration_never_lowers_q(
        seed in any::<u64>(),
        n_states in 1usize..=5,
        n_actions in 2usize..=4,
        alpha in 0.1f64..5.0,
    ) {
        let (mdp, _) = mdp_from(seed, n_states, n_actions, 0.9);
        let outcome = soft_policy_iteration(&mdp, alpha, 1e-9, 500).unwrap();
        for pair in outcome.trace.windows(2) {
            for (old, new) in pair[0].q.iter().zip(&pair[1].q) {
                prop_assert!(*new >= old - 1e-9, "{new} < {old}");
            }
        }
    }

    #[test]
    fn policy_samples_are_exact_tanh_images_inside_the_box(
        seed in any::<u64>(),
        state in prop::collection::vec(-3.0f64..3.0, 3),
        noise in prop::collection::vec(-4.0f64..4.0, 2),
    ) {
        let policy = SquashedGaussianPolicy::new(3, 2, &[8, 8], seed).unwrap();
        let sample = policy.sample(&state, &noise).unwrap();
        for (&a, &u) in sample.action.iter().zip(&sample.pre_squash) {
            prop_assert_eq!(a, u.tanh());
            prop_assert!(a.abs() <= 1.0);
            if u.abs() < TANH_BELOW_ONE {
                prop_assert!(a.abs() < 1.0);
            }
        }
        prop_assert!(sample.log_prob.is_finite());
        prop_assert_eq!(&sample, &policy.sample(&state, &noise).unwrap());
        let mean = policy.mean_action(&state).unwrap();
        prop_assert_eq!(mean, policy.sample(&state, &[0.0, 0.0]).unwrap().action);
    }

    #[test]
    fn mlp_gradients_match_central_differences(
        seed in any::<u64>(),
        input in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let net = MlpParams::init(&[3, 5, 1], seed).unwrap();
        let x = Tensor::matrix(2, 3, input).unwrap();
        let loss_and_grad = |flat: &[f64]| {
            let mut params = net.clone();
            params.set_flat(flat)?;
            let mut g = Graph::new();
            let inp = g.constant(x.clone());
            let nodes = params.build(&mut g, inp, ParamMode::Variable);
            let sq = g.square(nodes.output);
            let loss = g.mean(sq);
            g.forward(&Bindings::new())?;
            let value = g.value(loss).expect("evaluated").item();
            g.backward(loss)?;
            let grad = nodes.params.iter().flat_map(|&p| g.grad(p).into_data()).collect();
            Ok((value, grad))
        };
        let err = finite_difference_check(loss_and_grad, &net.flatten(), 1e-6).unwrap();
        prop_assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn polyak_stays_between_target_and_online(
        target in prop::collection::vec(-5.0f64..5.0, 4),
        online in prop::collection::vec(-5.0f64..5.0, 4),
        tau in 0.0f64..=1.0,
    ) {
        let mut t = vec![Tensor::vector(target.clone())];
        let o = vec![Tensor::vector(online.clone())];
        polyak_update(&mut t, &o, tau).unwrap();
        for ((&new, &before), &on) in t[0].data().iter().zip(&target).zip(&online) {
            prop_assert!(new >= before.min(on) - 1e-12 && new <= before.max(on) + 1e-12);
        }
    }

    #[test]
    fn first_adam_step_moves_each_parameter_by_the_learning_rate(
        params in prop::collection::vec(-1.0f64..1.0, 5),
        grads in prop::collection::vec(prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0], 5),
    ) {
        let lr = 1e-3;
        let mut p = vec![Tensor::vector(params.clone())];
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(p.iter_mut(), &[Tensor::vector(grads.clone())], lr).unwrap();
        for ((&new, &old), &g) in p[0].data().iter().zip(&params).zip(&grads) {
            let moved = old - new;
            prop_assert!((moved - lr * g.signum()).abs() <= 1e-6 * lr, "moved {moved} for gradient {g}");
        }
    }

    #[test]
    fn environments_replay_identically_and_respect_reward_bounds(
        seed in any::<u64>(),
        env_index in 0usize..3,
    ) {
        let name = ["point-mass-2d", "pendulum-swingup", "multigoal-2d"][env_index];
        let mut env = make_env(name, &serde_json::Value::Null).unwrap();
        let spec = env.spec().clone();
        let scaler = ActionScaler::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions: Vec<Vec<f64>> = (0..50)
            .map(|_| scaler.to_env(&(0..spec.action_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let mut run = || {
            let mut trace = vec![env.reset(seed)];
            for a in &actions {
                let out = env.step(a).unwrap();
                assert!(out.reward >= spec.reward_bounds.0 && out.reward <= spec.reward_bounds.1);
                trace.push(out.observation);
                if out.terminal || out.truncated {
                    break;
                }
            }
            trace
        };
        let first = run();
        prop_assert_eq!(first, run());
    }

    #[test]
    fn quadrature_integrates_cubics_exactly(
        c in prop::collection::vec(-3.0f64..3.0, 4),
        a in -2.0f64..0.0,
        width in 0.1f64..4.0,
    ) {
        let b = a + width;
        let antiderivative = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
        let (value, _) = integrate(|x| c[0] + c[1] * x + c[2] * x * x + c[3] * x.powi(3), a, b, 1e-12, 64);
        prop_assert!((value - (antiderivative(b) - antiderivative(a))).abs() <= 1e-10);
    }
}
