//! Soft actor-critic learner: soft Q-critics with Polyak-averaged targets,
//! a reparameterized squashed-Gaussian actor, and a learned temperature.
//!
//! Losses for a minibatch `(s, a, r, s', d)`:
//!
//! ```text
//! y       = r + (1 − d)·γ·(min_i Q̄_i(s', a') − α·log π(a'|s')),  a' ~ π(·|s')
//! J_Q(θᵢ) = mean ½·(Q_θᵢ(s, a) − y)²
//! J_π(φ)  = mean (α·log π(ã|s) − min_i Q_θᵢ(s, ã)),  ã = tanh(μ + σ⊙ε)
//! J(α)    = mean (−α·log π(ã|s) − α·H̄)
//! ```
//!
//! The temperature is optimized through `log α` so it stays positive.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, NodeId, Tensor};
use crate::checkpoint::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, polyak_update, AdamConfig, AdamState, MlpParams, ParamMode};
use crate::policy::{ActionSample, SquashedGaussianPolicy};
use crate::replay::Batch;

/// Learner hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_alpha: f64,
    /// Minimum expected entropy in nats; ignored when `fixed_alpha` is set.
    pub entropy_target: f64,
    /// Constant temperature; disables temperature learning.
    pub fixed_alpha: Option<f64>,
    /// Starting temperature when it is learned.
    pub initial_alpha: f64,
    pub hidden_sizes: Vec<usize>,
    pub twin_critics: bool,
    /// Global-norm gradient clipping per parameter group.
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
}

impl SacConfig {
    /// Standard settings for an action space of dimension `action_dim`.
    pub fn for_action_dim(action_dim: usize) -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr_critic: 3e-4,
            lr_actor: 3e-4,
            lr_alpha: 3e-4,
            entropy_target: -(action_dim as f64),
            fixed_alpha: None,
            initial_alpha: 1.0,
            hidden_sizes: vec![256, 256],
            twin_critics: true,
            grad_clip: None,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        for (name, lr) in [("lr_critic", self.lr_critic), ("lr_actor", self.lr_actor), ("lr_alpha", self.lr_alpha)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.entropy_target.is_finite() {
            return Err(Error::Config("entropy target must be finite".into()));
        }
        if let Some(a) = self.fixed_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("fixed temperature {a} must be positive")));
            }
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return Err(Error::Config("initial temperature must be positive".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("gradient clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-update diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    /// One entry per critic.
    pub critic_losses: Vec<f64>,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    /// Temperature used by this update's losses.
    pub alpha: f64,
    pub mean_log_prob: f64,
    pub mean_q_min: f64,
}

impl UpdateMetrics {
    /// `−mean log π`, the batch entropy estimate.
    pub fn entropy(&self) -> f64 {
        -self.mean_log_prob
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// A scalar loss with gradients for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrads {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

/// Actor loss with the intermediate quantities reused by the temperature update.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorLoss {
    pub value: f64,
    pub grads: Vec<Tensor>,
    /// `[n, 1]` log-likelihoods of the sampled actions.
    pub log_probs: Tensor,
    /// `[n, 1]` critic minimum at the sampled actions.
    pub q_min: Tensor,
    /// Gradients reaching the critic parameter leaves (zero by construction).
    pub critic_grads: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacAgent {
    config: SacConfig,
    state_dim: usize,
    action_dim: usize,
    critics: Vec<MlpParams>,
    targets: Vec<MlpParams>,
    actor: SquashedGaussianPolicy,
    log_alpha: f64,
    critic_opt: AdamState,
    actor_opt: AdamState,
    alpha_opt: AdamState,
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("positive shape")
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut out = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        out.extend_from_slice(a.row(i));
        out.extend_from_slice(b.row(i));
    }
    Tensor::matrix(n, ca + cb, out)
}

impl SacAgent {
    /// Fresh agent; every network gets its own seed derived from `seed`, so
    /// the two critics start from independent initializations.
    pub fn new(state_dim: usize, action_dim: usize, config: SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::Config("state and action dimensions must be positive".into()));
        }
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let actor = SquashedGaussianPolicy::new(state_dim, action_dim, &config.hidden_sizes, seeds.gen())?;
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(&config.hidden_sizes);
        sizes.push(1);
        let n_critics = if config.twin_critics { 2 } else { 1 };
        let critics = (0..n_critics)
            .map(|_| MlpParams::init(&sizes, seeds.gen()))
            .collect::<Result<Vec<_>>>()?;
        let targets = critics.clone();
        let log_alpha = config.fixed_alpha.unwrap_or(config.initial_alpha).ln();
        let critic_opt = AdamState::new(critics.iter().flat_map(|c| c.tensors()), config.adam);
        let actor_opt = AdamState::new(actor.trunk().tensors(), config.adam);
        let alpha_opt = AdamState::new([&Tensor::scalar(log_alpha)], config.adam);
        Ok(Self {
            config,
            state_dim,
            action_dim,
            critics,
            targets,
            actor,
            log_alpha,
            critic_opt,
            actor_opt,
            alpha_opt,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor(&self) -> &SquashedGaussianPolicy {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut SquashedGaussianPolicy {
        &mut self.actor
    }

    pub fn critics(&self) -> &[MlpParams] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [MlpParams] {
        &mut self.critics
    }

    pub fn targets(&self) -> &[MlpParams] {
        &self.targets
    }

    pub fn targets_mut(&mut self) -> &mut [MlpParams] {
        &mut self.targets
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Overrides `log α` (used by tests and resumption).
    pub fn set_log_alpha(&mut self, log_alpha: f64) {
        self.log_alpha = log_alpha;
    }

    pub fn learns_temperature(&self) -> bool {
        self.config.fixed_alpha.is_none()
    }

    /// Exchanges the two critics and their targets.
    pub fn swap_critics(&mut self) {
        self.critics.reverse();
        self.targets.reverse();
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        if batch.states.cols() != self.state_dim || batch.actions.cols() != self.action_dim {
            return Err(Error::Structural(format!(
                "batch has state/action widths {}/{}, agent expects {}/{}",
                batch.states.cols(),
                batch.actions.cols(),
                self.state_dim,
                self.action_dim
            )));
        }
        Ok(())
    }

    /// Elementwise minimum over a set of critics evaluated directly.
    fn min_q(nets: &[MlpParams], inputs: &Tensor) -> Result<Tensor> {
        let mut out = nets[0].apply(inputs)?;
        for net in &nets[1..] {
            let q = net.apply(inputs)?;
            for (o, v) in out.data_mut().iter_mut().zip(q.data()) {
                if *v < *o {
                    *o = *v;
                }
            }
        }
        Ok(out)
    }

    /// Bootstrapped critic targets `y` (`[n, 1]`) with next actions drawn
    /// from `next_noise` (`[n, D]`). No gradient flows through the result.
    pub fn critic_target(&self, batch: &Batch, next_noise: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let (_, next_actions, next_log_probs) = self.actor.sample_batch(&batch.next_states, next_noise)?;
        let q_next = Self::min_q(&self.targets, &concat_rows(&batch.next_states, &next_actions)?)?;
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        let mut y = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let soft_value = q_next.data()[i] - alpha * next_log_probs.data()[i];
            let bootstrap = if batch.terminals.data()[i] != 0.0 { 0.0 } else { gamma * soft_value };
            let yi = batch.rewards.data()[i] + bootstrap;
            if !yi.is_finite() {
                return Err(Error::numerical(
                    format!("critic target for batch transition {i}"),
                    format!("non-finite target from {:?}", batch.transition(i)),
                ));
            }
            y.push(yi);
        }
        Tensor::matrix(batch.len(), 1, y)
    }

    /// `J_Q(θᵢ)` and its gradient for every critic, for fixed targets `y`.
    pub fn critic_loss(&self, batch: &Batch, targets: &Tensor) -> Result<Vec<LossAndGrads>> {
        self.check_batch(batch)?;
        let inputs = concat_rows(&batch.states, &batch.actions)?;
        let mut out = Vec::with_capacity(self.critics.len());
        for critic in &self.critics {
            let mut g = Graph::new();
            let x = g.constant(inputs.clone());
            let y = g.constant(targets.clone());
            let net = critic.build(&mut g, x, ParamMode::Variable);
            let diff = g.sub(net.output, y);
            let sq = g.square(diff);
            let mean = g.mean(sq);
            let loss = g.scale(mean, 0.5);
            g.label(loss, "critic loss");
            let value = g.eval(&Bindings::new(), loss)?.item();
            g.backward(loss)?;
            out.push(LossAndGrads {
                value,
                grads: net.params.iter().map(|&p| g.grad(p)).collect(),
            });
        }
        Ok(out)
    }

    /// Critic loss with the target computation recorded on the same graph and
    /// the target parameters entering as stop-gradient leaves. Returns the
    /// losses, the critic gradients and the gradients reaching the targets.
    pub fn critic_loss_through_targets(
        &self,
        batch: &Batch,
        next_noise: &Tensor,
    ) -> Result<(Vec<f64>, Vec<Vec<Tensor>>, Vec<Vec<Tensor>>)> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let s = g.constant(batch.states.clone());
        let a = g.constant(batch.actions.clone());
        let s2 = g.constant(batch.next_states.clone());
        let e = g.constant(next_noise.clone());
        let r = g.constant(batch.rewards.clone());
        let not_done = g.constant(batch.terminals.map(|d| 1.0 - d));
        let next = self.actor.build_sample(&mut g, s2, e, ParamMode::Constant);
        let sa2 = g.concat_cols(s2, next.action);
        let (q_next, target_nodes) = build_min_q(&mut g, &self.targets, sa2, ParamMode::Detached);
        let alpha = g.constant(Tensor::scalar(self.alpha()));
        let ent = g.mul_scalar(next.log_prob, alpha);
        let soft = g.sub(q_next, ent);
        let masked = g.mul(soft, not_done);
        let disc = g.scale(masked, self.config.gamma);
        let y = g.add(r, disc);
        let y = g.detach(y);
        let sa = g.concat_cols(s, a);
        let mut losses = Vec::new();
        let mut critic_nodes = Vec::new();
        let mut total = None;
        for critic in &self.critics {
            let net = critic.build(&mut g, sa, ParamMode::Variable);
            let diff = g.sub(net.output, y);
            let sq = g.square(diff);
            let mean = g.mean(sq);
            let loss = g.scale(mean, 0.5);
            losses.push(loss);
            critic_nodes.push(net.params);
            total = Some(match total {
                None => loss,
                Some(t) => g.add(t, loss),
            });
        }
        let total = total.expect("at least one critic");
        g.forward(&Bindings::new())?;
        let values = losses.iter().map(|&l| g.value(l).expect("evaluated").item()).collect();
        g.backward(total)?;
        let grads = |nodes: &Vec<Vec<NodeId>>| -> Vec<Vec<Tensor>> {
            nodes.iter().map(|ps| ps.iter().map(|&p| g.grad(p)).collect()).collect()
        };
        Ok((values, grads(&critic_nodes), grads(&target_nodes)))
    }

    /// `J_π(φ)` at `states` with frozen `noise`, using temperature `alpha`.
    /// Critic parameters enter as stop-gradient leaves so their (zero)
    /// gradients can be inspected.
    pub fn actor_loss_with_alpha(&self, states: &Tensor, noise: &Tensor, alpha: f64) -> Result<ActorLoss> {
        let mut g = Graph::new();
        let s = g.constant(states.clone());
        let e = g.constant(noise.clone());
        let sample = self.actor.build_sample(&mut g, s, e, ParamMode::Variable);
        let sa = g.concat_cols(s, sample.action);
        let (q_min, critic_nodes) = build_min_q(&mut g, &self.critics, sa, ParamMode::Detached);
        let a = g.constant(Tensor::scalar(alpha));
        let ent = g.mul_scalar(sample.log_prob, a);
        let diff = g.sub(ent, q_min);
        let loss = g.mean(diff);
        g.label(loss, "actor loss");
        let value = g.eval(&Bindings::new(), loss)?.item();
        g.backward(loss)?;
        Ok(ActorLoss {
            value,
            grads: sample.params.iter().map(|&p| g.grad(p)).collect(),
            log_probs: g.value(sample.log_prob).expect("evaluated").clone(),
            q_min: g.value(q_min).expect("evaluated").clone(),
            critic_grads: critic_nodes
                .iter()
                .map(|ps| ps.iter().map(|&p| g.grad(p)).collect())
                .collect(),
        })
    }

    /// [`actor_loss_with_alpha`](Self::actor_loss_with_alpha) at the current temperature.
    pub fn actor_loss(&self, states: &Tensor, noise: &Tensor) -> Result<ActorLoss> {
        self.actor_loss_with_alpha(states, noise, self.alpha())
    }

    /// `J(α)` at the current `log α` for fixed log-likelihoods, and its
    /// derivative with respect to `log α`.
    pub fn temperature_loss(&self, log_probs: &Tensor) -> Result<(f64, f64)> {
        temperature_loss_at(self.log_alpha, log_probs, self.config.entropy_target)
    }

    /// One learner step: critics, actor, temperature, then targets. On any
    /// error the agent is left exactly as it was.
    pub fn update_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateMetrics> {
        let saved = self.clone();
        let result = self.update_step_inner(batch, rng);
        if result.is_err() {
            *self = saved;
        }
        result
    }

    fn update_step_inner<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateMetrics> {
        self.check_batch(batch)?;
        let n = batch.len();
        let alpha = self.alpha();

        let next_noise = standard_normal(n, self.action_dim, rng);
        let y = self.critic_target(batch, &next_noise)?;
        let critic = self.critic_loss(batch, &y)?;
        let critic_losses: Vec<f64> = critic.iter().map(|c| c.value).collect();
        let mut critic_grads: Vec<Tensor> = critic.into_iter().flat_map(|c| c.grads).collect();
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut critic_grads, c);
        }
        self.critic_opt.step(
            self.critics.iter_mut().flat_map(|c| c.tensors_mut().iter_mut()),
            &critic_grads,
            self.config.lr_critic,
        )?;

        let noise = standard_normal(n, self.action_dim, rng);
        let actor = self.actor_loss_with_alpha(&batch.states, &noise, alpha)?;
        let mut actor_grads = actor.grads;
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut actor_grads, c);
        }
        self.actor_opt
            .step(self.actor.trunk_mut().tensors_mut().iter_mut(), &actor_grads, self.config.lr_actor)?;

        let (temperature_loss, d_log_alpha) = self.temperature_loss(&actor.log_probs)?;
        if self.learns_temperature() {
            let mut la = Tensor::scalar(self.log_alpha);
            self.alpha_opt
                .step([&mut la], &[Tensor::scalar(d_log_alpha)], self.config.lr_alpha)?;
            self.log_alpha = la.item();
        }

        for (target, online) in self.targets.iter_mut().zip(&self.critics) {
            polyak_update(target.tensors_mut(), online.tensors(), self.config.tau)?;
        }

        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
        let metrics = UpdateMetrics {
            critic_losses,
            actor_loss: actor.value,
            temperature_loss,
            alpha,
            mean_log_prob: mean(&actor.log_probs),
            mean_q_min: mean(&actor.q_min),
        };
        let finite = metrics.critic_losses.iter().all(|v| v.is_finite())
            && [metrics.actor_loss, metrics.temperature_loss, self.log_alpha].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::numerical("update step", format!("non-finite loss in {metrics:?}")));
        }
        Ok(metrics)
    }

    /// Action in the unit cube for one observation.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<ActionSample> {
        match mode {
            ActMode::Stochastic => self.actor.sample_random(state, rng),
            ActMode::Deterministic => self.actor.sample(state, &vec![0.0; self.action_dim]),
        }
    }

    fn adam_tensors(prefix: &str, opt: &AdamState, out: &mut Vec<NamedTensor>) {
        for (k, (m, v)) in opt.first_moment.iter().zip(&opt.second_moment).enumerate() {
            out.push((format!("{prefix}/m/{k}"), m.clone()));
            out.push((format!("{prefix}/v/{k}"), v.clone()));
        }
    }

    /// All learner state as named tensors plus JSON metadata.
    pub fn to_named_tensors(&self) -> (Vec<NamedTensor>, serde_json::Value) {
        let mut out = Vec::new();
        for (i, c) in self.critics.iter().enumerate() {
            for (k, t) in c.tensors().iter().enumerate() {
                out.push((format!("critic{i}/{k}"), t.clone()));
            }
        }
        for (i, c) in self.targets.iter().enumerate() {
            for (k, t) in c.tensors().iter().enumerate() {
                out.push((format!("target{i}/{k}"), t.clone()));
            }
        }
        for (k, t) in self.actor.trunk().tensors().iter().enumerate() {
            out.push((format!("actor/{k}"), t.clone()));
        }
        out.push(("log_alpha".into(), Tensor::scalar(self.log_alpha)));
        Self::adam_tensors("adam_critic", &self.critic_opt, &mut out);
        Self::adam_tensors("adam_actor", &self.actor_opt, &mut out);
        Self::adam_tensors("adam_alpha", &self.alpha_opt, &mut out);
        let meta = serde_json::json!({
            "config": self.config,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "adam_steps": [self.critic_opt.step_count, self.actor_opt.step_count, self.alpha_opt.step_count],
        });
        (out, meta)
    }

    /// Inverse of [`to_named_tensors`](Self::to_named_tensors).
    pub fn from_named_tensors(mut tensors: Vec<NamedTensor>, meta: &serde_json::Value) -> Result<Self> {
        let config: SacConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Format(format!("agent checkpoint config: {e}")))?;
        let dim = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("agent checkpoint lacks {k}")))
        };
        let (state_dim, action_dim) = (dim("state_dim")?, dim("action_dim")?);
        let mut agent = Self::new(state_dim, action_dim, config, 0)?;
        let mut fill = |prefix: &str, slots: &mut [Tensor]| -> Result<()> {
            for (k, slot) in slots.iter_mut().enumerate() {
                let t = checkpoint::take(&mut tensors, &format!("{prefix}/{k}"))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!("{prefix}/{k} has shape {:?}", t.shape())));
                }
                *slot = t;
            }
            Ok(())
        };
        for i in 0..agent.critics.len() {
            fill(&format!("critic{i}"), agent.critics[i].tensors_mut())?;
            fill(&format!("target{i}"), agent.targets[i].tensors_mut())?;
        }
        fill("actor", agent.actor.trunk_mut().tensors_mut())?;
        let mut la = [Tensor::scalar(0.0)];
        let mut opt_fill = |prefix: &str, opt: &mut AdamState| -> Result<()> {
            fill(&format!("{prefix}/m"), &mut opt.first_moment)?;
            fill(&format!("{prefix}/v"), &mut opt.second_moment)
        };
        opt_fill("adam_critic", &mut agent.critic_opt)?;
        opt_fill("adam_actor", &mut agent.actor_opt)?;
        opt_fill("adam_alpha", &mut agent.alpha_opt)?;
        la[0] = checkpoint::take(&mut tensors, "log_alpha")?;
        agent.log_alpha = la[0].item();
        let steps = meta["adam_steps"]
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| Error::Format("agent checkpoint lacks adam_steps".into()))?;
        let step = |i: usize| steps[i].as_u64().ok_or_else(|| Error::Format("bad adam step count".into()));
        agent.critic_opt.step_count = step(0)?;
        agent.actor_opt.step_count = step(1)?;
        agent.alpha_opt.step_count = step(2)?;
        Ok(agent)
    }

    /// Writes `<base>.bin` / `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let (tensors, meta) = self.to_named_tensors();
        checkpoint::save(base, &tensors, meta)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (tensors, meta) = checkpoint::load(base)?;
        Self::from_named_tensors(tensors, &meta)
    }
}

/// Records `min_i Q_i(input)` on `g`, returning the node and each critic's
/// parameter leaves.
fn build_min_q(g: &mut Graph, nets: &[MlpParams], input: NodeId, mode: ParamMode) -> (NodeId, Vec<Vec<NodeId>>) {
    let mut leaves = Vec::with_capacity(nets.len());
    let mut acc: Option<NodeId> = None;
    for net in nets {
        let built = net.build(g, input, mode);
        leaves.push(built.params);
        acc = Some(match acc {
            None => built.output,
            Some(m) => g.min(m, built.output),
        });
    }
    (acc.expect("at least one critic"), leaves)
}

/// `J(α) = mean(−α·log π − α·H̄)` with `α = exp(log α)` and its derivative
/// with respect to `log α`, computed on a graph.
pub fn temperature_loss_at(log_alpha: f64, log_probs: &Tensor, entropy_target: f64) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let la = g.variable(Tensor::scalar(log_alpha));
    let alpha = g.exp(la);
    let lp = g.constant(log_probs.clone());
    let shifted = g.offset(lp, entropy_target);
    let per = g.mul_scalar(shifted, alpha);
    let neg = g.neg(per);
    let loss = g.mean(neg);
    g.label(loss, "temperature loss");
    let value = g.eval(&Bindings::new(), loss)?.item();
    g.backward(loss)?;
    Ok((value, g.grad(la).item()))
}
