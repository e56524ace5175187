//! Goal-conditioned DDPG: actor `π(s‖g)`, critic `Q(s‖g‖a)`, Polyak-averaged
//! target copies, running input normalization and Adam.
//!
//! Network inputs are the normalized state and goal concatenated; the
//! critic additionally sees the action divided by the action bound.

pub mod net;
pub mod optim;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CdpError, Result};
use crate::mdp::{ActionKind, Trajectory, Transition};
use crate::scalar::Scalar;
pub use net::{ForwardCache, Net, OutputActivation};
pub use optim::{clip_global_norm, Adam, Normalizer};

pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar"))]
pub struct AgentConfig<T> {
    pub gamma: T,
    /// Fraction of the online weights mixed into the targets per update.
    pub tau: T,
    pub actor_lr: T,
    pub critic_lr: T,
    /// Gaussian action-noise scale, relative to the action bound.
    pub exploration_sigma: T,
    /// Probability of a uniformly random exploratory action.
    pub random_action_prob: T,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub optimizer_steps_per_episode: usize,
    /// Global gradient-norm limit per update.
    pub grad_clip: T,
    /// Penalty on the squared (bound-relative) actor output.
    pub action_l2: T,
    /// Inverse temperature of the softmax that stands in for `argmax` when
    /// the critic is queried at policy actions of an argmax environment.
    pub argmax_beta: T,
    pub norm_eps: T,
    pub norm_clip: T,
}

impl<T: Scalar> Default for AgentConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::c(0.98),
            tau: T::c(0.05),
            actor_lr: T::c(1e-3),
            critic_lr: T::c(1e-3),
            exploration_sigma: T::c(0.2),
            random_action_prob: T::c(0.3),
            hidden: vec![64, 64],
            batch_size: 128,
            optimizer_steps_per_episode: 40,
            grad_clip: T::one(),
            action_l2: T::c(0.3),
            argmax_beta: T::c(5.0),
            norm_eps: T::c(0.01),
            norm_clip: T::c(5.0),
        }
    }
}

impl<T: Scalar> AgentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CdpError::InvalidConfig(m.into()));
        if !(self.gamma >= T::zero() && self.gamma < T::one()) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > T::zero() && self.tau <= T::one()) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.actor_lr >= T::zero() && self.critic_lr >= T::zero()) {
            return bad("learning rates must be >= 0");
        }
        if !(self.exploration_sigma >= T::zero()) {
            return bad("exploration sigma must be >= 0");
        }
        if !(self.random_action_prob >= T::zero() && self.random_action_prob <= T::one()) {
            return bad("random action probability must lie in [0, 1]");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.grad_clip > T::zero()) {
            return bad("grad clip must be > 0");
        }
        if !(self.action_l2 >= T::zero()) {
            return bad("action l2 must be >= 0");
        }
        if !(self.argmax_beta > T::zero() && self.argmax_beta.is_finite()) {
            return bad("argmax beta must be finite and > 0");
        }
        if !(self.norm_eps > T::zero() && self.norm_clip > T::zero()) {
            return bad("normalizer eps and clip must be > 0");
        }
        Ok(())
    }

    /// Feasible return range `[-1/(1-γ), 0]` under −1/0 rewards.
    pub fn return_bounds(&self) -> (T, T) {
        (-(T::one() - self.gamma).recip(), T::zero())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct AgentNets<T> {
    pub actor: Net<T>,
    pub critic: Net<T>,
    pub target_actor: Net<T>,
    pub target_critic: Net<T>,
}

impl<T: Scalar> AgentNets<T> {
    /// Targets start as exact copies of the online nets.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        action_bound: T,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let actor = Net::new(&sizes, OutputActivation::ScaledTanh(action_bound), rng)?;
        sizes[0] = obs_dim + action_dim;
        *sizes.last_mut().expect("non-empty") = 1;
        let critic = Net::new(&sizes, OutputActivation::Identity, rng)?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn polyak_update(&mut self, tau: T) -> Result<()> {
        polyak_update(self, tau)
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.target_actor.is_finite() && self.target_critic.is_finite()
    }
}

/// `target ← (1-τ)·target + τ·source` for both target nets.
pub fn polyak_update<T: Scalar>(nets: &mut AgentNets<T>, tau: T) -> Result<()> {
    if !(tau > T::zero() && tau <= T::one()) {
        return Err(CdpError::InvalidConfig("tau must lie in (0, 1]".into()));
    }
    nets.target_actor.blend_from(&nets.actor, tau)?;
    nets.target_critic.blend_from(&nets.critic, tau)
}

/// Mean (optionally weighted) squared TD error of `critic` on row-major
/// `inputs` (`obs ‖ action`), its parameter gradient and the raw TD errors
/// `Q - y`.
pub fn critic_loss_grad<T: Scalar>(
    critic: &Net<T>,
    inputs: &[T],
    targets: &[T],
    weights: Option<&[T]>,
) -> Result<(T, Vec<T>, Vec<T>)> {
    let batch = targets.len();
    if batch == 0 {
        return Err(CdpError::EmptyInput("critic batch"));
    }
    if let Some(w) = weights {
        check_dim(batch, w.len())?;
    }
    let mut cache = ForwardCache::new();
    critic.forward(inputs, batch, &mut cache)?;
    let n = T::from_count(batch);
    let td: Vec<T> = cache.output().iter().zip(targets).map(|(&q, &y)| q - y).collect();
    let mut loss = T::zero();
    let mut grad_out = Vec::with_capacity(batch);
    for (i, &d) in td.iter().enumerate() {
        let w = weights.map_or(T::one(), |w| w[i]);
        loss += w * d * d;
        grad_out.push(T::c(2.0) * w * d / n);
    }
    loss /= n;
    let mut grads = vec![T::zero(); critic.param_count()];
    critic.backward(&cache, &grad_out, Some(&mut grads), None)?;
    Ok((loss, grads, td))
}

/// Actor loss `-mean Q(obs ‖ π(obs)/b) + l2·mean((π/b)²)` and its gradient
/// with respect to the actor parameters; the critic is only read. For
/// [`ActionKind::Argmax`] the critic sees `softmax(argmax_beta · π/b)`
/// instead of `π/b`.
pub fn actor_loss_grad<T: Scalar>(
    actor: &Net<T>,
    critic: &Net<T>,
    obs: &[T],
    batch: usize,
    action_l2: T,
    kind: ActionKind,
    argmax_beta: T,
) -> Result<(T, Vec<T>)> {
    if batch == 0 {
        return Err(CdpError::EmptyInput("actor batch"));
    }
    let bound = match actor.output_activation() {
        OutputActivation::ScaledTanh(b) => b,
        OutputActivation::Identity => T::one(),
    };
    let obs_dim = actor.input_dim();
    let act_dim = actor.output_dim();
    check_dim(obs_dim + act_dim, critic.input_dim())?;
    let mut actor_cache = ForwardCache::new();
    actor.forward(obs, batch, &mut actor_cache)?;
    let actions = actor_cache.output();
    let mut critic_in = Vec::with_capacity(batch * (obs_dim + act_dim));
    for r in 0..batch {
        critic_in.extend_from_slice(&obs[r * obs_dim..(r + 1) * obs_dim]);
        let start = critic_in.len();
        critic_in.extend(actions[r * act_dim..(r + 1) * act_dim].iter().map(|&a| a / bound));
        kind.relax(&mut critic_in[start..], argmax_beta);
    }
    let mut critic_cache = ForwardCache::new();
    critic.forward(&critic_in, batch, &mut critic_cache)?;
    let n = T::from_count(batch);
    let na = T::from_count(batch * act_dim);
    let mut loss = -critic_cache.output().iter().copied().sum::<T>() / n;
    loss += action_l2 * actions.iter().map(|&a| (a / bound) * (a / bound)).sum::<T>() / na;
    let grad_q = vec![-n.recip(); batch];
    let mut grad_in = Vec::new();
    critic.backward(&critic_cache, &grad_q, None, Some(&mut grad_in))?;
    if kind == ActionKind::Argmax {
        // back through the softmax: dL/dz_j = beta·p_j·(g_j - Σ_i p_i g_i)
        for r in 0..batch {
            let base = r * (obs_dim + act_dim) + obs_dim;
            let p = &critic_in[base..base + act_dim];
            let g = &mut grad_in[base..base + act_dim];
            let mean: T = p.iter().zip(g.iter()).map(|(&p, &g)| p * g).sum();
            for (gj, &pj) in g.iter_mut().zip(p) {
                *gj = argmax_beta * pj * (*gj - mean);
            }
        }
    }
    let mut grad_a = Vec::with_capacity(batch * act_dim);
    for r in 0..batch {
        for j in 0..act_dim {
            let a = actions[r * act_dim + j];
            let from_q = grad_in[r * (obs_dim + act_dim) + obs_dim + j] / bound;
            grad_a.push(from_q + T::c(2.0) * action_l2 * a / (bound * bound * na));
        }
    }
    let mut grads = vec![T::zero(); actor.param_count()];
    actor.backward(&actor_cache, &grad_a, Some(&mut grads), None)?;
    Ok((loss, grads))
}

/// Result of one critic step.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticStep<T> {
    /// Loss before the step.
    pub loss: T,
    /// `|Q - y|` per transition, before the step.
    pub abs_td: Vec<T>,
}

/// Result of one combined critic + actor step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStep<T> {
    pub critic_loss: T,
    pub actor_loss: T,
    pub abs_td: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Agent<T> {
    config: AgentConfig<T>,
    state_dim: usize,
    goal_dim: usize,
    action_dim: usize,
    action_bound: T,
    #[serde(default)]
    action_kind: ActionKind,
    nets: AgentNets<T>,
    state_norm: Normalizer<T>,
    goal_norm: Normalizer<T>,
    actor_opt: Adam<T>,
    critic_opt: Adam<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct Checkpoint<T> {
    version: u32,
    agent: Agent<T>,
}

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig<T>,
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        action_bound: T,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || goal_dim == 0 || action_dim == 0 {
            return Err(CdpError::InvalidConfig("agent dimensions must be >= 1".into()));
        }
        let nets = AgentNets::new(state_dim + goal_dim, action_dim, action_bound, &config.hidden, rng)?;
        Ok(Self {
            actor_opt: Adam::new(config.actor_lr, nets.actor.param_count()),
            critic_opt: Adam::new(config.critic_lr, nets.critic.param_count()),
            state_norm: Normalizer::new(state_dim, config.norm_eps, config.norm_clip),
            goal_norm: Normalizer::new(goal_dim, config.norm_eps, config.norm_clip),
            config,
            state_dim,
            goal_dim,
            action_dim,
            action_bound,
            action_kind: ActionKind::Continuous,
            nets,
        })
    }

    /// In argmax environments only the selected index matters: the critic
    /// is fitted on one-hot encodings of the executed actions and queried
    /// at a softmax of the policy output (targets and actor loss), which
    /// keeps the policy gradient informative.
    pub fn with_action_kind(mut self, kind: ActionKind) -> Self {
        self.action_kind = kind;
        self
    }

    pub fn action_kind(&self) -> ActionKind {
        self.action_kind
    }

    pub fn config(&self) -> &AgentConfig<T> {
        &self.config
    }

    pub fn nets(&self) -> &AgentNets<T> {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut AgentNets<T> {
        &mut self.nets
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_bound(&self) -> T {
        self.action_bound
    }

    pub fn state_normalizer(&self) -> &Normalizer<T> {
        &self.state_norm
    }

    pub fn goal_normalizer(&self) -> &Normalizer<T> {
        &self.goal_norm
    }

    /// Feeds a rollout into the input normalizers: every visited state,
    /// the desired goal and every achieved goal.
    pub fn observe_trajectory(&mut self, trajectory: &Trajectory<T>) -> Result<()> {
        for tr in &trajectory.transitions {
            self.state_norm.observe(&tr.state)?;
            self.goal_norm.observe(&tr.goal)?;
        }
        if let Some(last) = trajectory.transitions.last() {
            self.state_norm.observe(&last.next_state)?;
        }
        for step in 0..=trajectory.horizon() {
            self.goal_norm.observe(trajectory.achieved_goal_at(step))?;
        }
        self.state_norm.recompute();
        self.goal_norm.recompute();
        Ok(())
    }

    fn push_obs(&self, state: &[T], goal: &[T], out: &mut Vec<T>) -> Result<()> {
        check_dim(self.state_dim, state.len())?;
        check_dim(self.goal_dim, goal.len())?;
        self.state_norm.normalize_into(state, out);
        self.goal_norm.normalize_into(goal, out);
        Ok(())
    }

    /// Normalized `state ‖ goal`.
    pub fn observation(&self, state: &[T], goal: &[T]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.state_dim + self.goal_dim);
        self.push_obs(state, goal, &mut out)?;
        Ok(out)
    }

    /// Greedy action, or the behavior policy when `explore` is set: with
    /// probability ε a uniform action, otherwise the greedy action plus
    /// clipped Gaussian noise.
    pub fn act<R: Rng + ?Sized>(&self, state: &[T], goal: &[T], explore: bool, rng: &mut R) -> Result<Vec<T>> {
        let obs = self.observation(state, goal)?;
        let b = self.action_bound;
        if explore && T::c(rng.random::<f64>()) < self.config.random_action_prob {
            return Ok((0..self.action_dim)
                .map(|_| T::c(rng.random_range(-1.0..=1.0)) * b)
                .collect());
        }
        let mut action = self.nets.actor.predict(&obs, 1)?;
        if explore {
            for a in action.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *a = (*a + T::c(z) * self.config.exploration_sigma * b).max(-b).min(b);
            }
        }
        Ok(action)
    }

    fn encode(&self, batch: &[Transition<T>], next: bool, with_action: bool) -> Result<Vec<T>> {
        let width = self.state_dim + self.goal_dim + if with_action { self.action_dim } else { 0 };
        let mut out = Vec::with_capacity(batch.len() * width);
        for tr in batch {
            let s = if next { &tr.next_state } else { &tr.state };
            self.push_obs(s, &tr.goal, &mut out)?;
            if with_action {
                check_dim(self.action_dim, tr.action.len())?;
                let start = out.len();
                out.extend(tr.action.iter().map(|&a| a / self.action_bound));
                self.action_kind.canonicalize(&mut out[start..], T::one());
            }
        }
        Ok(out)
    }

    /// `y = r + γ·Q_target(s'‖g, π_target(s'‖g))`, clipped to the feasible
    /// return range.
    pub fn td_target(&self, batch: &[Transition<T>]) -> Result<Vec<T>> {
        if batch.is_empty() {
            return Err(CdpError::EmptyInput("td target batch"));
        }
        let n = batch.len();
        let obs_dim = self.state_dim + self.goal_dim;
        let next = self.encode(batch, true, false)?;
        let actions = self.nets.target_actor.predict(&next, n)?;
        let mut critic_in = Vec::with_capacity(n * (obs_dim + self.action_dim));
        for r in 0..n {
            critic_in.extend_from_slice(&next[r * obs_dim..(r + 1) * obs_dim]);
            let start = critic_in.len();
            critic_in.extend(
                actions[r * self.action_dim..(r + 1) * self.action_dim]
                    .iter()
                    .map(|&a| a / self.action_bound),
            );
            self.action_kind.relax(&mut critic_in[start..], self.config.argmax_beta);
        }
        let q = self.nets.target_critic.predict(&critic_in, n)?;
        let (lo, hi) = self.config.return_bounds();
        Ok(batch
            .iter()
            .zip(q)
            .map(|(tr, q)| (tr.reward + self.config.gamma * q).max(lo).min(hi))
            .collect())
    }

    /// `Q(s‖g‖a)` per transition under the online critic.
    pub fn q_values(&self, batch: &[Transition<T>]) -> Result<Vec<T>> {
        let inputs = self.encode(batch, false, true)?;
        self.nets.critic.predict(&inputs, batch.len())
    }

    /// `|Q(s‖g‖a) - y|` per transition under the current nets.
    pub fn td_errors(&self, batch: &[Transition<T>]) -> Result<Vec<T>> {
        let targets = self.td_target(batch)?;
        let q = self.q_values(batch)?;
        Ok(q.iter().zip(&targets).map(|(&q, &y)| (q - y).abs()).collect())
    }

    /// One Adam step on the (optionally importance-weighted) mean squared
    /// TD error.
    pub fn critic_update(&mut self, batch: &[Transition<T>], targets: &[T], is_weights: Option<&[T]>) -> Result<CriticStep<T>> {
        check_dim(batch.len(), targets.len())?;
        let inputs = self.encode(batch, false, true)?;
        let (loss, mut grads, td) = critic_loss_grad(&self.nets.critic, &inputs, targets, is_weights)?;
        if !loss.is_finite() {
            return Err(CdpError::NonFinite(format!("critic loss {loss}")));
        }
        clip_global_norm(&mut grads, self.config.grad_clip)?;
        self.critic_opt.update(self.nets.critic.params_mut(), &grads)?;
        Ok(CriticStep {
            loss,
            abs_td: td.into_iter().map(|d| d.abs()).collect(),
        })
    }

    /// One Adam step on the actor loss with the critic held fixed.
    pub fn actor_update(&mut self, batch: &[Transition<T>]) -> Result<T> {
        let obs = self.encode(batch, false, false)?;
        let (loss, mut grads) =
            actor_loss_grad(
            &self.nets.actor,
            &self.nets.critic,
            &obs,
            batch.len(),
            self.config.action_l2,
            self.action_kind,
            self.config.argmax_beta,
        )?;
        if !loss.is_finite() {
            return Err(CdpError::NonFinite(format!("actor loss {loss}")));
        }
        clip_global_norm(&mut grads, self.config.grad_clip)?;
        self.actor_opt.update(self.nets.actor.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Critic step on fresh targets followed by an actor step.
    pub fn train_step(&mut self, batch: &[Transition<T>], is_weights: Option<&[T]>) -> Result<TrainStep<T>> {
        let targets = self.td_target(batch)?;
        let critic = self.critic_update(batch, &targets, is_weights)?;
        let actor_loss = self.actor_update(batch)?;
        Ok(TrainStep {
            critic_loss: critic.loss,
            actor_loss,
            abs_td: critic.abs_td,
        })
    }

    pub fn polyak_update(&mut self) -> Result<()> {
        polyak_update(&mut self.nets, self.config.tau)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: AGENT_CHECKPOINT_VERSION,
            agent: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let header: Header = serde_json::from_str(s)?;
        if header.version != AGENT_CHECKPOINT_VERSION {
            return Err(CdpError::UnsupportedVersion(header.version));
        }
        let cp: Checkpoint<T> = serde_json::from_str(s)?;
        Ok(cp.agent)
    }
}

#[cfg(test)]
mod tests;
