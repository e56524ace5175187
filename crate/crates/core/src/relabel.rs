//! Hindsight relabeling with the `future` strategy: a transition's desired
//! goal is replaced by a goal the same trajectory achieved later, and the
//! sparse reward is recomputed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CdpError, Result};
use crate::mdp::{sparse_reward, GoalSpace, Trajectory, Transition};
use crate::replay::ReplayBuffer;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HerStrategy {
    #[default]
    Future,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HerConfig {
    /// Relabeled-to-original ratio; `0` disables relabeling.
    pub replay_k: usize,
    pub strategy: HerStrategy,
    /// Also store a fully relabeled copy of every trajectory in the buffer.
    pub store_relabeled: bool,
}

impl Default for HerConfig {
    fn default() -> Self {
        Self {
            replay_k: 4,
            strategy: HerStrategy::Future,
            store_relabeled: false,
        }
    }
}

impl HerConfig {
    /// Probability that a batch transition is relabeled, `k / (k + 1)`.
    pub fn relabel_probability(&self) -> f64 {
        self.replay_k as f64 / (self.replay_k as f64 + 1.0)
    }
}

/// Copy of transition `t` whose goal is the achieved goal `s_j` of a
/// uniformly drawn `j ∈ {t+1, …, T-1}`, with the reward recomputed.
pub fn relabel_transition<T: Scalar, R: Rng + ?Sized>(
    trajectory: &Trajectory<T>,
    t: usize,
    rng: &mut R,
    space: &GoalSpace<T>,
) -> Result<Transition<T>> {
    let horizon = trajectory.horizon();
    if t + 1 >= horizon {
        return Err(CdpError::NoFutureStep { t, horizon });
    }
    let j = rng.random_range(t + 1..horizon);
    relabel_with_step(trajectory, t, j, space)
}

fn relabel_with_step<T: Scalar>(
    trajectory: &Trajectory<T>,
    t: usize,
    j: usize,
    space: &GoalSpace<T>,
) -> Result<Transition<T>> {
    let mut out = trajectory.transitions[t].clone();
    out.goal = trajectory.achieved_goal_at(j).to_vec();
    out.reward = sparse_reward(&out.achieved_goal, &out.goal, space)?;
    out.relabeled = true;
    Ok(out)
}

/// Relabels every transition that has a future step; the last transition
/// keeps its original goal. Density bookkeeping is reset.
pub fn relabel_trajectory<T: Scalar, R: Rng + ?Sized>(
    trajectory: &Trajectory<T>,
    rng: &mut R,
    space: &GoalSpace<T>,
) -> Result<Trajectory<T>> {
    let horizon = trajectory.horizon();
    let mut transitions = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t + 1 < horizon {
            transitions.push(relabel_transition(trajectory, t, rng, space)?);
        } else {
            transitions.push(trajectory.transitions[t].clone());
        }
    }
    let d = trajectory.goal_dim();
    Trajectory::new(&trajectory.achieved_goal_feature[..d], transitions, horizon)
}

/// A training batch plus where each transition came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub transitions: Vec<Transition<T>>,
    /// `(slot, step)` of every transition in the buffer.
    pub origins: Vec<(usize, usize)>,
    /// Importance-sampling weights (all `1` outside PER).
    pub weights: Vec<T>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn relabeled_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.relabeled).count()
    }
}

/// Samples `batch_size` transitions: a trajectory by buffer strategy, then a
/// timestep, then (with probability `k/(k+1)`) a hindsight goal.
///
/// Randomness is consumed per transition in a fixed order: relabel coin,
/// timestep, future index. A relabeled draw picks its timestep from
/// `0..T-1` so a future step always exists; PER draws carry their own
/// timestep and fall back to the original goal at the final step.
pub fn make_batch<T: Scalar, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<T>,
    batch_size: usize,
    her: &HerConfig,
    rng: &mut R,
    space: &GoalSpace<T>,
) -> Result<Batch<T>> {
    if batch_size == 0 {
        return Err(CdpError::InvalidConfig("batch size must be >= 1".into()));
    }
    let draws = buffer.sample_indices(batch_size, rng)?;
    let horizon = buffer.horizon();
    let p = her.relabel_probability();
    let mut batch = Batch {
        transitions: Vec::with_capacity(batch_size),
        origins: Vec::with_capacity(batch_size),
        weights: Vec::with_capacity(batch_size),
    };
    for draw in draws {
        let traj = buffer.get(draw.slot).ok_or(CdpError::IndexOutOfBounds {
            index: draw.slot,
            len: buffer.len(),
        })?;
        let relabel = her.replay_k > 0 && horizon > 1 && rng.random::<f64>() < p;
        let t = match draw.step {
            Some(step) => step,
            None if relabel => rng.random_range(0..horizon - 1),
            None => rng.random_range(0..horizon),
        };
        let transition = if relabel && t + 1 < horizon {
            relabel_transition(traj, t, rng, space)?
        } else {
            traj.transitions[t].clone()
        };
        batch.transitions.push(transition);
        batch.origins.push((draw.slot, t));
        batch.weights.push(draw.weight);
    }
    Ok(batch)
}
