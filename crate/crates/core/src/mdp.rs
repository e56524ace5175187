//! Goal-conditioned MDP vocabulary: goal spaces, sparse rewards, transitions
//! and fixed-horizon trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CdpError, Result};
use crate::scalar::{euclidean, Scalar};

/// Goal dimensionality plus the success radius around a desired goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpace<T> {
    dim: usize,
    tolerance: T,
}

impl<T: Scalar> GoalSpace<T> {
    pub fn new(dim: usize, tolerance: T) -> Result<Self> {
        if dim == 0 {
            return Err(CdpError::InvalidConfig("goal dim must be >= 1".into()));
        }
        if !(tolerance >= T::zero()) || !tolerance.is_finite() {
            return Err(CdpError::InvalidConfig(format!(
                "goal tolerance must be finite and >= 0, got {tolerance}"
            )));
        }
        Ok(Self { dim, tolerance })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tolerance(&self) -> T {
        self.tolerance
    }
}

/// `0` when the achieved goal lies within the tolerance ball of the desired
/// goal (Euclidean), `-1` otherwise.
pub fn sparse_reward<T: Scalar>(achieved: &[T], desired: &[T], space: &GoalSpace<T>) -> Result<T> {
    check_dim(space.dim, achieved.len())?;
    check_dim(space.dim, desired.len())?;
    if euclidean(achieved, desired) <= space.tolerance {
        Ok(T::zero())
    } else {
        Ok(-T::one())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<T> {
    pub state: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_state: Vec<T>,
    /// Desired goal this transition is conditioned on.
    pub goal: Vec<T>,
    /// Goal slice of `next_state`.
    pub achieved_goal: Vec<T>,
    pub done: bool,
    pub relabeled: bool,
}

/// Concatenates the initial achieved goal with every transition's achieved
/// goal: `s_0 ‖ s_1 ‖ … ‖ s_T`.
pub fn extract_achieved_feature<T: Scalar>(
    initial_achieved_goal: &[T],
    transitions: &[Transition<T>],
) -> Result<Vec<T>> {
    let dim = initial_achieved_goal.len();
    if dim == 0 {
        return Err(CdpError::RaggedTrajectory("empty initial achieved goal".into()));
    }
    let mut feature = Vec::with_capacity((transitions.len() + 1) * dim);
    feature.extend_from_slice(initial_achieved_goal);
    for (t, tr) in transitions.iter().enumerate() {
        if tr.achieved_goal.len() != dim {
            return Err(CdpError::RaggedTrajectory(format!(
                "step {t} achieved goal has {} entries, expected {dim}",
                tr.achieved_goal.len()
            )));
        }
        feature.extend_from_slice(&tr.achieved_goal);
    }
    Ok(feature)
}

/// One fixed-length episode together with its density bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub transitions: Vec<Transition<T>>,
    pub achieved_goal_feature: Vec<T>,
    /// Mixture density of the feature, floored so it is never zero.
    pub raw_density: T,
    /// Natural log of the unfloored density; normalization and ranking use
    /// this to stay exact when `raw_density` under- or overflows.
    pub log_density: T,
    pub normalized_density: T,
    /// `1 - normalized_density`.
    pub complement: T,
    /// Replay probability of the whole trajectory.
    pub priority: T,
    pub episode_td_error: T,
}

impl<T: Scalar> Trajectory<T> {
    /// Builds a trajectory of exactly `horizon` transitions. `initial_achieved_goal`
    /// is the goal slice of the reset state.
    pub fn new(
        initial_achieved_goal: &[T],
        transitions: Vec<Transition<T>>,
        horizon: usize,
    ) -> Result<Self> {
        if transitions.len() != horizon {
            return Err(CdpError::HorizonMismatch {
                expected: horizon,
                got: transitions.len(),
            });
        }
        let feature = extract_achieved_feature(initial_achieved_goal, &transitions)?;
        Ok(Self {
            transitions,
            achieved_goal_feature: feature,
            raw_density: T::one(),
            log_density: T::zero(),
            normalized_density: T::zero(),
            complement: T::zero(),
            priority: T::zero(),
            episode_td_error: T::zero(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn goal_dim(&self) -> usize {
        self.achieved_goal_feature.len() / (self.transitions.len() + 1)
    }

    /// Achieved goal after `step` environment steps (`0..=T`).
    pub fn achieved_goal_at(&self, step: usize) -> &[T] {
        let d = self.goal_dim();
        &self.achieved_goal_feature[step * d..(step + 1) * d]
    }
}

/// How an environment interprets the continuous action vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// Used as given (after clipping to bounds).
    #[default]
    Continuous,
    /// Only the index of the largest entry matters.
    Argmax,
}

impl ActionKind {
    /// The representative of an executed action: unchanged for continuous
    /// actions, `one_hot(argmax) · scale` for argmax actions.
    pub fn canonicalize<T: Scalar>(self, action: &mut [T], scale: T) {
        if self == ActionKind::Argmax && !action.is_empty() {
            let i = argmax(action);
            action.iter_mut().for_each(|a| *a = T::zero());
            action[i] = scale;
        }
    }

    /// Differentiable stand-in for [`canonicalize`](Self::canonicalize):
    /// `softmax(beta · action)` for argmax actions, identity otherwise.
    pub fn relax<T: Scalar>(self, action: &mut [T], beta: T) {
        if self == ActionKind::Argmax && !action.is_empty() {
            softmax_in_place(action, beta);
        }
    }
}

/// `softmax(beta · x)` in place.
pub fn softmax_in_place<T: Scalar>(x: &mut [T], beta: T) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (beta * (*v - max)).exp();
        sum += *v;
    }
    x.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the largest entry, first one on ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedReturn<T> {
    pub gamma: T,
    pub value: T,
}

impl<T: Scalar> DiscountedReturn<T> {
    pub fn of(rewards: &[T], gamma: T) -> Result<Self> {
        Ok(Self {
            gamma,
            value: discounted_return(rewards, gamma)?,
        })
    }
}

/// `Σ_i γ^i r_i`.
pub fn discounted_return<T: Scalar>(rewards: &[T], gamma: T) -> Result<T> {
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return Err(CdpError::InvalidConfig(format!("gamma {gamma} outside [0, 1]")));
    }
    let mut discount = T::one();
    let mut total = T::zero();
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}
