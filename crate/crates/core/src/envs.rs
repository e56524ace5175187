//! Small deterministic multi-goal environments with sparse −1/0 rewards.
//!
//! * `bitflip`: the state is an `n`-bit vector and the goal another one.
//!   The continuous action has `n + 1` entries; its argmax selects a bit to
//!   flip, and the last entry is a no-op so the goal can be held once
//!   reached.
//! * `pointpush`: a point agent starts at the origin of the unit square
//!   `[-0.5, 0.5]²` and pushes a disc-shaped object towards a goal placed
//!   near the object's random start. The state is
//!   `[agent_x, agent_y, object_x, object_y, object_x - agent_x,
//!   object_y - agent_y]` and the achieved goal is the object position.
//!
//! Episodes always last exactly `horizon` steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CdpError, Result};
use crate::mdp::{argmax, sparse_reward, ActionKind, GoalSpace, Trajectory, Transition};
use crate::scalar::Scalar;

/// Agent displacement per unit action.
pub const PUSH_STEP: f64 = 0.1;
/// Contact distance between agent and object.
pub const CONTACT_RADIUS: f64 = 0.1;
/// Half the side of the pointpush arena.
pub const ARENA_HALF: f64 = 0.5;
/// Pointpush objects start within this distance (per axis) of the agent,
/// but never in contact with it.
pub const OBJECT_RANGE: f64 = 0.2;
/// Pointpush goals are drawn within this distance (per axis) of the
/// object's start, clipped to the arena.
pub const GOAL_RANGE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvKind {
    Bitflip { bits: usize },
    Pointpush,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec<T> {
    #[serde(flatten)]
    pub kind: EnvKind,
    pub horizon: usize,
    pub tolerance: T,
    pub seed: u64,
}

impl<T: Scalar> EnvSpec<T> {
    /// `n` bits, horizon `n`, exact-match tolerance.
    pub fn bitflip(bits: usize) -> Self {
        Self {
            kind: EnvKind::Bitflip { bits },
            horizon: bits,
            tolerance: T::c(0.5),
            seed: 0,
        }
    }

    pub fn pointpush() -> Self {
        Self {
            kind: EnvKind::Pointpush,
            horizon: 16,
            tolerance: T::c(0.1),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let EnvKind::Bitflip { bits: 0 } = self.kind {
            return Err(CdpError::InvalidConfig("bitflip needs at least one bit".into()));
        }
        if self.horizon == 0 {
            return Err(CdpError::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.tolerance >= T::zero()) {
            return Err(CdpError::InvalidConfig("tolerance must be >= 0".into()));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            EnvKind::Bitflip { .. } => "bitflip",
            EnvKind::Pointpush => "pointpush",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::Bitflip { bits } => bits,
            EnvKind::Pointpush => 6,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            EnvKind::Bitflip { bits } => bits + 1,
            EnvKind::Pointpush => 2,
        }
    }

    pub fn goal_dim(&self) -> usize {
        match self.kind {
            EnvKind::Bitflip { bits } => bits,
            EnvKind::Pointpush => 2,
        }
    }

    /// Actions live in `[-bound, bound]` per component.
    pub fn action_bound(&self) -> T {
        T::one()
    }

    pub fn action_kind(&self) -> ActionKind {
        match self.kind {
            EnvKind::Bitflip { .. } => ActionKind::Argmax,
            EnvKind::Pointpush => ActionKind::Continuous,
        }
    }

    pub fn goal_space(&self) -> Result<GoalSpace<T>> {
        GoalSpace::new(self.goal_dim(), self.tolerance)
    }

    /// The goal slice of a state.
    pub fn achieved_goal<'a>(&self, state: &'a [T]) -> &'a [T] {
        match self.kind {
            EnvKind::Bitflip { .. } => state,
            EnvKind::Pointpush => &state[2..4],
        }
    }
}

/// Samples an initial state and a desired goal.
pub fn reset<T: Scalar, R: Rng + ?Sized>(spec: &EnvSpec<T>, rng: &mut R) -> (Vec<T>, Vec<T>) {
    match spec.kind {
        EnvKind::Bitflip { bits } => {
            let mut draw = || (0..bits).map(|_| if rng.random::<bool>() { T::one() } else { T::zero() }).collect();
            let state = draw();
            let goal = draw();
            (state, goal)
        }
        EnvKind::Pointpush => {
            let (ox, oy) = loop {
                let (x, y) = (rng.random_range(-OBJECT_RANGE..OBJECT_RANGE), rng.random_range(-OBJECT_RANGE..OBJECT_RANGE));
                if x * x + y * y >= CONTACT_RADIUS * CONTACT_RADIUS {
                    break (x, y);
                }
            };
            let mut near = |c: f64| T::c((c + rng.random_range(-GOAL_RANGE..GOAL_RANGE)).clamp(-ARENA_HALF, ARENA_HALF));
            let goal = vec![near(ox), near(oy)];
            (vec![T::zero(), T::zero(), T::c(ox), T::c(oy), T::c(ox), T::c(oy)], goal)
        }
    }
}

/// Deterministic dynamics. Out-of-bound actions are clipped.
pub fn dynamics<T: Scalar>(spec: &EnvSpec<T>, state: &[T], action: &[T]) -> Result<Vec<T>> {
    check_dim(spec.state_dim(), state.len())?;
    check_dim(spec.action_dim(), action.len())?;
    if action.iter().any(|a| a.is_nan()) {
        return Err(CdpError::NonFinite("action".into()));
    }
    let mut next = state.to_vec();
    match spec.kind {
        EnvKind::Bitflip { bits } => {
            let i = argmax(action);
            if i < bits {
                next[i] = T::one() - next[i];
            }
        }
        EnvKind::Pointpush => {
            let lim = T::c(ARENA_HALF);
            let clip = |v: T| v.max(-lim).min(lim);
            let step = T::c(PUSH_STEP);
            let ax = clip(state[0] + step * action[0].max(-T::one()).min(T::one()));
            let ay = clip(state[1] + step * action[1].max(-T::one()).min(T::one()));
            next[0] = ax;
            next[1] = ay;
            let (dx, dy) = (state[2] - ax, state[3] - ay);
            let dist = (dx * dx + dy * dy).sqrt();
            let r = T::c(CONTACT_RADIUS);
            if dist < r {
                // push the object out to the contact circle along the normal;
                // on exact overlap use the direction the agent moved in
                let (nx, ny) = if dist > T::zero() {
                    (dx / dist, dy / dist)
                } else {
                    let (mx, my) = (ax - state[0], ay - state[1]);
                    let m = (mx * mx + my * my).sqrt();
                    if m > T::zero() {
                        (mx / m, my / m)
                    } else {
                        (T::one(), T::zero())
                    }
                };
                next[2] = clip(ax + r * nx);
                next[3] = clip(ay + r * ny);
            }
            next[4] = next[2] - ax;
            next[5] = next[3] - ay;
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub next_state: Vec<T>,
    pub achieved_goal: Vec<T>,
    pub reward: T,
    /// Set only on the final step of the episode.
    pub done: bool,
}

/// A running episode.
#[derive(Debug, Clone)]
pub struct Env<T> {
    spec: EnvSpec<T>,
    space: GoalSpace<T>,
    state: Vec<T>,
    goal: Vec<T>,
    t: usize,
}

impl<T: Scalar> Env<T> {
    pub fn reset<R: Rng + ?Sized>(spec: EnvSpec<T>, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (state, goal) = reset(&spec, rng);
        Ok(Self {
            space: spec.goal_space()?,
            spec,
            state,
            goal,
            t: 0,
        })
    }

    pub fn spec(&self) -> &EnvSpec<T> {
        &self.spec
    }

    pub fn state(&self) -> &[T] {
        &self.state
    }

    pub fn goal(&self) -> &[T] {
        &self.goal
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, action: &[T]) -> Result<StepResult<T>> {
        if self.t >= self.spec.horizon {
            return Err(CdpError::OutOfRange {
                value: self.t as f64,
                upper: self.spec.horizon as f64,
            });
        }
        let next = dynamics(&self.spec, &self.state, action)?;
        let achieved = self.spec.achieved_goal(&next).to_vec();
        let reward = sparse_reward(&achieved, &self.goal, &self.space)?;
        self.t += 1;
        self.state.clone_from(&next);
        Ok(StepResult {
            next_state: next,
            achieved_goal: achieved,
            reward,
            done: self.t == self.spec.horizon,
        })
    }
}

/// A finished episode and whether its final step reached the goal.
#[derive(Debug, Clone)]
pub struct Episode<T> {
    pub trajectory: Trajectory<T>,
    pub success: bool,
}

/// Runs one full episode; `policy(state, goal)` returns the action.
pub fn rollout<T, R, P>(spec: &EnvSpec<T>, rng: &mut R, mut policy: P) -> Result<Episode<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    P: FnMut(&[T], &[T], &mut R) -> Result<Vec<T>>,
{
    let mut env = Env::reset(*spec, rng)?;
    let initial = spec.achieved_goal(env.state()).to_vec();
    let mut transitions = Vec::with_capacity(spec.horizon);
    let mut last_reward = -T::one();
    for _ in 0..spec.horizon {
        let state = env.state().to_vec();
        let action = policy(&state, env.goal(), rng)?;
        let res = env.step(&action)?;
        last_reward = res.reward;
        transitions.push(Transition {
            state,
            action,
            reward: res.reward,
            next_state: res.next_state,
            goal: env.goal().to_vec(),
            achieved_goal: res.achieved_goal,
            done: res.done,
            relabeled: false,
        });
    }
    Ok(Episode {
        trajectory: Trajectory::new(&initial, transitions, spec.horizon)?,
        success: last_reward == T::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit, CovarianceKind, VgmmConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        let mut a = vec![-1.0; n];
        a[i] = 1.0;
        a
    }

    #[test]
    fn reset_is_deterministic_and_in_domain() {
        let spec = EnvSpec::<f64>::bitflip(8);
        let a = reset(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let b = reset(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.0.iter().chain(&a.1).all(|&v| v == 0.0 || v == 1.0));
        assert_eq!((a.0.len(), a.1.len()), (8, 8));

        let spec = EnvSpec::<f64>::pointpush();
        let (s, g) = reset(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(&s[..2], &[0.0, 0.0]);
        assert_eq!(spec.achieved_goal(&s), &s[2..4]);
        assert!(s.iter().chain(&g).all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn bitflip_single_bit_semantics() {
        let spec = EnvSpec::<f64>::bitflip(3);
        assert_eq!(dynamics(&spec, &[0.0, 0.0, 0.0], &one_hot(4, 1)).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(dynamics(&spec, &[0.0, 1.0, 0.0], &one_hot(4, 3)).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(dynamics(&spec, &[0.0, 1.0, 0.0], &[0.0; 3]).is_err());
    }

    #[test]
    fn flipping_the_only_differing_bit_succeeds() {
        let spec = EnvSpec::<f64>::bitflip(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut env = Env::reset(spec, &mut rng).unwrap();
        let goal = env.goal().to_vec();
        let mut target = goal.clone();
        target[2] = 1.0 - target[2];
        env.state = target;
        let res = env.step(&one_hot(5, 2)).unwrap();
        assert_eq!(res.next_state, goal);
        assert_eq!(res.reward, 0.0);
        assert!(!res.done);
    }

    #[test]
    fn pointpush_zero_action_is_a_fixed_point() {
        let spec = EnvSpec::<f64>::pointpush();
        let s = [0.0, 0.0, 0.3, -0.2, 0.3, -0.2];
        assert_eq!(dynamics(&spec, &s, &[0.0, 0.0]).unwrap(), s.to_vec());
    }

    #[test]
    fn pointpush_moves_and_pushes() {
        let spec = EnvSpec::<f64>::pointpush();
        // free move, clipped action
        let n = dynamics(&spec, &[0.0, 0.0, 0.4, 0.4, 0.4, 0.4], &[3.0, -0.5]).unwrap();
        assert!((n[0] - 0.1).abs() < 1e-15 && (n[1] + 0.05).abs() < 1e-15);
        assert_eq!(&n[2..4], &[0.4, 0.4]);
        // relative object position follows the agent
        assert!((n[4] - 0.3).abs() < 1e-15 && (n[5] - 0.45).abs() < 1e-15);
        // head-on push along +x
        let n = dynamics(&spec, &[0.0, 0.0, 0.15, 0.0, 0.15, 0.0], &[1.0, 0.0]).unwrap();
        assert!((n[2] - 0.2).abs() < 1e-12 && n[3].abs() < 1e-12);
        // the object stays inside the arena
        let n = dynamics(&spec, &[0.45, 0.0, 0.5, 0.0, 0.05, 0.0], &[1.0, 0.0]).unwrap();
        assert!(n[2] <= 0.5);
    }

    #[test]
    fn episodes_have_fixed_length_and_replay_bitwise() {
        for spec in [EnvSpec::<f64>::bitflip(5), EnvSpec::pointpush()] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let dim = spec.action_dim();
            let ep = rollout(&spec, &mut rng, |_, _, r| Ok((0..dim).map(|_| r.random_range(-1.0..1.0)).collect())).unwrap();
            let traj = &ep.trajectory;
            assert_eq!(traj.horizon(), spec.horizon);
            assert!(traj.transitions.last().unwrap().done);
            assert_eq!(traj.transitions.iter().filter(|t| t.done).count(), 1);
            let space = spec.goal_space().unwrap();
            let mut state = traj.transitions[0].state.clone();
            for tr in &traj.transitions {
                state = dynamics(&spec, &state, &tr.action).unwrap();
                assert_eq!(state, tr.next_state);
                assert_eq!(spec.achieved_goal(&state), tr.achieved_goal.as_slice());
                assert_eq!(tr.reward, sparse_reward(&tr.achieved_goal, &tr.goal, &space).unwrap());
            }
        }
    }

    #[test]
    fn step_past_horizon_is_rejected() {
        let spec = EnvSpec::<f64>::bitflip(2);
        let mut env = Env::reset(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        env.step(&one_hot(3, 2)).unwrap();
        assert!(env.step(&one_hot(3, 2)).unwrap().done);
        assert!(env.step(&one_hot(3, 2)).is_err());
    }

    #[test]
    fn random_pointpush_rollouts_are_multimodal() {
        let spec = EnvSpec::<f64>::pointpush();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let features: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                rollout(&spec, &mut rng, |_, _, r| Ok(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]))
                    .unwrap()
                    .trajectory
                    .achieved_goal_feature
            })
            .collect();
        let config = VgmmConfig {
            max_components: 6,
            covariance_kind: CovarianceKind::Diagonal,
            ..VgmmConfig::default()
        };
        let model = fit(&features, &config).unwrap();
        assert!(model.effective_components() >= 2);
    }

    #[test]
    fn spec_serializes_with_name_tag() {
        let spec = EnvSpec::<f64>::bitflip(8);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"name\":\"bitflip\"") && json.contains("\"bits\":8"));
        assert_eq!(serde_json::from_str::<EnvSpec<f64>>(&json).unwrap(), spec);
    }
}
