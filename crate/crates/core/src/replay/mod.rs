//! Bounded FIFO trajectory store with uniform, curiosity-ranked (CDP) and
//! TD-error prioritized (PER) sampling.
//!
//! CDP bookkeeping happens at trajectory level: each stored trajectory keeps
//! its log density under the latest mixture model, and
//! [`ReplayBuffer::recompute_priorities`] turns those into normalized
//! densities, complements and rank probabilities. PER keeps a sum tree with
//! one leaf per stored transition.
//!
//! The buffer is single-writer and not thread-safe.

pub mod rank;
pub mod sum_tree;

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{clamp_density, MixtureModel};
use crate::error::{CdpError, Result};
use crate::mdp::Trajectory;
use crate::scalar::{log_sum_exp, Scalar};
pub use rank::{ascending_ranks, probabilities_from_ranks, rank_probabilities};
pub use sum_tree::{MinTree, SumTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    Cdp,
    Per,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Cdp => "cdp",
            Strategy::Per => "per",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = CdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "her" | "baseline" => Ok(Strategy::Uniform),
            "cdp" => Ok(Strategy::Cdp),
            "per" => Ok(Strategy::Per),
            other => Err(CdpError::InvalidConfig(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerConfig<T> {
    /// Priority exponent.
    pub alpha: T,
    /// Importance-sampling exponent at the start of training.
    pub beta: T,
    pub epsilon_priority: T,
}

impl<T: Scalar> Default for PerConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::c(0.6),
            beta: T::c(0.4),
            epsilon_priority: T::c(1e-6),
        }
    }
}

impl<T: Scalar> PerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::zero()) {
            return Err(CdpError::InvalidConfig("PER alpha must be >= 0".into()));
        }
        if !(self.beta >= T::zero() && self.beta <= T::one()) {
            return Err(CdpError::InvalidConfig("PER beta must lie in [0, 1]".into()));
        }
        if !(self.epsilon_priority > T::zero()) {
            return Err(CdpError::InvalidConfig("PER epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// `(|δ| + ε)^α`.
pub fn per_priority_from_td<T: Scalar>(td_error: T, config: &PerConfig<T>) -> T {
    (td_error.abs() + config.epsilon_priority).powf(config.alpha)
}

/// One sampled trajectory (and, for PER, the sampled step within it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw<T> {
    pub slot: usize,
    pub step: Option<usize>,
    /// Importance-sampling weight; `1` outside PER.
    pub weight: T,
}

#[derive(Debug, Clone)]
struct PerState<T> {
    config: PerConfig<T>,
    beta: T,
    tree: SumTree<T>,
    min_tree: MinTree<T>,
    max_priority: T,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    horizon: usize,
    strategy: Strategy,
    slots: Vec<Trajectory<T>>,
    seq: Vec<u64>,
    /// Slot holding the oldest trajectory once the buffer is full.
    head: usize,
    next_seq: u64,
    density_dirty: bool,
    priorities_ready: bool,
    uniform_mix: T,
    /// Cumulative sampling distribution over slots in insertion order.
    cdf: Vec<T>,
    cdf_slots: Vec<usize>,
    per: Option<PerState<T>>,
}

/// One line of a buffer snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotRecord<T> {
    pub seq: u64,
    #[serde(flatten)]
    pub trajectory: Trajectory<T>,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, horizon: usize, strategy: Strategy, per: PerConfig<T>) -> Result<Self> {
        if capacity == 0 {
            return Err(CdpError::InvalidConfig("buffer capacity must be >= 1".into()));
        }
        if horizon == 0 {
            return Err(CdpError::InvalidConfig("horizon must be >= 1".into()));
        }
        let per = if strategy == Strategy::Per {
            per.validate()?;
            Some(PerState {
                config: per,
                beta: per.beta,
                tree: SumTree::new(capacity * horizon)?,
                min_tree: MinTree::new(capacity * horizon),
                max_priority: T::one(),
            })
        } else {
            None
        };
        Ok(Self {
            capacity,
            horizon,
            strategy,
            slots: Vec::with_capacity(capacity),
            seq: Vec::with_capacity(capacity),
            head: 0,
            next_seq: 0,
            density_dirty: false,
            priorities_ready: false,
            uniform_mix: T::zero(),
            cdf: Vec::new(),
            cdf_slots: Vec::new(),
            per,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn is_density_dirty(&self) -> bool {
        self.density_dirty
    }

    /// Whether CDP priorities have been computed at least once.
    pub fn has_priorities(&self) -> bool {
        self.priorities_ready
    }

    /// Mixes `λ/N` into the CDP distribution: `(1-λ)·p + λ/N`.
    pub fn set_uniform_mix(&mut self, lambda: T) -> Result<()> {
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(CdpError::InvalidConfig("uniform mix must lie in [0, 1]".into()));
        }
        self.uniform_mix = lambda;
        if self.priorities_ready && !self.density_dirty {
            self.rebuild_cdf();
        }
        Ok(())
    }

    /// Sets the PER importance-sampling exponent (annealed by the caller).
    pub fn set_per_beta(&mut self, beta: T) {
        if let Some(per) = self.per.as_mut() {
            per.beta = beta.max(T::zero()).min(T::one());
        }
    }

    /// Slots in insertion order, oldest first.
    pub fn ordered_slots(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.slots.len();
        let start = if n < self.capacity { 0 } else { self.head };
        (0..n).map(move |i| (start + i) % n)
    }

    /// Slot of the `i`-th oldest trajectory.
    pub fn slot_at(&self, i: usize) -> usize {
        let n = self.slots.len();
        if n < self.capacity {
            i
        } else {
            (self.head + i) % n
        }
    }

    /// Trajectories in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Trajectory<T>> + '_ {
        self.ordered_slots().map(move |s| &self.slots[s])
    }

    pub fn get(&self, slot: usize) -> Option<&Trajectory<T>> {
        self.slots.get(slot)
    }

    pub fn get_mut(&mut self, slot: usize) -> Option<&mut Trajectory<T>> {
        self.slots.get_mut(slot)
    }

    /// Insertion sequence number of the trajectory in `slot`.
    pub fn sequence(&self, slot: usize) -> Option<u64> {
        self.seq.get(slot).copied()
    }

    /// Achieved-goal features of every stored trajectory, insertion order.
    pub fn features(&self) -> Vec<Vec<T>> {
        self.iter().map(|t| t.achieved_goal_feature.clone()).collect()
    }

    /// Stores a trajectory, predicting its density first when a model is
    /// given (otherwise a uniform placeholder). Evicts the oldest trajectory
    /// at capacity. Returns the slot written.
    pub fn store(&mut self, mut trajectory: Trajectory<T>, model: Option<&MixtureModel<T>>) -> Result<usize> {
        if trajectory.horizon() != self.horizon {
            return Err(CdpError::HorizonMismatch {
                expected: self.horizon,
                got: trajectory.horizon(),
            });
        }
        match model {
            Some(m) => {
                let l = m.log_density(&trajectory.achieved_goal_feature)?;
                trajectory.log_density = l;
                trajectory.raw_density = clamp_density(l.exp(), m.density_floor());
            }
            None => {
                trajectory.log_density = T::zero();
                trajectory.raw_density = T::one();
            }
        }
        let slot = if self.slots.len() < self.capacity {
            self.slots.push(trajectory);
            self.seq.push(self.next_seq);
            self.slots.len() - 1
        } else {
            let slot = self.head;
            self.slots[slot] = trajectory;
            self.seq[slot] = self.next_seq;
            self.head = (self.head + 1) % self.capacity;
            slot
        };
        self.next_seq += 1;
        self.density_dirty = true;
        if let Some(per) = self.per.as_mut() {
            let p = per.max_priority;
            for t in 0..self.horizon {
                per.tree.update(slot * self.horizon + t, p)?;
                per.min_tree.update(slot * self.horizon + t, p);
            }
        }
        Ok(slot)
    }

    /// Normalizes the stored densities over the buffer, sets complements and
    /// rank probabilities, and clears the dirty flag. Uses the densities
    /// already attached to each trajectory; see [`Self::refresh_densities`]
    /// to re-predict them first.
    pub fn recompute_priorities(&mut self) -> Result<()> {
        if self.slots.is_empty() {
            return Err(CdpError::EmptyBuffer);
        }
        let order: Vec<usize> = self.ordered_slots().collect();
        let logs: Vec<T> = order.iter().map(|&s| self.slots[s].log_density).collect();
        let norm = log_sum_exp(&logs);
        // ranking on -log ρ orders exactly like 1 - ρ/Σρ but stays strict
        // where the normalized densities underflow to equal values
        let keys: Vec<T> = logs.iter().map(|&l| -l).collect();
        let probs: Vec<T> = probabilities_from_ranks(&ascending_ranks(&keys)?)?;
        for ((&slot, &l), &p) in order.iter().zip(&logs).zip(&probs) {
            let tr = &mut self.slots[slot];
            tr.normalized_density = (l - norm).exp();
            tr.complement = T::one() - tr.normalized_density;
            tr.priority = p;
        }
        self.density_dirty = false;
        self.priorities_ready = true;
        self.rebuild_cdf();
        Ok(())
    }

    /// Re-predicts every stored density under `model`, then recomputes
    /// priorities.
    pub fn refresh_densities(&mut self, model: &MixtureModel<T>) -> Result<()> {
        if self.slots.is_empty() {
            return Err(CdpError::EmptyBuffer);
        }
        for tr in self.slots.iter_mut() {
            let l = model.log_density(&tr.achieved_goal_feature)?;
            tr.log_density = l;
            tr.raw_density = clamp_density(l.exp(), model.density_floor());
        }
        self.recompute_priorities()
    }

    fn rebuild_cdf(&mut self) {
        let order: Vec<usize> = self.ordered_slots().collect();
        let n = T::from_count(order.len());
        let lambda = self.uniform_mix;
        let mut acc = T::zero();
        self.cdf.clear();
        for &slot in &order {
            acc += (T::one() - lambda) * self.slots[slot].priority + lambda / n;
            self.cdf.push(acc);
        }
        self.cdf_slots = order;
    }

    /// Per-trajectory sampling probabilities in insertion order under the
    /// current strategy (PER: summed transition mass of each trajectory).
    pub fn sampling_probabilities(&self) -> Result<Vec<T>> {
        if self.slots.is_empty() {
            return Err(CdpError::EmptyBuffer);
        }
        let n = T::from_count(self.slots.len());
        match self.strategy {
            Strategy::Uniform => Ok(vec![n.recip(); self.slots.len()]),
            Strategy::Cdp if !self.priorities_ready => Ok(vec![n.recip(); self.slots.len()]),
            Strategy::Cdp => {
                if self.density_dirty {
                    return Err(CdpError::DirtyDensities);
                }
                let lambda = self.uniform_mix;
                Ok(self
                    .ordered_slots()
                    .map(|s| (T::one() - lambda) * self.slots[s].priority + lambda / n)
                    .collect())
            }
            Strategy::Per => {
                let per = self.per.as_ref().expect("PER state exists for the PER strategy");
                let total = per.tree.total();
                Ok(self
                    .ordered_slots()
                    .map(|s| {
                        (0..self.horizon)
                            .map(|t| per.tree.get(s * self.horizon + t))
                            .sum::<T>()
                            / total
                    })
                    .collect())
            }
        }
    }

    /// Draws `count` trajectories with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Draw<T>>> {
        if self.slots.is_empty() {
            return Err(CdpError::EmptyBuffer);
        }
        let n = self.slots.len();
        let uniform = |rng: &mut R| {
            let slot = self.slot_at(rng.random_range(0..n));
            Draw {
                slot,
                step: None,
                weight: T::one(),
            }
        };
        match self.strategy {
            Strategy::Uniform => Ok((0..count).map(|_| uniform(rng)).collect()),
            Strategy::Cdp if !self.priorities_ready => Ok((0..count).map(|_| uniform(rng)).collect()),
            Strategy::Cdp => {
                if self.density_dirty {
                    return Err(CdpError::DirtyDensities);
                }
                let total = *self.cdf.last().expect("cdf built for a non-empty buffer");
                Ok((0..count)
                    .map(|_| {
                        let u = T::c(rng.random::<f64>()) * total;
                        let mut i = self.cdf.partition_point(|&c| c <= u);
                        if i >= n {
                            // rounding at the top edge: last entry with mass
                            i = (0..n)
                                .rev()
                                .find(|&j| self.cdf[j] > if j == 0 { T::zero() } else { self.cdf[j - 1] })
                                .unwrap_or(n - 1);
                        }
                        Draw {
                            slot: self.cdf_slots[i],
                            step: None,
                            weight: T::one(),
                        }
                    })
                    .collect())
            }
            Strategy::Per => {
                let per = self.per.as_ref().expect("PER state exists for the PER strategy");
                let total = per.tree.total();
                let stored = T::from_count(n * self.horizon);
                let max_weight = (stored * per.min_tree.min() / total).powf(-per.beta);
                let mut draws = Vec::with_capacity(count);
                for _ in 0..count {
                    let u = T::c(rng.random::<f64>()) * total;
                    let u = if u >= total { total * T::c(1.0 - 1e-12) } else { u };
                    let leaf = per.tree.sample(u)?;
                    let prob = per.tree.get(leaf) / total;
                    let weight = (stored * prob).powf(-per.beta) / max_weight;
                    draws.push(Draw {
                        slot: leaf / self.horizon,
                        step: Some(leaf % self.horizon),
                        weight,
                    });
                }
                Ok(draws)
            }
        }
    }

    /// Draws `count` trajectories with replacement under the buffer strategy.
    pub fn sample_trajectories<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<&Trajectory<T>>> {
        Ok(self
            .sample_indices(count, rng)?
            .into_iter()
            .map(|d| &self.slots[d.slot])
            .collect())
    }

    /// Writes fresh TD-error priorities for sampled transitions (PER only;
    /// a no-op for other strategies). Returns the number of leaf writes.
    pub fn update_td_priorities(&mut self, draws: &[(usize, usize)], td_errors: &[T]) -> Result<usize> {
        let horizon = self.horizon;
        let Some(per) = self.per.as_mut() else {
            return Ok(0);
        };
        for (&(slot, step), &td) in draws.iter().zip(td_errors) {
            if slot >= self.slots.len() || step >= horizon {
                return Err(CdpError::IndexOutOfBounds {
                    index: slot * horizon + step,
                    len: self.slots.len() * horizon,
                });
            }
            let p = per_priority_from_td(td, &per.config);
            per.tree.update(slot * horizon + step, p)?;
            per.min_tree.update(slot * horizon + step, p);
            if p > per.max_priority {
                per.max_priority = p;
            }
        }
        Ok(draws.len().min(td_errors.len()))
    }

    /// Current PER leaf priority of one transition.
    pub fn transition_priority(&self, slot: usize, step: usize) -> Option<T> {
        self.per.as_ref().map(|p| p.tree.get(slot * self.horizon + step))
    }

    /// Writes one JSON object per trajectory (insertion order).
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        for slot in self.ordered_slots() {
            let rec = SnapshotRecord {
                seq: self.seq[slot],
                trajectory: self.slots[slot].clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parses a snapshot written by [`ReplayBuffer::write_snapshot`].
pub fn read_snapshot<T: Scalar, R: BufRead>(input: R) -> Result<Vec<SnapshotRecord<T>>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
