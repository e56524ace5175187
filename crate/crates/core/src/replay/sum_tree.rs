//! Binary sum tree (and its min counterpart) over a power-of-two padded leaf
//! array, stored heap-style with the root at index 1.

use crate::error::{CdpError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct SumTree<T> {
    capacity: usize,
    leaves: usize,
    nodes: Vec<T>,
}

impl<T: Scalar> SumTree<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CdpError::InvalidConfig("sum tree capacity must be >= 1".into()));
        }
        let leaves = capacity.next_power_of_two();
        Ok(Self {
            capacity,
            leaves,
            nodes: vec![T::zero(); 2 * leaves],
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Leaf count after padding to a power of two.
    pub fn padded_capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> T {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> T {
        self.nodes[self.leaves + leaf]
    }

    /// Sets one leaf and recomputes its ancestors.
    pub fn update(&mut self, leaf: usize, priority: T) -> Result<()> {
        if leaf >= self.capacity {
            return Err(CdpError::IndexOutOfBounds {
                index: leaf,
                len: self.capacity,
            });
        }
        if !(priority >= T::zero()) || !priority.is_finite() {
            return Err(CdpError::InvalidPriority(priority.as_f64()));
        }
        let mut node = self.leaves + leaf;
        self.nodes[node] = priority;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
        Ok(())
    }

    /// Leaf whose prefix-sum interval `[S_{i-1}, S_i)` contains `u`.
    pub fn sample(&self, u: T) -> Result<usize> {
        let total = self.total();
        if !(total > T::zero()) {
            return Err(CdpError::EmptyInput("sum tree has no priority mass"));
        }
        if !(u >= T::zero() && u < total) {
            return Err(CdpError::OutOfRange {
                value: u.as_f64(),
                upper: total.as_f64(),
            });
        }
        let mut u = u;
        let mut node = 1;
        while node < self.leaves {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            // the zero-mass guards keep rounding at interval edges from
            // landing on an empty subtree
            if (u < left && left > T::zero()) || !(right > T::zero()) {
                node *= 2;
            } else {
                u -= left;
                node = 2 * node + 1;
            }
        }
        Ok(node - self.leaves)
    }

    /// Internal node values, root first (heap order); exposed for consistency checks.
    pub fn internal_nodes(&self) -> &[T] {
        &self.nodes[1..self.leaves]
    }
}

/// Same layout as [`SumTree`] but tracking the minimum; empty leaves hold `+inf`.
#[derive(Debug, Clone)]
pub struct MinTree<T> {
    leaves: usize,
    nodes: Vec<T>,
}

impl<T: Scalar> MinTree<T> {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![T::infinity(); 2 * leaves],
        }
    }

    pub fn update(&mut self, leaf: usize, value: T) {
        let mut node = self.leaves + leaf;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node].min(self.nodes[2 * node + 1]);
        }
    }

    pub fn min(&self) -> T {
        self.nodes[1]
    }
}
