use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CdpError, Result};
use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T, size: usize) -> Self {
        Self {
            lr,
            beta1: T::c(0.9),
            beta2: T::c(0.999),
            eps: T::c(1e-8),
            step: 0,
            m: vec![T::zero(); size],
            v: vec![T::zero(); size],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> Result<T> {
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt();
    if !norm.is_finite() {
        return Err(CdpError::NonFinite("gradient norm".into()));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    Ok(norm)
}

/// Running per-coordinate mean and standard deviation with clipped output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Normalizer<T> {
    count: u64,
    sum: Vec<T>,
    sum_sq: Vec<T>,
    mean: Vec<T>,
    std: Vec<T>,
    /// Lower bound on the standard deviation.
    pub eps: T,
    /// Normalized values are clipped to `±clip`.
    pub clip: T,
}

impl<T: Scalar> Normalizer<T> {
    pub fn new(dim: usize, eps: T, clip: T) -> Self {
        Self {
            count: 0,
            sum: vec![T::zero(); dim],
            sum_sq: vec![T::zero(); dim],
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
            eps,
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn observe(&mut self, x: &[T]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        for ((s, q), &v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(x) {
            *s += v;
            *q += v * v;
        }
        self.count += 1;
        Ok(())
    }

    /// Refreshes mean and std from the accumulated sums.
    pub fn recompute(&mut self) {
        if self.count == 0 {
            return;
        }
        let n = T::c(self.count as f64);
        for i in 0..self.dim() {
            let mean = self.sum[i] / n;
            let var = (self.sum_sq[i] / n - mean * mean).max(T::zero());
            self.mean[i] = mean;
            self.std[i] = var.sqrt().max(self.eps);
        }
    }

    /// Appends the normalized, clipped `x` to `out`.
    pub fn normalize_into(&self, x: &[T], out: &mut Vec<T>) {
        for ((&v, &m), &s) in x.iter().zip(&self.mean).zip(&self.std) {
            out.push(((v - m) / s).max(-self.clip).min(self.clip));
        }
    }
}
