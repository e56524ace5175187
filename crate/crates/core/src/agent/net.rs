//! Fully connected network with tanh hidden units and analytic backprop.
//!
//! All parameters live in one flat vector; layer `l` stores its weights
//! input-major (`w[j * out + i]` connects input `j` to unit `i`) followed by
//! its biases. Batches are row-major `batch × width` slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CdpError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation<T> {
    Identity,
    /// `bound · tanh(z)`.
    ScaledTanh(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Net<T> {
    sizes: Vec<usize>,
    output: OutputActivation<T>,
    params: Vec<T>,
}

/// Activations of every layer from the last forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn new() -> Self {
        Self { batch: 0, acts: Vec::new() }
    }

    /// Network output of the cached pass.
    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Scalar> Net<T> {
    /// Hidden layers use Glorot-uniform `U(±√(6/(fan_in+fan_out)))`, which
    /// keeps tanh activations from shrinking with depth; the output layer
    /// starts small (`U(±3e-3)`) so initial outputs sit near zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation<T>, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(CdpError::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        if let OutputActivation::ScaledTanh(b) = output {
            if !(b > T::zero()) {
                return Err(CdpError::InvalidConfig("action bound must be > 0".into()));
            }
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == layers { 3e-3 } else { (6.0 / (fan_in + fan_out) as f64).sqrt() };
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(T::c(rng.random_range(-bound..bound)));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn output_activation(&self) -> OutputActivation<T> {
        self.output
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Forward pass over a row-major batch; the result is `cache.output()`.
    pub fn forward(&self, input: &[T], batch: usize, cache: &mut ForwardCache<T>) -> Result<()> {
        if input.len() != batch * self.input_dim() {
            return Err(CdpError::DimensionMismatch {
                expected: batch * self.input_dim(),
                got: input.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        cache.batch = batch;
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let x = &before[l];
            let y = &mut after[0];
            y.clear();
            y.reserve(batch * n_out);
            for r in 0..batch {
                y.extend_from_slice(b);
                let row = &mut y[r * n_out..(r + 1) * n_out];
                for (j, &xj) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                    axpy(row, xj, &w[j * n_out..(j + 1) * n_out]);
                }
            }
            if l + 1 < layers {
                T::tanh_in_place(y);
            } else if let OutputActivation::ScaledTanh(bound) = self.output {
                T::tanh_in_place(y);
                y.iter_mut().for_each(|v| *v *= bound);
            }
        }
        Ok(())
    }

    /// Convenience forward returning an owned output.
    pub fn predict(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        let mut cache = ForwardCache::new();
        self.forward(input, batch, &mut cache)?;
        Ok(cache.acts.pop().unwrap_or_default())
    }

    /// Backpropagates `grad_output` (d loss / d output, `batch × out`)
    /// through the cached pass. Parameter gradients are added into
    /// `param_grads` when given; the input gradient is written to
    /// `input_grad` when given.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &[T],
        mut param_grads: Option<&mut [T]>,
        input_grad: Option<&mut Vec<T>>,
    ) -> Result<()> {
        let batch = cache.batch;
        let layers = self.sizes.len() - 1;
        if cache.acts.len() != layers + 1 {
            return Err(CdpError::InvalidConfig("backward without a matching forward pass".into()));
        }
        if grad_output.len() != batch * self.output_dim() {
            return Err(CdpError::DimensionMismatch {
                expected: batch * self.output_dim(),
                got: grad_output.len(),
            });
        }
        if let Some(g) = param_grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(CdpError::DimensionMismatch {
                    expected: self.params.len(),
                    got: g.len(),
                });
            }
        }
        // delta = d loss / d pre-activation of the current layer
        let out = &cache.acts[layers];
        let mut delta: Vec<T> = match self.output {
            OutputActivation::Identity => grad_output.to_vec(),
            OutputActivation::ScaledTanh(bound) => grad_output
                .iter()
                .zip(out)
                .map(|(&g, &y)| {
                    let t = y / bound;
                    g * bound * (T::one() - t * t)
                })
                .collect(),
        };
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let want_input = input_grad.is_some();
        let mut prev = Vec::new();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = offsets[l];
            let x = &cache.acts[l];
            if let Some(g) = param_grads.as_deref_mut() {
                let (gw, gb) = g[w_off..w_off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for r in 0..batch {
                    let d = &delta[r * n_out..(r + 1) * n_out];
                    for (gbi, &di) in gb.iter_mut().zip(d) {
                        *gbi += di;
                    }
                    for (j, &xj) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                        axpy(&mut gw[j * n_out..(j + 1) * n_out], xj, d);
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let w = &self.params[w_off..w_off + n_in * n_out];
            prev.clear();
            prev.reserve(batch * n_in);
            for r in 0..batch {
                let d = &delta[r * n_out..(r + 1) * n_out];
                for j in 0..n_in {
                    prev.push(dot(&w[j * n_out..(j + 1) * n_out], d));
                }
            }
            if l > 0 {
                // through the tanh of the layer below
                for (p, &a) in prev.iter_mut().zip(x) {
                    *p *= T::one() - a * a;
                }
            }
            std::mem::swap(&mut delta, &mut prev);
        }
        if let Some(ig) = input_grad {
            ig.clear();
            ig.extend_from_slice(&delta);
        }
        Ok(())
    }

    /// `self ← (1-τ)·self + τ·source`.
    pub fn blend_from(&mut self, source: &Net<T>, tau: T) -> Result<()> {
        if source.sizes != self.sizes {
            return Err(CdpError::InvalidConfig("polyak update between differently shaped nets".into()));
        }
        let keep = T::one() - tau;
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = keep * *t + tau * s;
        }
        Ok(())
    }
}

const LANES: usize = 8;

/// `y += a·x` over the common length.
#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    let n = y.len().min(x.len());
    let (y, x) = (&mut y[..n], &x[..n]);
    let mut yc = y.chunks_exact_mut(LANES);
    let mut xc = x.chunks_exact(LANES);
    for (yy, xx) in (&mut yc).zip(&mut xc) {
        let yy: &mut [T; LANES] = yy.try_into().expect("exact chunk");
        let xx: &[T; LANES] = xx.try_into().expect("exact chunk");
        for k in 0..LANES {
            yy[k] += a * xx[k];
        }
    }
    for (yy, &xx) in yc.into_remainder().iter_mut().zip(xc.remainder()) {
        *yy += a * xx;
    }
}

/// Dot product with lane-wise partial sums (fixed summation order).
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let mut ac = a.chunks_exact(LANES);
    let mut bc = b.chunks_exact(LANES);
    for (aa, bb) in (&mut ac).zip(&mut bc) {
        let aa: &[T; LANES] = aa.try_into().expect("exact chunk");
        let bb: &[T; LANES] = bb.try_into().expect("exact chunk");
        for k in 0..LANES {
            acc[k] += aa[k] * bb[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ac.remainder().iter().zip(bc.remainder()) {
        tail += x * y;
    }
    let mut s = tail;
    for v in acc {
        s += v;
    }
    s
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
