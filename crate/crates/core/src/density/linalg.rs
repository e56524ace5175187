//! Small dense symmetric-matrix helpers on row-major `D×D` slices.

use crate::scalar::Scalar;

/// Lower Cholesky factor of a symmetric positive-definite matrix, or `None`
/// if a pivot is not positive.
pub fn cholesky<T: Scalar>(a: &[T], dim: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return None;
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    Some(l)
}

/// `log |A|` from the Cholesky factor of `A`.
pub fn log_det_from_cholesky<T: Scalar>(l: &[T], dim: usize) -> T {
    (0..dim).map(|i| l[i * dim + i].ln()).sum::<T>() * T::c(2.0)
}

/// Solves `L y = b` in place.
pub fn forward_substitute<T: Scalar>(l: &[T], dim: usize, b: &mut [T]) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}

/// `vᵀ A⁻¹ v` given the Cholesky factor of `A`.
pub fn inverse_quadratic_form<T: Scalar>(l: &[T], dim: usize, v: &[T], scratch: &mut [T]) -> T {
    scratch.copy_from_slice(v);
    forward_substitute(l, dim, scratch);
    scratch.iter().map(|&x| x * x).sum()
}

/// `A⁻¹` given the Cholesky factor of `A`.
pub fn inverse_from_cholesky<T: Scalar>(l: &[T], dim: usize) -> Vec<T> {
    // L⁻¹ column by column, then A⁻¹ = L⁻ᵀ L⁻¹
    let mut linv = vec![T::zero(); dim * dim];
    let mut e = vec![T::zero(); dim];
    for j in 0..dim {
        e.iter_mut().for_each(|x| *x = T::zero());
        e[j] = T::one();
        forward_substitute(l, dim, &mut e);
        for i in 0..dim {
            linv[i * dim + j] = e[i];
        }
    }
    let mut inv = vec![T::zero(); dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = T::zero();
            for k in i.max(j)..dim {
                s += linv[k * dim + i] * linv[k * dim + j];
            }
            inv[i * dim + j] = s;
            inv[j * dim + i] = s;
        }
    }
    inv
}
