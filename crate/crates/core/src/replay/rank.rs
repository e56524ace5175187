//! Rank-based replay probabilities.
//!
//! Trajectories are ranked ascending in their complementary density, ranks
//! run `0..N`, and the replay probability is `rank / Σ rank` with
//! `Σ rank = N(N-1)/2`. The least curious trajectory therefore has
//! probability exactly zero.

use std::cmp::Ordering;

use crate::error::{CdpError, Result};
use crate::scalar::Scalar;

/// Ranks ascending by `keys`; equal keys keep their input order, so the
/// earlier entry gets the lower rank.
pub fn ascending_ranks<T: Scalar>(keys: &[T]) -> Result<Vec<usize>> {
    if keys.iter().any(|k| k.is_nan()) {
        return Err(CdpError::NonFinite("NaN rank key".into()));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    // stable sort: ties resolved by position
    order.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0; keys.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank;
    }
    Ok(ranks)
}

/// Turns ranks into `rank / (N(N-1)/2)`; a single entry gets probability 1.
pub fn probabilities_from_ranks<T: Scalar>(ranks: &[usize]) -> Result<Vec<T>> {
    let n = ranks.len();
    match n {
        0 => Err(CdpError::EmptyInput("no trajectories to rank")),
        1 => Ok(vec![T::one()]),
        _ => {
            let total = T::from_count(n * (n - 1) / 2);
            Ok(ranks.iter().map(|&r| T::from_count(r) / total).collect())
        }
    }
}

/// Replay probabilities from complementary densities, in input (insertion)
/// order.
pub fn rank_probabilities<T: Scalar>(complements: &[T]) -> Result<Vec<T>> {
    if complements.is_empty() {
        return Err(CdpError::EmptyInput("no trajectories to rank"));
    }
    probabilities_from_ranks(&ascending_ranks(complements)?)
}
