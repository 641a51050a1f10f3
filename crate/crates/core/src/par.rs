//! Data-parallel map helpers.
//!
//! Meta-batch task evaluations, Monte-Carlo estimators, and sweep grids are
//! all independent units of work indexed by `0..n`. [`map_indices`] fans them
//! out over the rayon pool when the `parallel` feature is enabled (the
//! default) and falls back to a plain sequential loop otherwise. Results come
//! back in index order either way, and callers reduce them sequentially, so
//! outputs are identical across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indices_seq(n, f)
    }
}

/// Sequential reference implementation of [`map_indices`]; always available
/// so benches can compare the two directly.
pub fn map_indices_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let a = map_indices(100, |i| i * i);
        let b = map_indices_seq(100, |i| i * i);
        assert_eq!(a, b);
    }
}
