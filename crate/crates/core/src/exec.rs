//! Data-parallel map over node or trial indices.
//!
//! With the `parallel` feature (default) the map runs on the rayon pool;
//! results are collected in index order, so output is identical to the
//! sequential path as long as each item derives its own RNG stream.
//! [`map_indexed_seq`] is always sequential and exists so benchmarks can
//! compare the two paths inside one build.

#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference path, independent of the `parallel` feature.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}
