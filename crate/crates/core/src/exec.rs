//! Execution chokepoint for the crate's data-parallel loops.
//!
//! Every embarrassingly parallel loop (ensemble realizations, spectrum grid
//! points, fit cost evaluations) funnels through [`map_indexed`]. With the
//! `parallel` feature (default) the map runs on the global rayon pool; without
//! it the same call is a plain sequential iterator. In both cases the output
//! vector is in index order, so everything downstream — reductions, file
//! output, error selection — is bitwise independent of the worker count.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Fallible variant: applies `f` to every index, returning all values in
/// index order, or the error from the *lowest* failing index (deterministic
/// regardless of which worker hit an error first).
pub fn try_map_indexed<T, F>(n: usize, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<T> + Sync + Send,
{
    let results = map_indexed(n, f);
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// Number of workers the parallel build would fan out to (1 when built
/// without the `parallel` feature). Informational only; results never depend
/// on it.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
