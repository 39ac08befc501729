//! Data-parallel helpers with a sequential fallback.
//!
//! All helpers preserve input order in their output so callers can reduce
//! deterministically.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, fanned out over the rayon pool when available.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over consecutive index ranges of at most `chunk` items and
/// returns the per-chunk results in range order.
pub(crate) fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    map_indices(n_chunks, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(n))
    })
}

/// Fallible variant of [`map_indices`]; returns the first error in index order.
pub(crate) fn try_map_indices<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indices(n, f).into_iter().collect()
}

/// Sizes the global worker pool. Must run before any parallel work; `0`
/// keeps the default of one worker per core. Without the `parallel`
/// feature every loop is sequential and only `0` or `1` is accepted.
pub fn set_threads(n: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::invalid(format!("cannot size thread pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        if n > 1 {
            return Err(crate::Error::invalid("built without parallel support"));
        }
        Ok(())
    }
}
