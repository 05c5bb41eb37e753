//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) these fan work out over the rayon
//! thread pool; without it they degrade to plain sequential loops. Both paths
//! produce identical results, so callers never branch on the feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to each equally sized mutable chunk of `data`, passing the
/// chunk index. Chunks are independent, so order does not matter.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));

    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `0..n` and collects the results in index order.
pub(crate) fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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
