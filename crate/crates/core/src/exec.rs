//! Execution helpers: a worker pool plus order-fixed reductions.
//!
//! All data-parallel loops in this crate go through these helpers. Work is
//! split into fixed-size chunks and partial results are combined in chunk
//! index order, so results are bit-identical regardless of thread count and
//! identical between the `parallel` feature and the sequential fallback.

/// Chunk size for deterministic reductions. Fixed so that the floating-point
/// summation order does not depend on the worker count.
pub const REDUCTION_CHUNK: usize = 256;

/// Resolves a `--jobs` style setting: 0 means all available cores.
pub fn effective_jobs(jobs: usize) -> usize {
    if jobs == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        jobs
    }
}

/// Runs `f` inside a worker pool with `jobs` threads (0 = all cores).
#[cfg(feature = "parallel")]
pub fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(effective_jobs(jobs))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_pool<R: Send>(_jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn par_map_indices<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_indices<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Folds `eval(0..n)` with a fixed reduction order: items are accumulated
/// sequentially within [`REDUCTION_CHUNK`]-sized chunks (chunks may run in
/// parallel), then chunk partials are combined in chunk index order.
pub fn chunked_fold<A: Send>(
    n: usize,
    zero: impl Fn() -> A + Sync + Send,
    eval: impl Fn(usize) -> A + Sync + Send,
    add: impl Fn(A, A) -> A + Sync + Send,
) -> A {
    let n_chunks = n.div_ceil(REDUCTION_CHUNK).max(1);
    let partials = par_map_indices(n_chunks, |c| {
        let lo = c * REDUCTION_CHUNK;
        let hi = ((c + 1) * REDUCTION_CHUNK).min(n);
        let mut acc = zero();
        for i in lo..hi {
            acc = add(acc, eval(i));
        }
        acc
    });
    partials.into_iter().fold(zero(), |a, b| add(a, b))
}
